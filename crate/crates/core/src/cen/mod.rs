//! Conditional-expectation network (CEN).
//!
//! Unobserved feature components are replaced by a mask: a continuous donor
//! value close to the origin whose prediction matches the null model, and a
//! fictitious extra level for categorical features. A surrogate network
//! trained on full, fully masked and randomly masked copies of the learning
//! data then answers `μ_C(x) = E[μ(X) | X_C = x_C]` for any coalition `C`
//! with one forward pass on the masked input.

mod triplicate;

use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use triplicate::{build_triplicated, RowKind, TriplicatedSet};

use crate::data::{Coalition, Dataset, Instance, Slot};
use crate::error::{Error, Result};
use crate::nn::{
    self, mean_poisson_deviance, train_with_hook, Loss, ModelContext, Network, NetworkConfig,
    TrainConfig, TrainLog,
};

/// Default relative tolerance for `|μ(x_i)/μ0 - 1|` when choosing the mask.
pub const DEFAULT_DELTA: f64 = 0.001;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mu0Weighting {
    /// Plain mean of the base predictions.
    #[default]
    Unweighted,
    /// Exposure-weighted mean of the base predictions.
    Exposure,
}

/// Mask substituted for unobserved components, with its null-model value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskVector {
    /// Standardized donor values, one per continuous feature.
    pub continuous: Vec<f64>,
    /// Fictitious level index (`K`, the declared level count) per categorical
    /// feature.
    pub categorical: Vec<usize>,
    pub mu0: f64,
    pub donor_row: usize,
    pub delta: f64,
    layout: Vec<Slot>,
}

impl MaskVector {
    pub fn new(
        continuous: Vec<f64>,
        categorical: Vec<usize>,
        mu0: f64,
        layout: Vec<Slot>,
    ) -> Result<Self> {
        let nc = layout.iter().filter(|s| matches!(s, Slot::Continuous(_))).count();
        if nc != continuous.len() || layout.len() - nc != categorical.len() {
            return Err(Error::Shape("mask widths do not match the feature layout".into()));
        }
        if continuous.iter().any(|v| !v.is_finite()) || !mu0.is_finite() {
            return Err(Error::Numeric("mask entries must be finite".into()));
        }
        Ok(Self {
            continuous,
            categorical,
            mu0,
            donor_row: 0,
            delta: 0.0,
            layout,
        })
    }

    pub fn q(&self) -> usize {
        self.layout.len()
    }

    pub fn layout(&self) -> &[Slot] {
        &self.layout
    }

    /// The fully masked input.
    pub fn instance(&self) -> Instance {
        Instance {
            continuous: self.continuous.clone(),
            categorical: self.categorical.clone(),
        }
    }
}

/// Chooses `μ0` and the mask: among rows with `|μ(x_i)/μ0 - 1| < delta`, the
/// one whose standardized continuous part has the smallest Euclidean norm.
/// Without continuous features no tolerance applies.
pub fn select_mask(
    base: &Network,
    data: &Dataset,
    delta: f64,
    weighting: Mu0Weighting,
) -> Result<MaskVector> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("mask selection needs data".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let preds = base.predict_dataset(data)?;
    let mu0 = match weighting {
        Mu0Weighting::Unweighted => preds.iter().sum::<f64>() / preds.len() as f64,
        Mu0Weighting::Exposure => {
            let v = data.exposure();
            preds.iter().zip(v).map(|(p, w)| p * w).sum::<f64>() / v.iter().sum::<f64>()
        }
    };
    let gap = |p: f64| (p / mu0 - 1.0).abs();
    let donor = if data.schema().n_continuous() == 0 {
        // The donor supplies no mask values; record the row closest to μ0.
        (0..preds.len()).min_by(|&a, &b| gap(preds[a]).total_cmp(&gap(preds[b]))).expect("non-empty")
    } else {
        preds
            .iter()
            .enumerate()
            .filter(|(_, p)| gap(**p) < delta)
            .map(|(i, _)| (i, data.continuous_row(i).iter().map(|v| v * v).sum::<f64>()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .ok_or(Error::NoMaskCandidate { delta, mu0 })?
    };

    let mut mask = MaskVector::new(
        data.continuous_row(donor).to_vec(),
        data.schema().level_counts(),
        mu0,
        data.schema().slots(),
    )?;
    mask.donor_row = donor;
    mask.delta = delta;
    Ok(mask)
}

/// `x` with every component outside `c` replaced by the mask.
pub fn apply_mask(x: &Instance, c: Coalition, mask: &MaskVector) -> Instance {
    let mut out = x.clone();
    mask_in_place(&mut out, c, mask);
    out
}

pub(crate) fn mask_in_place(x: &mut Instance, c: Coalition, mask: &MaskVector) {
    for (j, slot) in mask.layout.iter().enumerate() {
        if c.contains(j) {
            continue;
        }
        match *slot {
            Slot::Continuous(k) => x.continuous[k] = mask.continuous[k],
            Slot::Categorical(k) => x.categorical[k] = mask.categorical[k],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenConfig {
    pub train: TrainConfig,
    /// Surrogate architecture; defaults to the base model's with the extra
    /// fictitious level.
    #[serde(default)]
    pub network: Option<NetworkConfig>,
    pub delta: f64,
    #[serde(default)]
    pub mu0_weighting: Mu0Weighting,
    /// Initialize the surrogate from the base model's weights when shapes allow.
    pub warm_start: bool,
    /// Redraw the random coalitions of the masked block before every epoch.
    #[serde(default)]
    pub resample_per_epoch: bool,
    pub seed: u64,
}

impl Default for CenConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                loss: Loss::SquaredError,
                ..TrainConfig::default()
            },
            network: None,
            delta: DEFAULT_DELTA,
            mu0_weighting: Mu0Weighting::Unweighted,
            warm_start: true,
            resample_per_epoch: false,
            seed: 0,
        }
    }
}

/// Mean Poisson deviances of the null model, the base model and the
/// surrogate's fully masked and unmasked predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub null: f64,
    pub full: f64,
    pub surrogate_null: f64,
    pub surrogate_full: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub warm_started: bool,
    pub notice: Option<String>,
    pub log: TrainLog,
    pub calibration: Calibration,
}

/// Surrogate network plus the mask it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenModel {
    pub surrogate: Network,
    pub mask: MaskVector,
    pub base_fingerprint: String,
}

/// Copies the base weights into a surrogate of the same shape, appending a
/// zero embedding row for the fictitious level where the base lacks one.
fn warm_start_from(base: &Network, surrogate: &Network) -> Option<Network> {
    let (b, s) = (base.config(), surrogate.config());
    if b.hidden_sizes != s.hidden_sizes
        || b.embedding_dim != s.embedding_dim
        || b.output != s.output
        || b.activation != s.activation
        || base.n_continuous() != surrogate.n_continuous()
        || base.level_counts() != surrogate.level_counts()
    {
        return None;
    }
    let mut out = surrogate.clone();
    let dim = s.embedding_dim;
    let target = out.params_mut();
    for (k, table) in target.embeddings.iter_mut().enumerate() {
        let declared = base.level_counts()[k] * dim;
        table[..declared].copy_from_slice(&base.params().embeddings[k][..declared]);
        table[declared..].iter_mut().for_each(|v| *v = 0.0);
    }
    for (dst, src) in target.layers.iter_mut().zip(&base.params().layers) {
        dst.weights.copy_from_slice(&src.weights);
        dst.bias.copy_from_slice(&src.bias);
    }
    Some(out)
}

/// Fits the surrogate with squared error against the triplicated targets.
pub fn fit_cen(base: &Network, data: &Dataset, cfg: &CenConfig) -> Result<(CenModel, FitReport)> {
    let mask = select_mask(base, data, cfg.delta, cfg.mu0_weighting)?;
    let mut set = build_triplicated(base, data, &mask, cfg.seed)?;

    let surrogate_cfg = cfg.network.clone().unwrap_or_else(|| NetworkConfig {
        extra_level: true,
        ..base.config().clone()
    });
    if !surrogate_cfg.extra_level && !data.schema().level_counts().is_empty() {
        return Err(Error::InvalidArgument(
            "the surrogate needs extra_level for categorical masking".into(),
        ));
    }
    let cold = Network::for_schema(surrogate_cfg, data.schema(), cfg.seed.wrapping_add(1))?;
    let (start, warm_started, notice) = if cfg.warm_start {
        match warm_start_from(base, &cold) {
            Some(net) => (net, true, None),
            None => {
                let msg = "base model shape differs from the surrogate; cold start".to_string();
                info!("{msg}");
                (cold, false, Some(msg))
            }
        }
    } else {
        (cold, false, None)
    };

    let train_cfg = TrainConfig {
        loss: Loss::SquaredError,
        ..cfg.train.clone()
    };
    let resample = cfg.resample_per_epoch;
    let seed = cfg.seed;
    let masked_rows: Vec<usize> = (0..set.len()).filter(|&r| set.kinds[r] == RowKind::Masked).collect();
    let sources = set.source_rows.clone();
    let (surrogate, log) = train_with_hook(&start, &mut set.samples, &train_cfg, None, |epoch, samples| {
        if resample && epoch > 1 {
            triplicate::redraw_masked(data, &mask, samples, &masked_rows, &sources, seed, epoch);
        }
    })?;

    let model = CenModel {
        surrogate,
        mask,
        base_fingerprint: base.fingerprint(),
    };
    let calibration = calibration(&model, base, data)?;
    Ok((
        model,
        FitReport {
            warm_started,
            notice,
            log,
            calibration,
        },
    ))
}

/// Calibration losses of `cen` against `base` on `data`.
pub fn calibration(cen: &CenModel, base: &Network, data: &Dataset) -> Result<Calibration> {
    let full_preds = base.predict_dataset(data)?;
    let surrogate_full = cen.surrogate.predict_dataset(data)?;
    let surrogate_null_value = cen.query(&cen.mask.instance(), Coalition::empty(cen.q()))?;
    Ok(Calibration {
        null: mean_poisson_deviance(data, &vec![cen.mask.mu0; data.n()])?,
        full: mean_poisson_deviance(data, &full_preds)?,
        surrogate_null: mean_poisson_deviance(data, &vec![surrogate_null_value; data.n()])?,
        surrogate_full: mean_poisson_deviance(data, &surrogate_full)?,
    })
}

const CEN_FORMAT: &str = "condexp-cen";

impl CenModel {
    pub fn q(&self) -> usize {
        self.mask.q()
    }

    /// Surrogate estimate of `μ_C(x)`.
    pub fn query(&self, x: &Instance, c: Coalition) -> Result<f64> {
        if c.q() != self.q() {
            return Err(Error::Shape(format!(
                "coalition over q = {} for a model over q = {}",
                c.q(),
                self.q()
            )));
        }
        if x.continuous.len() != self.mask.continuous.len()
            || x.categorical.len() != self.mask.categorical.len()
        {
            return Err(Error::Shape("instance widths do not match the model".into()));
        }
        let masked = apply_mask(x, c, &self.mask);
        self.surrogate.predict(&masked)
    }

    /// `μ_C(x_i)` for every row of `data`.
    pub fn query_dataset(&self, data: &Dataset, c: Coalition) -> Result<Vec<f64>> {
        (0..data.n())
            .into_par_iter()
            .map(|i| self.query(&data.instance(i), c))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>, context: &ModelContext) -> Result<()> {
        #[derive(Serialize)]
        struct Body<'a> {
            context: &'a ModelContext,
            model: &'a CenModel,
        }
        nn::write_versioned(path.as_ref(), CEN_FORMAT, &Body { context, model: self })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(CenModel, ModelContext)> {
        #[derive(Deserialize)]
        struct Body {
            context: ModelContext,
            model: CenModel,
        }
        let path = path.as_ref();
        let body: Body = nn::read_versioned(path, CEN_FORMAT)?;
        body.context.check(path)?;
        let corrupt = |message: String| Error::Corrupt {
            path: path.to_path_buf(),
            message,
        };
        body.model.surrogate.validate().map_err(|e| corrupt(e.to_string()))?;
        if body.model.mask.layout != body.context.schema.slots() {
            return Err(corrupt("mask layout does not match the schema".into()));
        }
        Ok((body.model, body.context))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSchema, FeatureSpec};
    use crate::nn::{Dense, OutputActivation};

    fn schema(q: usize) -> FeatureSchema {
        FeatureSchema::new(
            (0..q).map(|j| FeatureSpec::continuous(format!("x{j}"))).collect(),
            "y",
            None,
        )
        .unwrap()
    }

    /// Exponential-output network with log-prediction close to `w · x`: one
    /// tanh unit driven in its near-linear range.
    fn linear_rate(weights: &[f64]) -> Network {
        let cfg = NetworkConfig {
            hidden_sizes: vec![1],
            output: OutputActivation::Exponential,
            embedding_dim: 1,
            extra_level: false,
            ..NetworkConfig::default()
        };
        let mut net = Network::zeroed(cfg, weights.len(), vec![]).unwrap();
        let p = net.params_mut();
        p.layers[0] = Dense {
            inputs: weights.len(),
            outputs: 1,
            weights: weights.iter().map(|w| w * 1e-3).collect(),
            bias: vec![0.0],
        };
        p.layers[1].weights = vec![1e3];
        net
    }

    #[test]
    fn apply_mask_componentwise() {
        let layout = schema(3).slots();
        let mask = MaskVector::new(vec![0.0; 3], vec![], 1.0, layout).unwrap();
        let x = Instance {
            continuous: vec![1.0, 2.0, 3.0],
            categorical: vec![],
        };
        let c = Coalition::from_indices(3, &[0, 2]).unwrap();
        assert_eq!(apply_mask(&x, c, &mask).continuous, vec![1.0, 0.0, 3.0]);
        assert_eq!(apply_mask(&x, Coalition::full(3), &mask), x);
        assert_eq!(apply_mask(&x, Coalition::empty(3), &mask), mask.instance());
    }

    #[test]
    fn apply_mask_uses_fictitious_level() {
        let s = FeatureSchema::new(
            vec![
                FeatureSpec::categorical("a", ["p", "q", "r"]),
                FeatureSpec::continuous("b"),
            ],
            "y",
            None,
        )
        .unwrap();
        let mask = MaskVector::new(vec![0.25], s.level_counts(), 1.0, s.slots()).unwrap();
        let x = Instance {
            continuous: vec![-1.0],
            categorical: vec![1],
        };
        let only_b = Coalition::from_indices(2, &[1]).unwrap();
        let m = apply_mask(&x, only_b, &mask);
        assert_eq!(m.categorical, vec![3]);
        assert_eq!(m.continuous, vec![-1.0]);
    }

    #[test]
    fn mask_picks_smallest_norm_qualifying_row() {
        // log μ = 0.5 x0: rows with x0 = 0 have μ = 1 = μ0 exactly when the
        // x0 column is symmetric.
        let raw = vec![
            -2.0, 5.0, //
            0.0, 0.7, //
            2.0, -5.0, //
            0.0, 0.3, //
            -1.0, 1.0, //
            1.0, -1.0,
        ];
        let d = Dataset::from_raw(schema(2), raw, vec![], vec![0.0; 6], None, None).unwrap();
        let net = linear_rate(&[0.5, 0.0]);
        let mu0 = net.predict_dataset(&d).unwrap().iter().sum::<f64>() / 6.0;
        // Rows 1 and 3 predict exp(0) = 1; μ0 > 1 by convexity, so use a
        // tolerance that admits both and check the smaller norm wins.
        let delta = (mu0 - 1.0) / mu0 * 1.01 + 1e-12;
        let mask = select_mask(&net, &d, delta.max(1e-9), Mu0Weighting::Unweighted).unwrap();
        assert_eq!(mask.donor_row, 3);
        assert_eq!(mask.continuous, d.continuous_row(3).to_vec());

        assert!(matches!(
            select_mask(&net, &d, 1e-9, Mu0Weighting::Unweighted),
            Err(Error::NoMaskCandidate { .. })
        ));
    }

    #[test]
    fn categorical_only_data_needs_no_tolerance() {
        let s = FeatureSchema::new(vec![FeatureSpec::categorical("a", ["p", "q", "r"])], "y", None).unwrap();
        let d = Dataset::from_raw(s, vec![], vec![0, 1, 2, 2], vec![0.0; 4], None, None).unwrap();
        let cfg = NetworkConfig {
            hidden_sizes: vec![2],
            ..NetworkConfig::default()
        };
        let net = Network::new(cfg, 0, vec![3], 5).unwrap();
        let mask = select_mask(&net, &d, 1e-12, Mu0Weighting::Unweighted).unwrap();
        assert_eq!(mask.categorical, vec![3]);
        assert!(mask.continuous.is_empty());
    }

    #[test]
    fn exact_match_at_origin() {
        let raw = vec![
            -1.0, -1.0, 1.0, 1.0, 0.5, 0.5, -1.0, 1.0, 1.0, -1.0, 0.0, 0.0, -0.5, -0.5,
        ];
        let d = Dataset::from_raw(schema(2), raw, vec![], vec![0.0; 7], None, None).unwrap();
        // Zero network: μ ≡ 1 = μ0 on every row, so the row at the origin wins.
        let net = Network::zeroed(NetworkConfig::default(), 2, vec![]).unwrap();
        let mask = select_mask(&net, &d, DEFAULT_DELTA, Mu0Weighting::Unweighted).unwrap();
        assert_eq!(mask.donor_row, 5);
        assert_eq!(mask.continuous, vec![0.0, 0.0]);
        assert_eq!(mask.mu0, 1.0);
    }
}
