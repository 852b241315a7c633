//! Analyses built on a base model and its conditional-expectation surrogate:
//! value functions and per-instance SHAP, drop1/anova/VPI importances,
//! PDP and MCEP curves, and the Shapley decomposition of deviance loss.

mod curves;
mod importance;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use curves::{default_grid, mcep, pdp, Curve, CurvePoint, Overlay};
pub use importance::{
    anova, drop1, shap_loss_attribution, vpi, CaseAttribution, DenominatorSource, ImportanceEntry,
    ImportanceReport, LossShap, LossShapOptions, ReportKind,
};

use crate::cen::CenModel;
use crate::data::{coalition_iter, sample_coalitions, Coalition, Dataset, Instance, SamplingMode, Slot};
use crate::error::{Error, Result};
use crate::nn::{poisson_deviance, Network};
use crate::shapley::{exact_shapley, kernel_shap, Attribution, KernelSystem, ValueTable, DEFAULT_BIG_WEIGHT, EXACT_LIMIT};

/// Default number of background rows for interventional values.
pub const DEFAULT_BACKGROUND_SIZE: usize = 1000;

/// The game `ν(C)` attached to one instance.
#[derive(Debug, Clone, Copy)]
pub enum ValueFunctionKind<'a> {
    /// `ν(C) = μ_C(x)` through the surrogate.
    Conditional,
    /// `ν(C)` = mean of `μ(x_C, X_C̄)` over background rows, ignoring the
    /// dependence between `X_C` and `X_C̄`.
    Interventional(&'a Dataset),
    /// `ν(C) = L(y, μ_C(x))` with Poisson deviance at exposure `exposure`.
    Loss { y: f64, exposure: f64 },
}

/// Seeded subsample of at most `size` rows of `data` in original row order.
pub fn background_sample(data: &Dataset, size: usize, seed: u64) -> Dataset {
    if size >= data.n() {
        return data.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = index::sample(&mut rng, data.n(), size).into_vec();
    rows.sort_unstable();
    data.subset(&rows)
}

/// `x` on the components in `c`, `row` elsewhere.
fn pin(x: &Instance, c: Coalition, row: &mut Instance, layout: &[Slot]) {
    for (j, slot) in layout.iter().enumerate() {
        if !c.contains(j) {
            continue;
        }
        match *slot {
            Slot::Continuous(k) => row.continuous[k] = x.continuous[k],
            Slot::Categorical(k) => row.categorical[k] = x.categorical[k],
        }
    }
}

fn interventional(base: &Network, background: &Dataset, layout: &[Slot], x: &Instance, c: Coalition) -> Result<f64> {
    if background.is_empty() {
        return Err(Error::InvalidArgument("interventional values need background rows".into()));
    }
    if c.is_full() {
        return base.predict(x);
    }
    let preds = (0..background.n())
        .into_par_iter()
        .map(|i| {
            let mut row = background.instance(i);
            pin(x, c, &mut row, layout);
            base.predict(&row)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(preds.iter().sum::<f64>() / preds.len() as f64)
}

/// `μ_C(x)` with the convention `μ_∅ = μ0`.
fn conditional(cen: &CenModel, x: &Instance, c: Coalition) -> Result<f64> {
    if c.is_empty() {
        Ok(cen.mask.mu0)
    } else {
        cen.query(x, c)
    }
}

/// `ν(C)` for instance `x`. Conditional and loss values use `μ0` itself for
/// the empty coalition.
pub fn value(cen: &CenModel, base: &Network, kind: ValueFunctionKind<'_>, x: &Instance, c: Coalition) -> Result<f64> {
    match kind {
        ValueFunctionKind::Conditional => conditional(cen, x, c),
        ValueFunctionKind::Interventional(bg) => interventional(base, bg, cen.mask.layout(), x, c),
        ValueFunctionKind::Loss { y, exposure } => poisson_deviance(y, conditional(cen, x, c)?, exposure),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    pub m: usize,
    pub seed: u64,
    pub sampling: SamplingMode,
    pub big_weight: f64,
}

impl SampleOptions {
    pub fn new(m: usize, seed: u64) -> Self {
        Self {
            m,
            seed,
            sampling: SamplingMode::Uniform,
            big_weight: DEFAULT_BIG_WEIGHT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapMode {
    /// Enumerate all `2^q` coalitions.
    Exact,
    /// KernelSHAP on `m` sampled proper coalitions plus the grand coalition.
    Sampled(SampleOptions),
}

/// Kernel system over `m` sampled coalitions and `Q`.
pub(crate) fn sampled_system(q: usize, opts: &SampleOptions) -> Result<KernelSystem> {
    let mut coalitions = sample_coalitions(q, opts.m, opts.sampling, opts.seed)?;
    coalitions.push(Coalition::full(q));
    KernelSystem::build(q, &coalitions, opts.big_weight)
}

/// SHAP decomposition of the mean prediction at `x`.
pub fn shap_mean(
    cen: &CenModel,
    base: &Network,
    x: &Instance,
    kind: ValueFunctionKind<'_>,
    mode: ShapMode,
) -> Result<Attribution> {
    let q = cen.q();
    let nu = |c: Coalition| value(cen, base, kind, x, c);
    match mode {
        ShapMode::Exact => {
            if q > EXACT_LIMIT {
                return Err(Error::EnumerationLimit { q, limit: EXACT_LIMIT });
            }
            let all: Vec<Coalition> = std::iter::once(Coalition::empty(q))
                .chain(coalition_iter(q)?)
                .chain(std::iter::once(Coalition::full(q)))
                .collect();
            let values = all.par_iter().map(|&c| nu(c)).collect::<Result<Vec<f64>>>()?;
            let mut table = ValueTable::new(q);
            for (c, v) in all.into_iter().zip(values) {
                table.insert(c, v)?;
            }
            exact_shapley(&table)
        }
        ShapMode::Sampled(opts) => {
            let system = sampled_system(q, &opts)?;
            let mu0 = nu(Coalition::empty(q))?;
            let v0 = system
                .coalitions()
                .par_iter()
                .map(|&c| nu(c).map(|v| v - mu0))
                .collect::<Result<Vec<f64>>>()?;
            kernel_shap(&system, mu0, &v0)
        }
    }
}
