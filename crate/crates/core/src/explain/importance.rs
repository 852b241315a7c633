use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{conditional, sampled_system, SampleOptions};
use crate::cen::CenModel;
use crate::data::{Coalition, Dataset, Slot};
use crate::error::{Error, Result};
use crate::nn::{poisson_deviance, poisson_losses, Network};
use crate::shapley::{kernel_shap, Attribution};

/// Which predictions define the full-model loss in the denominators.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenominatorSource {
    /// The base model `μ(x_i)`.
    #[default]
    Base,
    /// The surrogate queried at the grand coalition.
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReportKind {
    Drop1,
    Anova { order: Vec<String> },
    Vpi { seed: u64, repetitions: usize },
    ShapAnova { n_cases: usize, m: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub value: f64,
}

/// Relative loss statistics per feature. `denominator` and `null_loss` are
/// average Poisson deviances of the full and null models, and `total` is
/// `null_loss / denominator - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub kind: ReportKind,
    pub denominator: f64,
    pub null_loss: f64,
    pub total: f64,
    pub entries: Vec<ImportanceEntry>,
}

impl ImportanceReport {
    pub fn get(&self, feature: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.feature == feature).map(|e| e.value)
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|e| e.value).sum()
    }
}

/// Losses summed in row order, so that equal inputs give equal bits.
fn loss_sum(data: &Dataset, preds: &[f64]) -> Result<f64> {
    Ok(poisson_losses(data, preds)?.iter().sum())
}

struct Baseline {
    /// `Σ L(Y_i, μ_Q(x_i))`.
    full: f64,
    /// `Σ L(Y_i, μ0)`.
    null: f64,
    n: f64,
}

impl Baseline {
    fn new(cen: &CenModel, base: &Network, test: &Dataset, source: DenominatorSource) -> Result<Self> {
        if test.is_empty() {
            return Err(Error::InvalidArgument("test data is empty".into()));
        }
        let preds = match source {
            DenominatorSource::Base => base.predict_dataset(test)?,
            DenominatorSource::Surrogate => cen.query_dataset(test, Coalition::full(test.q()))?,
        };
        Ok(Self {
            full: loss_sum(test, &preds)?,
            null: loss_sum(test, &vec![cen.mask.mu0; test.n()])?,
            n: test.n() as f64,
        })
    }

    /// Relative change `(a - b) / full`.
    fn relative(&self, a: f64, b: f64) -> f64 {
        (a - b) / self.full
    }

    fn report(&self, kind: ReportKind, entries: Vec<ImportanceEntry>) -> ImportanceReport {
        ImportanceReport {
            kind,
            denominator: self.full / self.n,
            null_loss: self.null / self.n,
            total: self.relative(self.null, self.full),
            entries,
        }
    }
}

fn check_schema(cen: &CenModel, test: &Dataset) -> Result<()> {
    if cen.mask.layout() != test.schema().slots() {
        return Err(Error::Shape("model and data schemas differ".into()));
    }
    Ok(())
}

/// `drop1_j = Σ L(Y_i, μ_{Q\{j}}(x_i)) / Σ L(Y_i, μ(x_i)) - 1`.
pub fn drop1(cen: &CenModel, base: &Network, test: &Dataset, source: DenominatorSource) -> Result<ImportanceReport> {
    check_schema(cen, test)?;
    let baseline = Baseline::new(cen, base, test, source)?;
    let q = test.q();
    let names = test.schema().names();
    let entries = (0..q)
        .map(|j| {
            let c = Coalition::full(q).without(j);
            let dropped = loss_sum(test, &cen.query_dataset(test, c)?)?;
            Ok(ImportanceEntry {
                feature: names[j].to_string(),
                value: baseline.relative(dropped, baseline.full),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(baseline.report(ReportKind::Drop1, entries))
}

/// Sequential relative loss decreases as the features of `order` are added
/// one at a time, starting from `μ_∅ = μ0` and ending at the full model.
pub fn anova(
    cen: &CenModel,
    base: &Network,
    test: &Dataset,
    order: &[usize],
    source: DenominatorSource,
) -> Result<ImportanceReport> {
    check_schema(cen, test)?;
    let q = test.q();
    let mut seen = vec![false; q];
    for &j in order {
        if j >= q || std::mem::replace(&mut seen[j], true) {
            return Err(Error::InvalidArgument(format!(
                "anova order must be a permutation of 0..{q}, got {order:?}"
            )));
        }
    }
    if order.len() != q {
        return Err(Error::InvalidArgument(format!(
            "anova order must be a permutation of 0..{q}, got {order:?}"
        )));
    }
    let baseline = Baseline::new(cen, base, test, source)?;
    let names = test.schema().names();

    let mut previous = baseline.null;
    let mut included = Coalition::empty(q);
    let mut entries = Vec::with_capacity(q);
    for (k, &j) in order.iter().enumerate() {
        included = included.with(j);
        // The last step is the full model itself, so its loss is the
        // denominator and the entry repeats drop1's arithmetic exactly.
        let current = if k + 1 == q {
            baseline.full
        } else {
            loss_sum(test, &cen.query_dataset(test, included)?)?
        };
        entries.push(ImportanceEntry {
            feature: names[j].to_string(),
            value: baseline.relative(previous, current),
        });
        previous = current;
    }
    let order_names = order.iter().map(|&j| names[j].to_string()).collect();
    Ok(baseline.report(ReportKind::Anova { order: order_names }, entries))
}

fn is_identity(perm: &[usize]) -> bool {
    perm.iter().enumerate().all(|(i, &p)| i == p)
}

/// Variable permutation importance: relative increase of the base model's
/// loss after shuffling one feature column, averaged over `repetitions`
/// seeded permutations. An identity permutation is redrawn when `n > 5`.
pub fn vpi(base: &Network, test: &Dataset, seed: u64, repetitions: usize) -> Result<ImportanceReport> {
    let n = test.n();
    if n < 2 {
        return Err(Error::InvalidArgument("VPI needs at least two rows".into()));
    }
    if repetitions == 0 {
        return Err(Error::InvalidArgument("VPI needs at least one repetition".into()));
    }
    let preds = base.predict_dataset(test)?;
    let full = loss_sum(test, &preds)?;
    let null_pred = preds.iter().sum::<f64>() / n as f64;
    let null = loss_sum(test, &vec![null_pred; n])?;
    let slots = test.schema().slots();
    let names = test.schema().names();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut entries = Vec::with_capacity(slots.len());
    for (j, slot) in slots.iter().enumerate() {
        let mut increase = 0.0;
        for _ in 0..repetitions {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            while n > 5 && is_identity(&perm) {
                perm.shuffle(&mut rng);
            }
            let permuted = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut x = test.instance(i);
                    match *slot {
                        Slot::Continuous(k) => x.continuous[k] = test.continuous_row(perm[i])[k],
                        Slot::Categorical(k) => x.categorical[k] = test.categorical_row(perm[i])[k],
                    }
                    base.predict(&x)
                })
                .collect::<Result<Vec<f64>>>()?;
            increase += (loss_sum(test, &permuted)? - full) / full;
        }
        entries.push(ImportanceEntry {
            feature: names[j].to_string(),
            value: increase / repetitions as f64,
        });
    }
    Ok(ImportanceReport {
        kind: ReportKind::Vpi { seed, repetitions },
        denominator: full / n as f64,
        null_loss: null / n as f64,
        total: (null - full) / full,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossShapOptions {
    pub n_cases: usize,
    pub sample: SampleOptions,
    pub denominator: DenominatorSource,
}

/// Loss attribution of one test case: `attribution.mu0 = L(Y_i, μ0)` and
/// `Σ φ_j ≈ L(Y_i, μ_Q(x_i)) - L(Y_i, μ0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseAttribution {
    pub row: usize,
    pub attribution: Attribution,
    pub full_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossShap {
    /// `SHAP_anova_j = -Φ_j / denominator`.
    pub report: ImportanceReport,
    /// Average attributions `Φ_j`.
    pub average: Vec<f64>,
    pub cases: Vec<CaseAttribution>,
    pub coalitions: Vec<Coalition>,
}

/// Shapley decomposition of the deviance loss over `n_cases` random test
/// rows, sharing one kernel system built from `m` sampled coalitions.
pub fn shap_loss_attribution(
    cen: &CenModel,
    base: &Network,
    test: &Dataset,
    opts: &LossShapOptions,
) -> Result<LossShap> {
    check_schema(cen, test)?;
    let q = test.q();
    if opts.n_cases == 0 || opts.n_cases > test.n() {
        return Err(Error::InvalidArgument(format!(
            "n_cases = {} outside 1..={}",
            opts.n_cases,
            test.n()
        )));
    }
    let system = sampled_system(q, &opts.sample)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.sample.seed);
    let rows = index::sample(&mut rng, test.n(), opts.n_cases).into_vec();
    let mu0 = cen.mask.mu0;

    let cases = rows
        .par_iter()
        .map(|&i| {
            let x = test.instance(i);
            let (y, v) = (test.frequency(i), test.exposure()[i]);
            let null = poisson_deviance(y, mu0, v)?;
            let v0 = system
                .coalitions()
                .iter()
                .map(|&c| Ok(poisson_deviance(y, conditional(cen, &x, c)?, v)? - null))
                .collect::<Result<Vec<f64>>>()?;
            let full_loss = poisson_deviance(y, cen.query(&x, Coalition::full(q))?, v)?;
            Ok(CaseAttribution {
                row: i,
                attribution: kernel_shap(&system, null, &v0)?,
                full_loss,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut average = vec![0.0; q];
    for case in &cases {
        for (a, p) in average.iter_mut().zip(&case.attribution.phi) {
            *a += p;
        }
    }
    average.iter_mut().for_each(|a| *a /= cases.len() as f64);

    let baseline = Baseline::new(cen, base, test, opts.denominator)?;
    let denominator = baseline.full / baseline.n;
    let names = test.schema().names();
    let entries = average
        .iter()
        .zip(&names)
        .map(|(phi, name)| ImportanceEntry {
            feature: name.to_string(),
            value: -phi / denominator,
        })
        .collect();
    let kind = ReportKind::ShapAnova {
        n_cases: opts.n_cases,
        m: opts.sample.m,
        seed: opts.sample.seed,
    };
    Ok(LossShap {
        report: baseline.report(kind, entries),
        average,
        cases,
        coalitions: system.coalitions().to_vec(),
    })
}
