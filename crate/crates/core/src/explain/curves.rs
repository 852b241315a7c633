use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cen::CenModel;
use crate::data::{Coalition, Dataset, FeatureKind, Instance, Slot};
use crate::error::{Error, Result};
use crate::nn::{ModelContext, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Grid value in original units, or the level index.
    pub value: f64,
    pub label: String,
    /// `None` where the grid point has no support in the overlay data.
    pub estimate: Option<f64>,
    pub supported: bool,
    /// Overlay rows assigned to this grid point.
    pub count: usize,
    /// Exposure-weighted observed frequency `ȳ_c` of those rows.
    pub observed: Option<f64>,
    /// Exposure-weighted mean base prediction `μ̄_c` of those rows.
    pub model_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub feature: String,
    pub points: Vec<CurvePoint>,
}

/// Empirical data shown next to an MCEP curve.
#[derive(Debug, Clone, Copy)]
pub struct Overlay<'a> {
    pub data: &'a Dataset,
    pub base: &'a Network,
}

/// `points` empirical quantiles (deduplicated) of a continuous feature in
/// original units, or every level index of a categorical one.
pub fn default_grid(data: &Dataset, j: usize, points: usize) -> Result<Vec<f64>> {
    let slot = feature_slot(data.schema().slots(), j)?;
    match slot {
        Slot::Categorical(k) => Ok((0..data.schema().level_counts()[k]).map(|l| l as f64).collect()),
        Slot::Continuous(k) => {
            if data.is_empty() || points == 0 {
                return Err(Error::InvalidArgument("a quantile grid needs data and points".into()));
            }
            let mut values: Vec<f64> = (0..data.n()).map(|i| data.raw_continuous_row(i)[k]).collect();
            values.sort_by(f64::total_cmp);
            let last = (values.len() - 1) as f64;
            let mut grid: Vec<f64> = (0..points)
                .map(|p| {
                    let h = if points == 1 { 0.5 * last } else { last * p as f64 / (points - 1) as f64 };
                    let lo = h.floor() as usize;
                    let hi = h.ceil() as usize;
                    values[lo] + (h - lo as f64) * (values[hi] - values[lo])
                })
                .collect();
            grid.dedup();
            Ok(grid)
        }
    }
}

fn feature_slot(slots: Vec<Slot>, j: usize) -> Result<Slot> {
    slots
        .get(j)
        .copied()
        .ok_or_else(|| Error::InvalidArgument(format!("feature index {j} out of range")))
}

/// Writes grid value `value` (original units or level index) into `x`.
fn set_component(x: &mut Instance, slot: Slot, ctx: &ModelContext, j: usize, value: f64) -> Result<()> {
    match slot {
        Slot::Continuous(k) => x.continuous[k] = ctx.standardization[k].standardize(value),
        Slot::Categorical(k) => {
            let levels = ctx.schema.level_counts()[k];
            if value < 0.0 || value.fract() != 0.0 || value as usize >= levels {
                return Err(Error::InvalidLevel {
                    feature: j,
                    index: value as usize,
                    allowed: levels,
                });
            }
            x.categorical[k] = value as usize;
        }
    }
    Ok(())
}

fn label(ctx: &ModelContext, j: usize, value: f64) -> String {
    match &ctx.schema.features[j].kind {
        FeatureKind::Categorical { levels } => levels[value as usize].clone(),
        FeatureKind::Continuous => value.to_string(),
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("grid must be non-empty and finite".into()));
    }
    Ok(())
}

/// Partial dependence: for each grid value, the mean base prediction over
/// all rows of `data` with feature `j` set to that value.
pub fn pdp(base: &Network, data: &Dataset, j: usize, grid: &[f64]) -> Result<Curve> {
    check_grid(grid)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("PDP needs data".into()));
    }
    let ctx = ModelContext::new(data.schema().clone(), data.stats().to_vec());
    let slot = feature_slot(data.schema().slots(), j)?;
    let points = grid
        .iter()
        .map(|&g| {
            let preds = (0..data.n())
                .into_par_iter()
                .map(|i| {
                    let mut x = data.instance(i);
                    set_component(&mut x, slot, &ctx, j, g)?;
                    base.predict(&x)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(CurvePoint {
                value: g,
                label: label(&ctx, j, g),
                estimate: Some(preds.iter().sum::<f64>() / preds.len() as f64),
                supported: true,
                count: data.n(),
                observed: None,
                model_mean: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Curve {
        feature: data.schema().features[j].name.clone(),
        points,
    })
}

/// Index of the grid point each overlay row belongs to: its level for a
/// categorical feature, the nearest grid value for a continuous one.
fn assign(data: &Dataset, slot: Slot, grid: &[f64]) -> Vec<Option<usize>> {
    (0..data.n())
        .map(|i| match slot {
            Slot::Categorical(k) => {
                let level = data.categorical_row(i)[k] as f64;
                grid.iter().position(|&g| g == level)
            }
            Slot::Continuous(k) => {
                let v = data.raw_continuous_row(i)[k];
                (0..grid.len()).min_by(|&a, &b| (grid[a] - v).abs().total_cmp(&(grid[b] - v).abs()))
            }
        })
        .collect()
}

/// Marginal conditional expectation `c ↦ μ_{{j}}(x*)` where `x*` is the mask
/// with component `j` set to `c`. With an overlay, grid points without any
/// overlay rows are flagged unsupported and get no estimate.
pub fn mcep(cen: &CenModel, ctx: &ModelContext, j: usize, grid: &[f64], overlay: Option<Overlay<'_>>) -> Result<Curve> {
    check_grid(grid)?;
    if cen.mask.layout() != ctx.schema.slots() {
        return Err(Error::Shape("model and schema differ".into()));
    }
    let slot = feature_slot(ctx.schema.slots(), j)?;
    let c = Coalition::empty(cen.q()).with(j);

    let mut count = vec![0usize; grid.len()];
    let mut exposure = vec![0.0; grid.len()];
    let mut claims = vec![0.0; grid.len()];
    let mut predicted = vec![0.0; grid.len()];
    if let Some(o) = overlay {
        let preds = o.base.predict_dataset(o.data)?;
        for (i, g) in assign(o.data, slot, grid).into_iter().enumerate() {
            if let Some(g) = g {
                let v = o.data.exposure()[i];
                count[g] += 1;
                exposure[g] += v;
                claims[g] += o.data.response()[i];
                predicted[g] += v * preds[i];
            }
        }
    }

    let points = grid
        .iter()
        .enumerate()
        .map(|(g, &value)| {
            let mut probe = cen.mask.instance();
            set_component(&mut probe, slot, ctx, j, value)?;
            let supported = overlay.is_none() || count[g] > 0;
            let estimate = if supported { Some(cen.query(&probe, c)?) } else { None };
            let has_rows = count[g] > 0;
            Ok(CurvePoint {
                value,
                label: label(ctx, j, value),
                estimate,
                supported,
                count: count[g],
                observed: has_rows.then(|| claims[g] / exposure[g]),
                model_mean: has_rows.then(|| predicted[g] / exposure[g]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Curve {
        feature: ctx.schema.features[j].name.clone(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::super::testutil::*;
    use super::*;
    use crate::cen::apply_mask;

    #[test]
    fn pdp_of_single_feature_model_is_the_model() {
        let base = linear_net(&[0.7, 0.0], 2.0, false);
        let data = dataset(vec![1.0, 2.0, -1.0, 0.0, 3.0, -4.0], 2, vec![1.0; 3]);
        let grid = [-1.0, 0.5, 2.0];
        let curve = pdp(&base, &data, 0, &grid).unwrap();
        let st = data.stats()[0];
        for (p, g) in curve.points.iter().zip(grid) {
            let direct = base.forward(&[st.standardize(g), 0.0], &[]).unwrap();
            assert_relative_eq!(p.estimate.unwrap(), direct, epsilon = 1e-9);
        }
    }

    #[test]
    fn pdp_of_additive_model() {
        // μ = 2 + 0.5 z0 - 0.25 z1 in standardized units: PDP(c) = 2 + 0.5 z(c) - 0.25 mean(z1) and mean(z1) = 0.
        let base = linear_net(&[0.5, -0.25], 2.0, false);
        let data = dataset(vec![1.0, 2.0, -1.0, 0.0, 3.0, -5.0], 2, vec![1.0; 3]);
        let curve = pdp(&base, &data, 0, &[0.0]).unwrap();
        let z = data.stats()[0].standardize(0.0);
        assert_relative_eq!(curve.points[0].estimate.unwrap(), 2.0 + 0.5 * z, epsilon = 1e-9);
    }

    #[test]
    fn mcep_ignores_other_components() {
        let base = linear_net(&[0.4, -0.3, 0.2], 1.5, false);
        let cen = identity_cen(&base, 3, 1.5);
        let data = dataset(vec![1.0, 2.0, -1.0, 0.0, 3.0, -4.0, 2.0, -1.0, 0.5], 3, vec![1.0; 3]);
        let ctx = ModelContext::new(data.schema().clone(), data.stats().to_vec());
        let curve = mcep(&cen, &ctx, 1, &[0.5, 1.5], None).unwrap();
        let c = Coalition::empty(3).with(1);
        for p in &curve.points {
            let junk = Instance {
                continuous: vec![9.0, ctx.standardization[1].standardize(p.value), -7.0],
                categorical: vec![],
            };
            let direct = cen.surrogate.predict(&apply_mask(&junk, c, &cen.mask)).unwrap();
            assert_eq!(p.estimate.unwrap(), direct);
        }
    }

    #[test]
    fn quantile_grid() {
        let data = dataset((0..11).map(f64::from).collect(), 1, vec![1.0; 11]);
        let grid = default_grid(&data, 0, 5).unwrap();
        assert_eq!(grid.len(), 5);
        for (g, e) in grid.iter().zip([0.0, 2.5, 5.0, 7.5, 10.0]) {
            assert_relative_eq!(*g, e, epsilon = 1e-9);
        }
    }
}
