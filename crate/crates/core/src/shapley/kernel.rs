use std::collections::HashSet;

use log::warn;
use nalgebra::{DMatrix, DVector};

use super::{kernel_weight, Attribution};
use crate::data::Coalition;
use crate::error::{Error, Result};

/// Weight standing in for the infinite kernel weight of the grand coalition.
pub const DEFAULT_BIG_WEIGHT: f64 = 1e6;

/// Precomputed KernelSHAP solve operator `A = (Z'WZ)^{-1} Z'W` for a fixed
/// set of coalitions. The grand coalition carries `big_weight`, which
/// enforces efficiency approximately (error of order `1 / big_weight`).
#[derive(Debug, Clone)]
pub struct KernelSystem {
    q: usize,
    coalitions: Vec<Coalition>,
    weights: Vec<f64>,
    operator: DMatrix<f64>,
    ridge: Option<f64>,
}

fn check_coalitions(q: usize, coalitions: &[Coalition]) -> Result<()> {
    let mut seen = HashSet::with_capacity(coalitions.len());
    for c in coalitions {
        if c.q() != q {
            return Err(Error::Shape(format!("coalition {c:?} is not over q = {q}")));
        }
        if c.is_empty() {
            return Err(Error::InvalidArgument("the empty coalition is not a system row".into()));
        }
        if !seen.insert(*c) {
            return Err(Error::InvalidArgument(format!("duplicate coalition {c:?}")));
        }
    }
    Ok(())
}

fn design(q: usize, coalitions: &[Coalition]) -> DMatrix<f64> {
    DMatrix::from_fn(coalitions.len(), q, |r, j| {
        if coalitions[r].contains(j) {
            1.0
        } else {
            0.0
        }
    })
}

impl KernelSystem {
    /// Builds the operator for `coalitions`, which must be distinct,
    /// non-empty and include the grand coalition.
    pub fn build(q: usize, coalitions: &[Coalition], big_weight: f64) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidArgument("q must be at least 1".into()));
        }
        if !(big_weight > 0.0) || !big_weight.is_finite() {
            return Err(Error::InvalidArgument(format!("big_weight must be positive, got {big_weight}")));
        }
        check_coalitions(q, coalitions)?;
        if !coalitions.iter().any(|c| c.is_full()) {
            return Err(Error::InvalidArgument("the grand coalition must be part of the system".into()));
        }

        let weights: Vec<f64> = coalitions
            .iter()
            .map(|c| if c.is_full() { Ok(big_weight) } else { kernel_weight(q, c.len()) })
            .collect::<Result<_>>()?;
        let z = design(q, coalitions);
        let zt_w = DMatrix::from_fn(q, coalitions.len(), |j, r| z[(r, j)] * weights[r]);
        let gram = &zt_w * &z;

        let (factor, ridge) = match gram.clone().cholesky() {
            Some(f) => (f, None),
            None => {
                let ridge = 1e-10 * gram.trace() / q as f64;
                warn!(
                    "kernel system over {} coalitions is singular; adding ridge {ridge:e}",
                    coalitions.len()
                );
                let mut regular = gram;
                for j in 0..q {
                    regular[(j, j)] += ridge;
                }
                let f = regular.cholesky().ok_or_else(|| {
                    Error::Singular(format!(
                        "Z'WZ is singular for {} coalitions even with ridge; sample more coalitions",
                        coalitions.len()
                    ))
                })?;
                (f, Some(ridge))
            }
        };
        let operator = factor.solve(&zt_w);
        if operator.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("solve operator has non-finite entries; sample more coalitions".into()));
        }
        Ok(Self {
            q,
            coalitions: coalitions.to_vec(),
            weights,
            operator,
            ridge,
        })
    }

    /// System over every non-empty coalition (proper subsets in increasing
    /// bitmask order, then the grand coalition).
    pub fn full_enumeration(q: usize, big_weight: f64) -> Result<Self> {
        let mut rows: Vec<Coalition> = crate::data::coalition_iter(q)?.collect();
        rows.push(Coalition::full(q));
        Self::build(q, &rows, big_weight)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn coalitions(&self) -> &[Coalition] {
        &self.coalitions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The `q × rows` operator `A`.
    pub fn operator(&self) -> &DMatrix<f64> {
        &self.operator
    }

    /// Ridge added to `Z'WZ`, if the fallback was needed.
    pub fn ridge(&self) -> Option<f64> {
        self.ridge
    }
}

/// `φ = A ν0` where `ν0[r] = ν(C_r) - ν(∅)` follows the system's rows.
pub fn kernel_shap(system: &KernelSystem, mu0: f64, v0: &[f64]) -> Result<Attribution> {
    if v0.len() != system.coalitions.len() {
        return Err(Error::Shape(format!(
            "{} game values for {} system rows",
            v0.len(),
            system.coalitions.len()
        )));
    }
    let phi = system.operator.clone() * DVector::from_column_slice(v0);
    Ok(Attribution {
        mu0,
        phi: phi.iter().copied().collect(),
    })
}

/// KernelSHAP with the efficiency side constraint imposed exactly through a
/// Lagrange multiplier. Rows are proper coalitions only.
#[derive(Debug, Clone)]
pub struct ConstrainedSystem {
    q: usize,
    coalitions: Vec<Coalition>,
    zt_w: DMatrix<f64>,
    kkt_inverse: DMatrix<f64>,
}

impl ConstrainedSystem {
    pub fn build(q: usize, coalitions: &[Coalition]) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidArgument("q must be at least 1".into()));
        }
        check_coalitions(q, coalitions)?;
        if coalitions.iter().any(|c| c.is_full()) {
            return Err(Error::InvalidArgument(
                "the grand coalition enters through the constraint, not as a row".into(),
            ));
        }
        let weights: Vec<f64> = coalitions
            .iter()
            .map(|c| kernel_weight(q, c.len()))
            .collect::<Result<_>>()?;
        let z = design(q, coalitions);
        let zt_w = DMatrix::from_fn(q, coalitions.len(), |j, r| z[(r, j)] * weights[r]);
        let gram = &zt_w * &z;

        // [ Z'WZ  1 ] [ φ ]   [ Z'W ν0  ]
        // [ 1'    0 ] [ λ ] = [ ν0(Q)   ]
        let mut kkt = DMatrix::zeros(q + 1, q + 1);
        kkt.view_mut((0, 0), (q, q)).copy_from(&gram);
        for j in 0..q {
            kkt[(j, q)] = 1.0;
            kkt[(q, j)] = 1.0;
        }
        let kkt_inverse = kkt
            .try_inverse()
            .ok_or_else(|| Error::Singular("constrained KernelSHAP system is singular; add coalitions".into()))?;
        Ok(Self {
            q,
            coalitions: coalitions.to_vec(),
            zt_w,
            kkt_inverse,
        })
    }

    pub fn full_enumeration(q: usize) -> Result<Self> {
        let rows: Vec<Coalition> = crate::data::coalition_iter(q)?.collect();
        Self::build(q, &rows)
    }

    pub fn coalitions(&self) -> &[Coalition] {
        &self.coalitions
    }

    /// Solves for `φ` given `ν0` on the rows and `ν0(Q) = ν(Q) - ν(∅)`.
    pub fn solve(&self, mu0: f64, v0: &[f64], v0_full: f64) -> Result<Attribution> {
        if v0.len() != self.coalitions.len() {
            return Err(Error::Shape(format!(
                "{} game values for {} system rows",
                v0.len(),
                self.coalitions.len()
            )));
        }
        let top = &self.zt_w * DVector::from_column_slice(v0);
        let mut rhs = DVector::zeros(self.q + 1);
        rhs.rows_mut(0, self.q).copy_from(&top);
        rhs[self.q] = v0_full;
        let sol = &self.kkt_inverse * rhs;
        Ok(Attribution {
            mu0,
            phi: sol.rows(0, self.q).iter().copied().collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapley::{exact_shapley, ValueTable};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_table(q: usize, rng: &mut impl Rng) -> ValueTable {
        ValueTable::from_fn(q, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn operator_shape_and_guards() {
        let sys = KernelSystem::full_enumeration(3, 1e6).unwrap();
        assert_eq!(sys.operator().shape(), (3, 7));
        assert!(sys.ridge().is_none());

        let a = Coalition::from_bits(3, 0b001).unwrap();
        let full = Coalition::full(3);
        assert!(KernelSystem::build(3, &[a, a, full], 1e6).is_err());
        assert!(KernelSystem::build(3, &[a], 1e6).is_err());
        assert!(KernelSystem::build(3, &[a, full], -1.0).is_err());
    }

    #[test]
    fn rank_deficient_system_falls_back_to_ridge() {
        let sys = KernelSystem::build(3, &[Coalition::full(3)], 1e6).unwrap();
        assert!(sys.ridge().is_some());
    }

    #[test]
    fn matches_exact_on_random_five_player_games() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sys = KernelSystem::full_enumeration(5, 1e6).unwrap();
        let constrained = ConstrainedSystem::full_enumeration(5).unwrap();
        for _ in 0..20 {
            let t = random_table(5, &mut rng);
            let exact = exact_shapley(&t).unwrap();
            let mu0 = t.get(Coalition::empty(5)).unwrap();
            let v0: Vec<f64> = sys.coalitions().iter().map(|c| t.get(*c).unwrap() - mu0).collect();
            let approx = kernel_shap(&sys, mu0, &v0).unwrap();
            let v0c: Vec<f64> = constrained
                .coalitions()
                .iter()
                .map(|c| t.get(*c).unwrap() - mu0)
                .collect();
            let total = t.get(Coalition::full(5)).unwrap() - mu0;
            let lagrange = constrained.solve(mu0, &v0c, total).unwrap();
            for j in 0..5 {
                assert!((approx.phi[j] - exact.phi[j]).abs() <= 1e-6);
                assert!((lagrange.phi[j] - exact.phi[j]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn solve_is_linear() {
        let sys = KernelSystem::full_enumeration(4, 1e6).unwrap();
        let zero = kernel_shap(&sys, 0.0, &vec![0.0; 15]).unwrap();
        assert!(zero.phi.iter().all(|p| *p == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<f64> = (0..15).map(|_| rng.random_range(-2.0..2.0)).collect();
        let scaled: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        let a = kernel_shap(&sys, 0.0, &v).unwrap();
        let b = kernel_shap(&sys, 0.0, &scaled).unwrap();
        for (x, y) in a.phi.iter().zip(&b.phi) {
            assert_eq!(2.0 * x, *y);
        }
        assert!(kernel_shap(&sys, 0.0, &v[..3]).is_err());
    }
}
