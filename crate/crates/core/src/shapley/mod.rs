//! Shapley values of cooperative games over feature coalitions: exact
//! enumeration and the KernelSHAP weighted least-squares characterization.

mod kernel;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use kernel::{kernel_shap, ConstrainedSystem, KernelSystem, DEFAULT_BIG_WEIGHT};

use crate::data::{binomial, Coalition};
use crate::error::{Error, Result};

/// Largest `q` accepted by [`exact_shapley`].
pub const EXACT_LIMIT: usize = 20;

/// Shapley kernel weight `(q-1) / (C(q,s) s (q-s))` of a coalition of size `s`.
///
/// Undefined (infinite) for `s = 0` and `s = q`.
pub fn kernel_weight(q: usize, s: usize) -> Result<f64> {
    if s == 0 || s >= q {
        return Err(Error::InvalidArgument(format!(
            "kernel weight undefined for coalition size {s} of q = {q}"
        )));
    }
    Ok((q - 1) as f64 / (binomial(q, s) as f64 * s as f64 * (q - s) as f64))
}

/// Game values `ν(C)`. Always holds `ν(∅)` and `ν(Q)` once validated.
#[derive(Debug, Clone, Default)]
pub struct ValueTable {
    q: usize,
    entries: HashMap<Coalition, f64>,
}

impl ValueTable {
    pub fn new(q: usize) -> Self {
        Self {
            q,
            entries: HashMap::new(),
        }
    }

    /// Complete table with `ν(C) = value(C)` for all `2^q` coalitions.
    pub fn from_fn(q: usize, mut value: impl FnMut(Coalition) -> f64) -> Result<Self> {
        if q > EXACT_LIMIT {
            return Err(Error::EnumerationLimit {
                q,
                limit: EXACT_LIMIT,
            });
        }
        let mut table = Self::new(q);
        for bits in 0..1u64 << q {
            let c = Coalition::from_bits(q, bits)?;
            table.insert(c, value(c))?;
        }
        Ok(table)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn insert(&mut self, c: Coalition, value: f64) -> Result<()> {
        if c.q() != self.q {
            return Err(Error::Shape(format!("coalition over q = {} in table of q = {}", c.q(), self.q)));
        }
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite game value for {c:?}")));
        }
        self.entries.insert(c, value);
        Ok(())
    }

    pub fn get(&self, c: Coalition) -> Option<f64> {
        self.entries.get(&c).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for c in [Coalition::empty(self.q), Coalition::full(self.q)] {
            if !self.entries.contains_key(&c) {
                return Err(Error::IncompleteTable(c.bits()));
            }
        }
        Ok(())
    }
}

/// Base value `μ0 = ν(∅)` and per-feature contributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub mu0: f64,
    pub phi: Vec<f64>,
}

impl Attribution {
    /// `μ0 + Σ φ_j`, which equals `ν(Q)` for an efficient attribution.
    pub fn total(&self) -> f64 {
        self.mu0 + self.phi.iter().sum::<f64>()
    }
}

/// Exact Shapley values by summing weighted marginal contributions over all
/// coalitions not containing each player.
pub fn exact_shapley(table: &ValueTable) -> Result<Attribution> {
    let q = table.q();
    if q == 0 || q > EXACT_LIMIT {
        return Err(Error::EnumerationLimit {
            q,
            limit: EXACT_LIMIT,
        });
    }
    let size = 1usize << q;
    let mut dense = Vec::with_capacity(size);
    for bits in 0..size as u64 {
        let c = Coalition::from_bits(q, bits)?;
        dense.push(table.get(c).ok_or(Error::IncompleteTable(bits))?);
    }

    // |C|! (q-|C|-1)! / q! = 1 / (q * C(q-1, |C|))
    let weight: Vec<f64> = (0..q)
        .map(|s| 1.0 / (q as f64 * binomial(q - 1, s) as f64))
        .collect();
    let phi = (0..q)
        .map(|j| {
            let bit = 1usize << j;
            (0..size)
                .filter(|c| c & bit == 0)
                .map(|c| weight[c.count_ones() as usize] * (dense[c | bit] - dense[c]))
                .sum()
        })
        .collect();
    Ok(Attribution { mu0: dense[0], phi })
}
