use std::collections::HashSet;
use std::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shapley::kernel_weight;

/// Largest `q` for which all proper coalitions may be enumerated.
pub const ENUMERATION_LIMIT: usize = 25;

/// Largest supported number of features.
pub const MAX_FEATURES: usize = 64;

/// A subset `C` of the feature indices `{0, .., q-1}` stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coalition {
    bits: u64,
    q: u8,
}

fn full_bits(q: usize) -> u64 {
    if q == 64 {
        u64::MAX
    } else {
        (1u64 << q) - 1
    }
}

impl Coalition {
    pub fn empty(q: usize) -> Self {
        assert!(q <= MAX_FEATURES, "q = {q} exceeds {MAX_FEATURES}");
        Self { bits: 0, q: q as u8 }
    }

    pub fn full(q: usize) -> Self {
        assert!(q <= MAX_FEATURES, "q = {q} exceeds {MAX_FEATURES}");
        Self {
            bits: full_bits(q),
            q: q as u8,
        }
    }

    pub fn from_bits(q: usize, bits: u64) -> Result<Self> {
        if q > MAX_FEATURES {
            return Err(Error::InvalidArgument(format!("q = {q} exceeds {MAX_FEATURES}")));
        }
        if bits & !full_bits(q) != 0 {
            return Err(Error::InvalidArgument(format!(
                "bitmask {bits:#b} sets bits beyond q = {q}"
            )));
        }
        Ok(Self { bits, q: q as u8 })
    }

    pub fn from_indices(q: usize, indices: &[usize]) -> Result<Self> {
        let mut c = Self::empty(q);
        for &j in indices {
            if j >= q {
                return Err(Error::InvalidArgument(format!("feature index {j} >= q = {q}")));
            }
            c.bits |= 1 << j;
        }
        Ok(c)
    }

    pub fn bits(self) -> u64 {
        self.bits
    }

    pub fn q(self) -> usize {
        self.q as usize
    }

    pub fn contains(self, j: usize) -> bool {
        j < self.q() && self.bits >> j & 1 == 1
    }

    pub fn with(self, j: usize) -> Self {
        assert!(j < self.q(), "feature index {j} out of range");
        Self {
            bits: self.bits | 1 << j,
            ..self
        }
    }

    pub fn without(self, j: usize) -> Self {
        assert!(j < self.q(), "feature index {j} out of range");
        Self {
            bits: self.bits & !(1 << j),
            ..self
        }
    }

    pub fn len(self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.bits == 0
    }

    pub fn is_full(self) -> bool {
        self.bits == full_bits(self.q())
    }

    pub fn complement(self) -> Self {
        Self {
            bits: !self.bits & full_bits(self.q()),
            ..self
        }
    }

    pub fn union(self, other: Self) -> Self {
        debug_assert_eq!(self.q, other.q);
        Self {
            bits: self.bits | other.bits,
            ..self
        }
    }

    pub fn intersection(self, other: Self) -> Self {
        debug_assert_eq!(self.q, other.q);
        Self {
            bits: self.bits & other.bits,
            ..self
        }
    }

    /// Member indices in increasing order.
    pub fn indices(self) -> impl Iterator<Item = usize> {
        (0..self.q()).filter(move |&j| self.bits >> j & 1 == 1)
    }
}

impl fmt::Debug for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, j) in self.indices().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{j}")?;
        }
        write!(f, "}}/{}", self.q)
    }
}

/// All `2^q - 2` non-empty proper coalitions in increasing bitmask order.
pub fn coalition_iter(q: usize) -> Result<impl Iterator<Item = Coalition>> {
    if q == 0 {
        return Err(Error::InvalidArgument("q must be at least 1".into()));
    }
    if q > ENUMERATION_LIMIT {
        return Err(Error::EnumerationLimit {
            q,
            limit: ENUMERATION_LIMIT,
        });
    }
    let full = full_bits(q);
    Ok((1..full).map(move |bits| Coalition { bits, q: q as u8 }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Every proper coalition equally likely.
    Uniform,
    /// Coalition `C` drawn with probability proportional to the Shapley
    /// kernel weight of `|C|`.
    KernelWeighted,
}

pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Number of non-empty proper coalitions of `q` features.
pub fn proper_coalition_count(q: usize) -> u128 {
    (1u128 << q) - 2
}

/// Draws `m` distinct non-empty proper coalitions without replacement.
///
/// Each draw first picks a coalition size with probability proportional to
/// the remaining mass of that size class and then a uniformly random unused
/// subset of that size, which is sequential sampling without replacement
/// from the per-coalition weights.
pub fn sample_coalitions(q: usize, m: usize, mode: SamplingMode, seed: u64) -> Result<Vec<Coalition>> {
    if q < 2 || q > MAX_FEATURES - 1 {
        return Err(Error::InvalidArgument(format!(
            "coalition sampling needs 2 <= q < {MAX_FEATURES}, got {q}"
        )));
    }
    let total = proper_coalition_count(q);
    if m == 0 || m as u128 > total {
        return Err(Error::InvalidArgument(format!(
            "m = {m} outside 1..={total} (2^{q} - 2 proper coalitions)"
        )));
    }

    let size_weight: Vec<f64> = (0..q)
        .map(|s| match (s, mode) {
            (0, _) => 0.0,
            (_, SamplingMode::Uniform) => 1.0,
            (s, SamplingMode::KernelWeighted) => kernel_weight(q, s).expect("1 <= s < q"),
        })
        .collect();
    let class_size: Vec<u128> = (0..q).map(|s| binomial(q, s)).collect();
    let mut drawn_per_size = vec![0u128; q];
    let mut drawn = HashSet::with_capacity(m);
    let mut out = Vec::with_capacity(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    while out.len() < m {
        let mass: Vec<f64> = (1..q)
            .map(|s| size_weight[s] * (class_size[s] - drawn_per_size[s]) as f64)
            .collect();
        let total_mass: f64 = mass.iter().sum();
        let mut u = rng.random::<f64>() * total_mass;
        let mut size = q - 1;
        for (k, w) in mass.iter().enumerate() {
            if *w > 0.0 && u < *w {
                size = k + 1;
                break;
            }
            u -= w;
        }
        // Guard against rounding landing on an exhausted class.
        if class_size[size] == drawn_per_size[size] {
            size = (1..q)
                .rev()
                .find(|&s| class_size[s] > drawn_per_size[s])
                .expect("m <= 2^q - 2 leaves an open class");
        }

        let remaining = class_size[size] - drawn_per_size[size];
        let bits = if remaining * 2 >= class_size[size] {
            loop {
                let bits = index::sample(&mut rng, q, size)
                    .into_iter()
                    .fold(0u64, |b, j| b | 1 << j);
                if !drawn.contains(&bits) {
                    break bits;
                }
            }
        } else {
            // Class more than half exhausted: enumerate what is left.
            let free: Vec<u64> = subsets_of_size(q, size).filter(|b| !drawn.contains(b)).collect();
            free[rng.random_range(0..free.len())]
        };
        drawn.insert(bits);
        drawn_per_size[size] += 1;
        out.push(Coalition { bits, q: q as u8 });
    }
    Ok(out)
}

/// Bitmasks with exactly `k` of the low `q` bits set, increasing (Gosper).
fn subsets_of_size(q: usize, k: usize) -> impl Iterator<Item = u64> {
    let first = if k == 0 { 0 } else { full_bits(k) };
    let limit = full_bits(q);
    let mut next = Some(first);
    std::iter::from_fn(move || {
        let cur = next?;
        next = if cur == 0 {
            None
        } else {
            let c = cur & cur.wrapping_neg();
            let r = cur.wrapping_add(c);
            let n = (((r ^ cur) >> 2) / c) | r;
            (r != 0 && n <= limit && n & !limit == 0).then_some(n)
        };
        Some(cur)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn enumerates_proper_subsets() {
        let two: Vec<u64> = coalition_iter(2).unwrap().map(|c| c.bits()).collect();
        assert_eq!(two, vec![0b01, 0b10]);
        let three: Vec<_> = coalition_iter(3).unwrap().collect();
        assert_eq!(three.len(), 6);
        assert!(three.iter().all(|c| !c.is_empty() && !c.is_full()));
        assert!(matches!(
            coalition_iter(26),
            Err(Error::EnumerationLimit { q: 26, .. })
        ));
    }

    #[test]
    fn exhaustive_sample_returns_all_subsets() {
        let mut s = sample_coalitions(3, 6, SamplingMode::Uniform, 1).unwrap();
        s.sort();
        assert_eq!(s, coalition_iter(3).unwrap().collect::<Vec<_>>());
        let mut k = sample_coalitions(5, 30, SamplingMode::KernelWeighted, 3).unwrap();
        k.sort();
        assert_eq!(k, coalition_iter(5).unwrap().collect::<Vec<_>>());
    }

    #[test]
    fn sampling_is_deterministic_and_guarded() {
        let a = sample_coalitions(10, 50, SamplingMode::KernelWeighted, 7).unwrap();
        let b = sample_coalitions(10, 50, SamplingMode::KernelWeighted, 7).unwrap();
        assert_eq!(a, b);
        let distinct: HashSet<_> = a.iter().collect();
        assert_eq!(distinct.len(), 50);
        assert!(sample_coalitions(10, 100_000, SamplingMode::Uniform, 7).is_err());
        assert!(sample_coalitions(10, 0, SamplingMode::Uniform, 7).is_err());
        assert!(sample_coalitions(10, 1022, SamplingMode::Uniform, 7).is_ok());
    }

    #[test]
    fn kernel_weighted_favours_extreme_sizes() {
        // q = 10: the kernel mass of size class s is 9 / (s (10 - s)), so a
        // single draw has size 1 or 9 with probability 2 / 5.0893 = 0.393;
        // uniform draws give 20 / 1022.
        let draws = 4000;
        let extreme = |mode| {
            (0..draws)
                .filter(|&seed| {
                    let c = sample_coalitions(10, 1, mode, seed).unwrap()[0];
                    c.len() == 1 || c.len() == 9
                })
                .count() as f64
                / draws as f64
        };
        let kernel = extreme(SamplingMode::KernelWeighted);
        assert!((0.36..=0.43).contains(&kernel), "{kernel}");
        let uniform = extreme(SamplingMode::Uniform);
        assert!(uniform < 0.04, "{uniform}");
    }

    #[test]
    fn gosper_enumeration_counts() {
        for q in 1..=8 {
            for k in 1..=q {
                let v: Vec<u64> = subsets_of_size(q, k).collect();
                assert_eq!(v.len() as u128, binomial(q, k), "q={q} k={k}");
                assert!(v.iter().all(|b| b.count_ones() as usize == k && *b < 1 << q));
            }
        }
    }

    proptest! {
        #[test]
        fn complement_partitions(q in 1usize..=20, raw in any::<u64>()) {
            let c = Coalition::from_bits(q, raw & full_bits(q)).unwrap();
            let comp = c.complement();
            prop_assert_eq!(c.union(comp), Coalition::full(q));
            prop_assert!(c.intersection(comp).is_empty());
            prop_assert_eq!(c.len() + comp.len(), q);
        }
    }
}
