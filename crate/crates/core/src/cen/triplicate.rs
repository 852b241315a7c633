use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mask_in_place, MaskVector};
use crate::data::{Coalition, Dataset};
use crate::error::{Error, Result};
use crate::nn::{Network, Samples};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// Unmasked `x_i` with target `μ(x_i)`.
    Full,
    /// The mask with target `μ0`.
    Null,
    /// `x_i` masked outside a random coalition, target `μ(x_i)`.
    Masked,
}

/// Surrogate training rows: `n` full rows, `n` null rows and `n` randomly
/// masked rows, in shuffled order.
#[derive(Debug, Clone)]
pub struct TriplicatedSet {
    pub samples: Samples,
    pub kinds: Vec<RowKind>,
    pub coalitions: Vec<Coalition>,
    /// Data row each training row was derived from.
    pub source_rows: Vec<usize>,
}

impl TriplicatedSet {
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }
}

/// Every component kept independently with probability 1/2.
fn random_coalition(q: usize, rng: &mut impl Rng) -> Coalition {
    let bits = (0..q).fold(0u64, |b, j| if rng.random::<bool>() { b | 1 << j } else { b });
    Coalition::from_bits(q, bits).expect("bits below q")
}

pub fn build_triplicated(
    base: &Network,
    data: &Dataset,
    mask: &MaskVector,
    seed: u64,
) -> Result<TriplicatedSet> {
    let schema = data.schema();
    if base.n_continuous() != schema.n_continuous() || base.level_counts() != schema.level_counts() {
        return Err(Error::Shape("base model does not match the data schema".into()));
    }
    if mask.layout() != schema.slots() {
        return Err(Error::Shape("mask does not match the data schema".into()));
    }
    let n = data.n();
    let q = data.q();
    let targets = base.predict_dataset(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut rows: Vec<(RowKind, Coalition, usize)> = Vec::with_capacity(3 * n);
    rows.extend((0..n).map(|i| (RowKind::Full, Coalition::full(q), i)));
    rows.extend((0..n).map(|i| (RowKind::Null, Coalition::empty(q), i)));
    rows.extend((0..n).map(|i| (RowKind::Masked, random_coalition(q, &mut rng), i)));
    rows.shuffle(&mut rng);

    let mut samples = Samples::new(schema.n_continuous(), schema.n_categorical());
    let mut kinds = Vec::with_capacity(3 * n);
    let mut coalitions = Vec::with_capacity(3 * n);
    let mut source_rows = Vec::with_capacity(3 * n);
    for (kind, c, i) in rows {
        let mut x = data.instance(i);
        mask_in_place(&mut x, c, mask);
        let target = match kind {
            RowKind::Null => mask.mu0,
            RowKind::Full | RowKind::Masked => targets[i],
        };
        samples.push(&x.continuous, &x.categorical, target, 1.0);
        kinds.push(kind);
        coalitions.push(c);
        source_rows.push(i);
    }
    Ok(TriplicatedSet {
        samples,
        kinds,
        coalitions,
        source_rows,
    })
}

/// Redraws the coalitions of the masked rows for one epoch.
pub(super) fn redraw_masked(
    data: &Dataset,
    mask: &MaskVector,
    samples: &mut Samples,
    masked_rows: &[usize],
    sources: &[usize],
    seed: u64,
    epoch: usize,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    for &r in masked_rows {
        let c = random_coalition(data.q(), &mut rng);
        let mut x = data.instance(sources[r]);
        mask_in_place(&mut x, c, mask);
        samples.set_inputs(r, &x.continuous, &x.categorical);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureSchema, FeatureSpec};
    use crate::nn::NetworkConfig;

    fn fixture(n: usize) -> (Network, Dataset, MaskVector) {
        let schema = FeatureSchema::new(
            vec![
                FeatureSpec::continuous("a"),
                FeatureSpec::categorical("b", ["x", "y"]),
                FeatureSpec::continuous("c"),
            ],
            "y",
            None,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cats: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let data = Dataset::from_raw(schema.clone(), raw, cats, vec![1.0; n], None, None).unwrap();
        let net = Network::for_schema(NetworkConfig::default(), &schema, 1).unwrap();
        let mask = MaskVector::new(vec![0.0, 0.0], schema.level_counts(), 0.5, schema.slots()).unwrap();
        (net, data, mask)
    }

    #[test]
    fn block_sizes_and_targets() {
        let (net, data, mask) = fixture(4);
        let set = build_triplicated(&net, &data, &mask, 7).unwrap();
        assert_eq!(set.len(), 12);
        let null_targets = (0..12).filter(|&r| set.samples.target(r) == 0.5).count();
        assert_eq!(null_targets, 4);
        assert_eq!(set.kinds.iter().filter(|k| **k == RowKind::Null).count(), 4);
        for r in 0..12 {
            if set.kinds[r] == RowKind::Null {
                assert_eq!(set.samples.continuous(r), &[0.0, 0.0]);
                assert_eq!(set.samples.categorical(r), &[2]);
            }
        }
        // Rows identical to an unmasked data row: at least the n full rows.
        let unmasked = (0..12)
            .filter(|&r| {
                let i = set.source_rows[r];
                set.samples.continuous(r) == data.continuous_row(i)
                    && set.samples.categorical(r) == data.categorical_row(i)
            })
            .count();
        assert!(unmasked >= 4);
    }

    #[test]
    fn construction_is_reproducible() {
        let (net, data, mask) = fixture(50);
        let a = build_triplicated(&net, &data, &mask, 11).unwrap();
        let b = build_triplicated(&net, &data, &mask, 11).unwrap();
        assert_eq!(a.coalitions, b.coalitions);
        assert_eq!(a.samples, b.samples);
        let c = build_triplicated(&net, &data, &mask, 12).unwrap();
        assert_ne!(a.coalitions, c.coalitions);
    }

    #[test]
    fn masking_frequency_is_one_half() {
        let (net, data, mask) = fixture(10_000);
        let set = build_triplicated(&net, &data, &mask, 5).unwrap();
        let masked: Vec<Coalition> = (0..set.len())
            .filter(|&r| set.kinds[r] == RowKind::Masked)
            .map(|r| set.coalitions[r])
            .collect();
        assert_eq!(masked.len(), 10_000);
        for j in 0..3 {
            let freq = masked.iter().filter(|c| !c.contains(j)).count() as f64 / 10_000.0;
            assert!((0.48..=0.52).contains(&freq), "component {j}: {freq}");
        }
    }
}
