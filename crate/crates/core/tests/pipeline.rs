//! End-to-end checks through the public API on small synthetic fixtures.

use proptest::prelude::*;

use condexp_core::cen::{build_triplicated, fit_cen, select_mask, CenConfig, CenModel, Mu0Weighting, RowKind};
use condexp_core::data::Coalition;
use condexp_core::explain::{anova, drop1, shap_mean, DenominatorSource, SampleOptions, ShapMode, ValueFunctionKind};
use condexp_core::nn::{load, save, train, ModelContext, Network, NetworkConfig, Samples, TrainConfig};
use condexp_core::synth::{f1, f3, gen_discrete, gen_gaussian, DiscreteJointSpec, GaussianLinearSpec};

fn small_f1(n: usize, seed: u64) -> condexp_core::data::Dataset {
    gen_gaussian(&GaussianLinearSpec { n, seed, ..f1() }).unwrap()
}

fn quick_base(data: &condexp_core::data::Dataset) -> Network {
    let net = Network::for_schema(NetworkConfig::default(), data.schema(), 1).unwrap();
    let cfg = TrainConfig {
        max_epochs: 15,
        batch_size: 256,
        ..TrainConfig::default()
    };
    train(&net, &Samples::from_dataset(data), &cfg, None).unwrap().0
}

fn quick_cen(base: &Network, data: &condexp_core::data::Dataset) -> CenModel {
    let mut cfg = CenConfig::default();
    cfg.train.max_epochs = 8;
    cfg.train.batch_size = 256;
    cfg.delta = 0.01;
    fit_cen(base, data, &cfg).unwrap().0
}

#[test]
fn fitted_pipeline_is_consistent() {
    let data = small_f1(1500, 4);
    let base = quick_base(&data);
    let cen = quick_cen(&base, &data);
    let q = data.q();

    let x = data.instance(7);
    let exact = shap_mean(&cen, &base, &x, ValueFunctionKind::Conditional, ShapMode::Exact).unwrap();
    let full = cen.query(&x, Coalition::full(q)).unwrap();
    assert!((exact.mu0 + exact.phi.iter().sum::<f64>() - full).abs() <= 1e-9);

    // Sampling every proper coalition reproduces the exact values.
    let all = ShapMode::Sampled(SampleOptions::new((1 << q) - 2, 3));
    let sampled = shap_mean(&cen, &base, &x, ValueFunctionKind::Conditional, all).unwrap();
    for (a, b) in sampled.phi.iter().zip(&exact.phi) {
        assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
    }

    let d1 = drop1(&cen, &base, &data, DenominatorSource::Base).unwrap();
    let a = anova(&cen, &base, &data, &[2, 0, 3, 1], DenominatorSource::Base).unwrap();
    assert!((a.sum() - a.total).abs() <= 1e-12);
    assert_eq!(a.get("x2").unwrap().to_bits(), d1.get("x2").unwrap().to_bits());
}

#[test]
fn saved_surrogate_answers_identically() {
    let data = small_f1(600, 5);
    let base = quick_base(&data);
    let cen = quick_cen(&base, &data);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cen.json");
    let ctx = ModelContext::new(data.schema().clone(), data.stats().to_vec());
    save(&path, &cen.surrogate, &ctx).unwrap();
    let reloaded = CenModel {
        surrogate: load(&path).unwrap().network,
        ..cen.clone()
    };
    for bits in 0..16 {
        let c = Coalition::from_bits(4, bits).unwrap();
        let x = data.instance(bits as usize);
        assert_eq!(cen.query(&x, c).unwrap().to_bits(), reloaded.query(&x, c).unwrap().to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn triplicated_blocks_have_fixed_sizes(seed in 0u64..1000, n in 4usize..60) {
        let data = small_f1(n, seed);
        let base = Network::for_schema(NetworkConfig::default(), data.schema(), seed).unwrap();
        let mask = select_mask(&base, &data, 1.0, Mu0Weighting::default()).unwrap();
        let set = build_triplicated(&base, &data, &mask, seed).unwrap();
        prop_assert_eq!(set.len(), 3 * n);
        for kind in [RowKind::Full, RowKind::Null, RowKind::Masked] {
            prop_assert_eq!(set.kinds.iter().filter(|&&k| k == kind).count(), n);
        }
        let again = build_triplicated(&base, &data, &mask, seed).unwrap();
        prop_assert_eq!(set.coalitions, again.coalitions);
    }

    #[test]
    fn discrete_draws_avoid_zero_mass_cells(seed in 0u64..1000) {
        let spec = DiscreteJointSpec { n: 500, seed, ..f3() };
        let data = gen_discrete(&spec).unwrap();
        for i in 0..data.n() {
            let cell = spec.cell_index(&data.instance(i).categorical);
            prop_assert!(spec.pmf[cell] > 0.0);
        }
    }
}
