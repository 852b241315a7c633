use std::path::{Path, PathBuf};

use log::info;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use condexp_core::cen::{build_triplicated, calibration, fit_cen, Calibration, CenModel, RowKind};
use condexp_core::data::{
    load_csv, load_csv_with_stats, proper_coalition_count, write_csv, Coalition, Dataset, Slot,
};
use condexp_core::explain::{
    anova, background_sample, default_grid, drop1, mcep, pdp, shap_loss_attribution, shap_mean,
    vpi, Curve, DenominatorSource, ImportanceEntry, ImportanceReport, LossShapOptions, Overlay,
    SampleOptions, ShapMode, ValueFunctionKind,
};
use condexp_core::nn::{
    self, mean_poisson_deviance, train, ModelContext, Network, Samples, TrainLog,
};
use condexp_core::shapley::Attribution;
use condexp_core::synth::{Fixture, FixtureSpec};

use crate::config::{RunConfig, ValueFn};
use crate::output::{percent, slug, x100, OutDir};
use crate::svg::{self, Series};
use crate::{CliError, Command, DenominatorArgs, FitArgs, SamplingArgs, ShapArgs};

const BASE_FILE: &str = "base.json";
const CEN_FILE: &str = "cen.json";
const LOSS_UNIT: &str = "average Poisson deviance x 10^-2";

/// Coalitions used by loss SHAP when none are requested: all proper ones up
/// to this many.
const DEFAULT_LOSS_SHAP_M: u128 = 2046;

pub fn dispatch(
    command: Command,
    mut cfg: RunConfig,
    out_flag: Option<PathBuf>,
) -> Result<(), CliError> {
    match command {
        Command::FitBase(a) => {
            let b = &mut cfg.base;
            apply_fit(
                &a,
                &mut b.max_epochs,
                &mut b.learning_rate,
                &mut b.batch_size,
                &mut b.patience,
                &mut b.seed,
            );
            fit_base_cmd(&cfg)
        }
        Command::FitCen(a) => {
            let c = &mut cfg.cen;
            apply_fit(
                &a.fit,
                &mut c.max_epochs,
                &mut c.learning_rate,
                &mut c.batch_size,
                &mut c.patience,
                &mut c.seed,
            );
            if let Some(d) = a.delta {
                c.delta = d;
            }
            fit_cen_cmd(&cfg)
        }
        Command::Drop1(a) => {
            apply_denominator(&a, &mut cfg);
            drop1_cmd(&cfg)
        }
        Command::Anova(a) => {
            apply_denominator(&a.denominator, &mut cfg);
            if a.order.is_some() {
                cfg.analysis.order = a.order;
            }
            anova_cmd(&cfg)
        }
        Command::Vpi(a) => {
            if let Some(s) = a.seed {
                cfg.analysis.seed = s;
            }
            if let Some(r) = a.repetitions {
                cfg.analysis.repetitions = r;
            }
            vpi_cmd(&cfg)
        }
        Command::Pdp(a) | Command::Mcep(a) if a.grid_points == Some(0) => {
            Err(CliError::Config("grid_points must be at least 1".into()))
        }
        Command::Pdp(a) => {
            if let Some(g) = a.grid_points {
                cfg.analysis.grid_points = g;
            }
            curve_cmd(&cfg, &a.feature, false)
        }
        Command::Mcep(a) => {
            if let Some(g) = a.grid_points {
                cfg.analysis.grid_points = g;
            }
            curve_cmd(&cfg, &a.feature, true)
        }
        Command::Shap(a) => {
            apply_sampling(&a.sampling, &mut cfg);
            if let Some(v) = a.value_fn {
                cfg.analysis.value_fn = v;
            }
            if let Some(b) = a.background_size {
                cfg.analysis.background_size = b;
            }
            shap_cmd(&cfg, &a)
        }
        Command::LossShap(a) => {
            apply_sampling(&a.sampling, &mut cfg);
            apply_denominator(&a.denominator, &mut cfg);
            if let Some(n) = a.n_cases {
                cfg.analysis.n_cases = n;
            }
            loss_shap_cmd(&cfg)
        }
        Command::Synth(a) => {
            let dir = out_flag.ok_or_else(|| CliError::Config("synth needs --out DIR".into()))?;
            synth_cmd(a.fixture, a.n, a.seed, a.test_n, &dir)
        }
    }
}

fn apply_fit(
    a: &FitArgs,
    epochs: &mut usize,
    lr: &mut f64,
    batch: &mut usize,
    patience: &mut usize,
    seed: &mut u64,
) {
    if let Some(v) = a.epochs {
        *epochs = v;
    }
    if let Some(v) = a.learning_rate {
        *lr = v;
    }
    if let Some(v) = a.batch_size {
        *batch = v;
    }
    if let Some(v) = a.patience {
        *patience = v;
    }
    if let Some(v) = a.seed {
        *seed = v;
    }
}

fn apply_denominator(a: &DenominatorArgs, cfg: &mut RunConfig) {
    if let Some(d) = a.denominator {
        cfg.analysis.denominator = d;
    }
}

fn apply_sampling(a: &SamplingArgs, cfg: &mut RunConfig) {
    let s = &mut cfg.analysis;
    if a.m.is_some() {
        s.m = a.m;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if let Some(v) = a.sampling {
        s.sampling = v;
    }
    if let Some(v) = a.big_weight {
        s.big_weight = v;
    }
}

// ---------------------------------------------------------------- loading

fn load_base(cfg: &RunConfig) -> Result<(Network, ModelContext), CliError> {
    let file = nn::load(cfg.paths.model_dir.join(BASE_FILE))?;
    if let Some(schema) = &cfg.schema {
        if schema.fingerprint() != file.context.schema_fingerprint {
            return Err(CliError::Config(
                "the configured schema differs from the base model's".into(),
            ));
        }
    }
    Ok((file.network, file.context))
}

fn load_cen(cfg: &RunConfig, base: &Network) -> Result<CenModel, CliError> {
    let (cen, _) = CenModel::load(cfg.paths.model_dir.join(CEN_FILE))?;
    if cen.base_fingerprint != base.fingerprint() {
        return Err(CliError::Config(
            "the surrogate was fitted to a different base model; rerun fit-cen".into(),
        ));
    }
    Ok(cen)
}

fn learning_data(cfg: &RunConfig, ctx: &ModelContext) -> Result<Dataset, CliError> {
    Ok(load_csv_with_stats(
        cfg.train_path()?,
        &ctx.schema,
        &ctx.standardization,
    )?)
}

/// The test data, or the learning data when no test file is configured.
fn test_data(cfg: &RunConfig, ctx: &ModelContext) -> Result<Dataset, CliError> {
    match &cfg.paths.test {
        Some(p) => Ok(load_csv_with_stats(p, &ctx.schema, &ctx.standardization)?),
        None => learning_data(cfg, ctx),
    }
}

fn model_dir(cfg: &RunConfig) -> Result<OutDir, CliError> {
    OutDir::create(&cfg.paths.model_dir)
}

fn out_dir(cfg: &RunConfig) -> Result<OutDir, CliError> {
    OutDir::create(&cfg.paths.output_dir)
}

/// Raw value of feature `j`: original units, or the level index.
fn raw_value(data: &Dataset, i: usize, j: usize) -> f64 {
    match data.schema().slots()[j] {
        Slot::Continuous(k) => data.stats()[k].destandardize(data.continuous_row(i)[k]),
        Slot::Categorical(k) => data.categorical_row(i)[k] as f64,
    }
}

/// Exposure-weighted mean frequency.
fn portfolio_frequency(data: &Dataset) -> f64 {
    let v = data.exposure();
    let claims: f64 = (0..data.n()).map(|i| data.frequency(i) * v[i]).sum();
    claims / v.iter().sum::<f64>()
}

// ---------------------------------------------------------------- fitting

#[derive(Serialize)]
struct DevianceRow {
    model: &'static str,
    in_sample_x100: f64,
    out_of_sample_x100: Option<f64>,
}

#[derive(Serialize)]
struct TrainingSummary {
    best_epoch: usize,
    epochs_run: usize,
    stopped_early: bool,
    train_rows: usize,
    validation_rows: usize,
}

impl From<&TrainLog> for TrainingSummary {
    fn from(log: &TrainLog) -> Self {
        Self {
            best_epoch: log.best_epoch,
            epochs_run: log.epochs.len(),
            stopped_early: log.stopped_early,
            train_rows: log.train_rows,
            validation_rows: log.validation_rows,
        }
    }
}

#[derive(Serialize)]
struct BaseMetrics {
    loss_unit: &'static str,
    table: Vec<DevianceRow>,
    null_frequency: f64,
    training: TrainingSummary,
    seed: u64,
    fingerprint: String,
}

fn write_training_log(out: &OutDir, name: &str, log: &TrainLog) -> Result<(), CliError> {
    let header = ["epoch", "train_loss", "validation_loss"].map(String::from);
    let first = vec![
        "0".into(),
        log.initial_train_loss.to_string(),
        log.initial_validation_loss.to_string(),
    ];
    let rows = std::iter::once(first).chain(log.epochs.iter().map(|e| {
        vec![
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.validation_loss.to_string(),
        ]
    }));
    out.csv(name, &header, rows)
}

fn fit_base_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let schema = cfg.schema()?;
    let learn = load_csv(cfg.train_path()?, schema)?;
    let test = match &cfg.paths.test {
        Some(p) => Some(load_csv_with_stats(p, schema, learn.stats())?),
        None => None,
    };
    let mut net = Network::for_schema(cfg.base.network(), schema, cfg.base.seed)?;
    let null_frequency = portfolio_frequency(&learn);
    if cfg.base.init_output_bias {
        net.init_output_bias(null_frequency)?;
    }
    info!("fitting base model on {} rows", learn.n());
    let (base, log) = train(
        &net,
        &Samples::from_dataset(&learn),
        &cfg.base.train(),
        None,
    )?;

    let ctx = ModelContext::new(schema.clone(), learn.stats().to_vec());
    nn::save(model_dir(cfg)?.path(BASE_FILE), &base, &ctx)?;

    let null_in = mean_poisson_deviance(&learn, &vec![null_frequency; learn.n()])?;
    let full_in = mean_poisson_deviance(&learn, &base.predict_dataset(&learn)?)?;
    let (null_out, full_out) = match &test {
        Some(t) => (
            Some(x100(mean_poisson_deviance(
                t,
                &vec![null_frequency; t.n()],
            )?)),
            Some(x100(mean_poisson_deviance(t, &base.predict_dataset(t)?)?)),
        ),
        None => (None, None),
    };
    let metrics = BaseMetrics {
        loss_unit: LOSS_UNIT,
        table: vec![
            DevianceRow {
                model: "null",
                in_sample_x100: x100(null_in),
                out_of_sample_x100: null_out,
            },
            DevianceRow {
                model: "full",
                in_sample_x100: x100(full_in),
                out_of_sample_x100: full_out,
            },
        ],
        null_frequency,
        training: (&log).into(),
        seed: cfg.base.seed,
        fingerprint: base.fingerprint(),
    };
    let out = out_dir(cfg)?;
    out.json("base_metrics.json", &metrics)?;
    write_training_log(&out, "base_training.csv", &log)
}

#[derive(Serialize)]
struct MaskValue {
    feature: String,
    /// Original units for continuous features; absent for categorical
    /// features, which use the fictitious level.
    value: Option<f64>,
}

#[derive(Serialize)]
struct CalibrationFile {
    loss_unit: &'static str,
    /// Null model = the mean base prediction `μ0`.
    table: Vec<DevianceRow>,
    mu0: f64,
    donor_row: usize,
    delta: f64,
    mask: Vec<MaskValue>,
    warm_started: bool,
    notice: Option<String>,
    training: TrainingSummary,
    seed: u64,
}

fn calibration_rows(learn: &Calibration, test: Option<&Calibration>) -> Vec<DevianceRow> {
    let pick: [(&'static str, fn(&Calibration) -> f64); 4] = [
        ("null", |c| c.null),
        ("full", |c| c.full),
        ("surrogate-null", |c| c.surrogate_null),
        ("surrogate-full", |c| c.surrogate_full),
    ];
    pick.iter()
        .map(|(model, f)| DevianceRow {
            model,
            in_sample_x100: x100(f(learn)),
            out_of_sample_x100: test.map(|t| x100(f(t))),
        })
        .collect()
}

fn fit_cen_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let (base, ctx) = load_base(cfg)?;
    let learn = learning_data(cfg, &ctx)?;
    let ccfg = cfg.cen.config(base.config());
    info!("fitting surrogate on {} triplicated rows", 3 * learn.n());
    let (cen, report) = fit_cen(&base, &learn, &ccfg)?;
    cen.save(model_dir(cfg)?.path(CEN_FILE), &ctx)?;

    let test_cal = match &cfg.paths.test {
        Some(_) => Some(calibration(&cen, &base, &test_data(cfg, &ctx)?)?),
        None => None,
    };
    let mask = ctx
        .schema
        .features
        .iter()
        .zip(ctx.schema.slots())
        .map(|(f, slot)| MaskValue {
            feature: f.name.clone(),
            value: match slot {
                Slot::Continuous(k) => {
                    Some(ctx.standardization[k].destandardize(cen.mask.continuous[k]))
                }
                Slot::Categorical(_) => None,
            },
        })
        .collect();
    let file = CalibrationFile {
        loss_unit: LOSS_UNIT,
        table: calibration_rows(&report.calibration, test_cal.as_ref()),
        mu0: cen.mask.mu0,
        donor_row: cen.mask.donor_row,
        delta: cen.mask.delta,
        mask,
        warm_started: report.warm_started,
        notice: report.notice.clone(),
        training: (&report.log).into(),
        seed: ccfg.seed,
    };
    let out = out_dir(cfg)?;
    out.json("calibration.json", &file)?;
    write_training_log(&out, "cen_training.csv", &report.log)?;
    write_cen_scatter(&out, &base, &cen, &learn, ccfg.seed)
}

/// Surrogate predictions against their targets for the full, null and
/// masked training rows.
fn write_cen_scatter(
    out: &OutDir,
    base: &Network,
    cen: &CenModel,
    learn: &Dataset,
    seed: u64,
) -> Result<(), CliError> {
    let set = build_triplicated(base, learn, &cen.mask, seed)?;
    let preds = (0..set.len())
        .into_par_iter()
        .map(|r| {
            cen.surrogate
                .forward(set.samples.continuous(r), set.samples.categorical(r))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let rank = |k: RowKind| match k {
        RowKind::Full => 0,
        RowKind::Null => 1,
        RowKind::Masked => 2,
    };
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by_key(|&r| (rank(set.kinds[r]), set.source_rows[r]));
    let name = ["full", "null", "masked"];
    let header = [
        "kind",
        "source_row",
        "coalition_bits",
        "target",
        "prediction",
    ]
    .map(String::from);
    out.csv(
        "cen_scatter.csv",
        &header,
        order.iter().map(|&r| {
            vec![
                name[rank(set.kinds[r])].to_string(),
                set.source_rows[r].to_string(),
                set.coalitions[r].bits().to_string(),
                set.samples.target(r).to_string(),
                preds[r].to_string(),
            ]
        }),
    )?;
    // At most ~1500 plotted points per kind.
    let stride = (learn.n() / 1500).max(1);
    let points: Vec<(f64, f64, Option<f64>)> = order
        .iter()
        .filter(|&&r| set.source_rows[r] % stride == 0)
        .map(|&r| {
            (
                set.samples.target(r),
                preds[r],
                Some(rank(set.kinds[r]) as f64),
            )
        })
        .collect();
    out.svg(
        "cen_scatter.svg",
        svg::scatter(
            "Surrogate vs target",
            "target",
            "surrogate prediction",
            &points,
            Some("kind (full, null, masked)"),
        ),
    )
}

// ---------------------------------------------------------------- importance

#[derive(Serialize)]
struct ImportanceFile<'a> {
    loss_unit: &'static str,
    denominator_source: DenominatorSource,
    full_loss_x100: f64,
    null_loss_x100: f64,
    total_percent: f64,
    report: &'a ImportanceReport,
}

fn importance_file(report: &ImportanceReport, source: DenominatorSource) -> ImportanceFile<'_> {
    ImportanceFile {
        loss_unit: LOSS_UNIT,
        denominator_source: source,
        full_loss_x100: x100(report.denominator),
        null_loss_x100: x100(report.null_loss),
        total_percent: percent(report.total),
        report,
    }
}

fn importance_rows(entries: &[ImportanceEntry]) -> impl Iterator<Item = Vec<String>> + '_ {
    entries.iter().map(|e| {
        vec![
            e.feature.clone(),
            e.value.to_string(),
            percent(e.value).to_string(),
        ]
    })
}

fn importance_header() -> [String; 3] {
    ["feature", "value", "percent"].map(String::from)
}

fn write_bar_report(
    out: &OutDir,
    stem: &str,
    title: &str,
    report: &ImportanceReport,
    source: DenominatorSource,
) -> Result<(), CliError> {
    out.json(&format!("{stem}.json"), &importance_file(report, source))?;
    out.csv(
        &format!("{stem}.csv"),
        &importance_header(),
        importance_rows(&report.entries),
    )?;
    let labels: Vec<String> = report.entries.iter().map(|e| e.feature.clone()).collect();
    let values: Vec<f64> = report.entries.iter().map(|e| percent(e.value)).collect();
    out.svg(
        &format!("{stem}.svg"),
        svg::bar_chart(title, &labels, &values, "relative loss change (%)"),
    )
}

struct Fitted {
    base: Network,
    ctx: ModelContext,
    cen: CenModel,
}

fn load_fitted(cfg: &RunConfig) -> Result<Fitted, CliError> {
    let (base, ctx) = load_base(cfg)?;
    let cen = load_cen(cfg, &base)?;
    Ok(Fitted { base, ctx, cen })
}

fn drop1_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let m = load_fitted(cfg)?;
    let test = test_data(cfg, &m.ctx)?;
    let source = cfg.analysis.denominator;
    let report = drop1(&m.cen, &m.base, &test, source)?;
    write_bar_report(&out_dir(cfg)?, "drop1", "drop1 importance", &report, source)
}

fn vpi_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let (base, ctx) = load_base(cfg)?;
    let test = test_data(cfg, &ctx)?;
    let report = vpi(&base, &test, cfg.analysis.seed, cfg.analysis.repetitions)?;
    write_bar_report(
        &out_dir(cfg)?,
        "vpi",
        "Permutation importance",
        &report,
        DenominatorSource::Base,
    )
}

fn anova_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let m = load_fitted(cfg)?;
    let test = test_data(cfg, &m.ctx)?;
    let order: Vec<usize> = match &cfg.analysis.order {
        Some(names) => names
            .iter()
            .map(|n| feature_index(&m.ctx, n))
            .collect::<Result<_, _>>()?,
        None => (0..m.ctx.schema.q()).collect(),
    };
    let source = cfg.analysis.denominator;
    let report = anova(&m.cen, &m.base, &test, &order, source)?;
    let out = out_dir(cfg)?;
    out.json("anova.json", &importance_file(&report, source))?;
    out.csv(
        "anova.csv",
        &importance_header(),
        importance_rows(&report.entries),
    )?;
    let steps: Vec<(String, f64)> = report
        .entries
        .iter()
        .map(|e| (e.feature.clone(), -percent(e.value)))
        .collect();
    out.svg(
        "anova.svg",
        svg::waterfall(
            "anova: loss decrease along the order",
            ("null model", percent(report.total)),
            &steps,
            "full model",
            "loss relative to the full model (%)",
        ),
    )
}

fn feature_index(ctx: &ModelContext, name: &str) -> Result<usize, CliError> {
    ctx.schema
        .index_of(name)
        .ok_or_else(|| CliError::Config(format!("unknown feature `{name}`")))
}

// ---------------------------------------------------------------- curves

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn curve_cmd(cfg: &RunConfig, feature: &str, conditional: bool) -> Result<(), CliError> {
    let (base, ctx) = load_base(cfg)?;
    let j = feature_index(&ctx, feature)?;
    let learn = learning_data(cfg, &ctx)?;
    let grid = default_grid(&learn, j, cfg.analysis.grid_points)?;
    let (stem, curve) = if conditional {
        let cen = load_cen(cfg, &base)?;
        let overlay = Overlay {
            data: &learn,
            base: &base,
        };
        ("mcep", mcep(&cen, &ctx, j, &grid, Some(overlay))?)
    } else {
        ("pdp", pdp(&base, &learn, j, &grid)?)
    };
    let stem = format!("{stem}_{}", slug(feature));
    let out = out_dir(cfg)?;
    out.json(&format!("{stem}.json"), &curve)?;
    let header = [
        "value",
        "label",
        "estimate",
        "supported",
        "count",
        "observed",
        "model_mean",
    ]
    .map(String::from);
    out.csv(
        &format!("{stem}.csv"),
        &header,
        curve.points.iter().map(|p| {
            vec![
                p.value.to_string(),
                p.label.clone(),
                opt(p.estimate),
                p.supported.to_string(),
                p.count.to_string(),
                opt(p.observed),
                opt(p.model_mean),
            ]
        }),
    )?;
    let categorical = ctx.schema.features[j].is_categorical();
    out.svg(
        &format!("{stem}.svg"),
        curve_svg(&curve, conditional, categorical),
    )
}

fn curve_svg(curve: &Curve, conditional: bool, categorical: bool) -> String {
    let pick = |f: fn(&condexp_core::explain::CurvePoint) -> Option<f64>| -> Vec<(f64, f64)> {
        curve
            .points
            .iter()
            .filter_map(|p| f(p).map(|v| (p.value, v)))
            .collect()
    };
    let mut series = vec![Series {
        name: if conditional {
            "MCEP".into()
        } else {
            "PDP".into()
        },
        points: pick(|p| p.estimate),
        color: "#2b6cb0",
        dashed: false,
    }];
    if conditional {
        series.push(Series {
            name: "observed frequency".into(),
            points: pick(|p| p.observed),
            color: "#c53030",
            dashed: false,
        });
        series.push(Series {
            name: "mean prediction".into(),
            points: pick(|p| p.model_mean),
            color: "#2f855a",
            dashed: true,
        });
    }
    let labels: Vec<(f64, String)> = curve
        .points
        .iter()
        .map(|p| (p.value, p.label.clone()))
        .collect();
    let title = if conditional {
        "Marginal conditional expectation"
    } else {
        "Partial dependence"
    };
    svg::line_chart(
        title,
        &curve.feature,
        "expected frequency",
        &series,
        categorical.then_some(&labels[..]),
    )
}

// ---------------------------------------------------------------- SHAP

fn shap_mode(cfg: &RunConfig) -> ShapMode {
    let a = &cfg.analysis;
    match a.m {
        Some(m) => ShapMode::Sampled(SampleOptions {
            m,
            seed: a.seed,
            sampling: a.sampling,
            big_weight: a.big_weight,
        }),
        None => ShapMode::Exact,
    }
}

fn value_fn_name(v: ValueFn) -> &'static str {
    match v {
        ValueFn::Conditional => "conditional",
        ValueFn::Interventional => "interventional",
    }
}

#[derive(Serialize)]
struct ShapFile {
    row: usize,
    value_fn: &'static str,
    m: Option<usize>,
    seed: u64,
    mu0: f64,
    phi: Vec<ImportanceEntry>,
    /// `mu0 + Σ phi`.
    reconstruction: f64,
    /// Base model prediction `μ(x)`.
    prediction: f64,
    /// Surrogate at the grand coalition.
    surrogate_full: f64,
}

fn shap_cmd(cfg: &RunConfig, args: &ShapArgs) -> Result<(), CliError> {
    let m = load_fitted(cfg)?;
    let test = test_data(cfg, &m.ctx)?;
    let background = match cfg.analysis.value_fn {
        ValueFn::Interventional => {
            let learn = learning_data(cfg, &m.ctx)?;
            let size = match cfg.analysis.background_size {
                0 => learn.n(),
                s => s,
            };
            Some(background_sample(&learn, size, cfg.analysis.seed))
        }
        ValueFn::Conditional => None,
    };
    let kind = match &background {
        Some(bg) => ValueFunctionKind::Interventional(bg),
        None => ValueFunctionKind::Conditional,
    };
    let out = out_dir(cfg)?;
    let vf = value_fn_name(cfg.analysis.value_fn);
    let names: Vec<String> = m.ctx.schema.names().into_iter().map(String::from).collect();

    if let Some(row) = args.target.instance {
        if row >= test.n() {
            return Err(CliError::Config(format!(
                "instance {row} outside 0..{}",
                test.n()
            )));
        }
        let x = test.instance(row);
        let att = shap_mean(&m.cen, &m.base, &x, kind, shap_mode(cfg))?;
        let file = ShapFile {
            row,
            value_fn: vf,
            m: cfg.analysis.m,
            seed: cfg.analysis.seed,
            mu0: att.mu0,
            phi: names
                .iter()
                .zip(&att.phi)
                .map(|(f, &value)| ImportanceEntry {
                    feature: f.clone(),
                    value,
                })
                .collect(),
            reconstruction: att.total(),
            prediction: m.base.predict(&x)?,
            surrogate_full: m.cen.query(&x, Coalition::full(m.cen.q()))?,
        };
        let stem = format!("shap_{row}_{vf}");
        out.json(&format!("{stem}.json"), &file)?;
        let steps: Vec<(String, f64)> =
            names.iter().cloned().zip(att.phi.iter().copied()).collect();
        return out.svg(
            &format!("{stem}.svg"),
            svg::waterfall(
                &format!("SHAP decomposition of row {row}"),
                ("mu0", att.mu0),
                &steps,
                "prediction",
                "expected frequency",
            ),
        );
    }

    let cases = args.target.cases.expect("clap requires a target");
    if cases == 0 || cases > test.n() {
        return Err(CliError::Config(format!(
            "cases must lie in 1..={}",
            test.n()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.analysis.seed);
    let mut rows = index::sample(&mut rng, test.n(), cases).into_vec();
    rows.sort_unstable();
    let mode = shap_mode(cfg);
    let atts = rows
        .iter()
        .map(|&i| shap_mean(&m.cen, &m.base, &test.instance(i), kind, mode))
        .collect::<Result<Vec<Attribution>, _>>()?;
    write_dependence(&out, vf, &names, &test, &rows, &atts, cfg.analysis.seed)
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

#[derive(Serialize)]
struct Coloring {
    feature: String,
    color_by: Option<String>,
    correlation: f64,
}

#[derive(Serialize)]
struct DependenceFile {
    value_fn: &'static str,
    cases: usize,
    seed: u64,
    /// Each dependence plot is colored by the other feature whose values
    /// correlate most strongly (in absolute value) with the plotted SHAP values.
    coloring: Vec<Coloring>,
}

fn write_dependence(
    out: &OutDir,
    vf: &'static str,
    names: &[String],
    test: &Dataset,
    rows: &[usize],
    atts: &[Attribution],
    seed: u64,
) -> Result<(), CliError> {
    let q = names.len();
    let values: Vec<Vec<f64>> = (0..q)
        .map(|j| rows.iter().map(|&i| raw_value(test, i, j)).collect())
        .collect();
    let phis: Vec<Vec<f64>> = (0..q)
        .map(|j| atts.iter().map(|a| a.phi[j]).collect())
        .collect();

    let mut header = vec!["row".to_string()];
    header.extend(names.iter().cloned());
    header.extend(names.iter().map(|n| format!("phi_{n}")));
    header.push("mu0".into());
    out.csv(
        &format!("shap_dependence_{vf}.csv"),
        &header,
        rows.iter().enumerate().map(|(r, &i)| {
            let mut rec = vec![i.to_string()];
            rec.extend((0..q).map(|j| values[j][r].to_string()));
            rec.extend((0..q).map(|j| phis[j][r].to_string()));
            rec.push(atts[r].mu0.to_string());
            rec
        }),
    )?;

    let mut coloring = Vec::with_capacity(q);
    for j in 0..q {
        let best = (0..q)
            .filter(|&k| k != j)
            .map(|k| (k, correlation(&values[k], &phis[j])))
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()));
        let points: Vec<(f64, f64, Option<f64>)> = (0..rows.len())
            .map(|r| (values[j][r], phis[j][r], best.map(|(k, _)| values[k][r])))
            .collect();
        out.svg(
            &format!("shap_dependence_{vf}_{}.svg", slug(&names[j])),
            svg::scatter(
                &format!("SHAP dependence: {}", names[j]),
                &names[j],
                "SHAP value",
                &points,
                best.map(|(k, _)| names[k].as_str()),
            ),
        )?;
        coloring.push(Coloring {
            feature: names[j].clone(),
            color_by: best.map(|(k, _)| names[k].clone()),
            correlation: best.map_or(0.0, |(_, c)| c),
        });
    }
    out.json(
        &format!("shap_dependence_{vf}.json"),
        &DependenceFile {
            value_fn: vf,
            cases: rows.len(),
            seed,
            coloring,
        },
    )
}

#[derive(Serialize)]
struct LossShapFile<'a> {
    #[serde(flatten)]
    importance: ImportanceFile<'a>,
    /// Average loss attributions `Φ_j`.
    average_phi: Vec<ImportanceEntry>,
    coalitions: usize,
}

fn loss_shap_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let m = load_fitted(cfg)?;
    let test = test_data(cfg, &m.ctx)?;
    let q = m.cen.q();
    let a = &cfg.analysis;
    let coalitions =
        a.m.unwrap_or_else(|| proper_coalition_count(q).min(DEFAULT_LOSS_SHAP_M) as usize);
    let opts = LossShapOptions {
        n_cases: a.n_cases,
        sample: SampleOptions {
            m: coalitions,
            seed: a.seed,
            sampling: a.sampling,
            big_weight: a.big_weight,
        },
        denominator: a.denominator,
    };
    let result = shap_loss_attribution(&m.cen, &m.base, &test, &opts)?;
    let names: Vec<String> = m.ctx.schema.names().into_iter().map(String::from).collect();
    let out = out_dir(cfg)?;
    out.json(
        "loss_shap.json",
        &LossShapFile {
            importance: importance_file(&result.report, a.denominator),
            average_phi: names
                .iter()
                .zip(&result.average)
                .map(|(f, &value)| ImportanceEntry {
                    feature: f.clone(),
                    value,
                })
                .collect(),
            coalitions: result.coalitions.len(),
        },
    )?;
    out.csv(
        "loss_shap.csv",
        &importance_header(),
        importance_rows(&result.report.entries),
    )?;
    let mut header = vec!["row".to_string(), "null_loss".into(), "full_loss".into()];
    header.extend(names.iter().map(|n| format!("phi_{n}")));
    out.csv(
        "loss_shap_cases.csv",
        &header,
        result.cases.iter().map(|c| {
            let mut rec = vec![
                c.row.to_string(),
                c.attribution.mu0.to_string(),
                c.full_loss.to_string(),
            ];
            rec.extend(c.attribution.phi.iter().map(f64::to_string));
            rec
        }),
    )?;
    let values: Vec<f64> = result
        .report
        .entries
        .iter()
        .map(|e| percent(e.value))
        .collect();
    out.svg(
        "loss_shap.svg",
        svg::bar_chart(
            "SHAP deviance loss decomposition",
            &names,
            &values,
            "relative loss decrease (%)",
        ),
    )
}

// ---------------------------------------------------------------- synth

#[derive(Serialize)]
struct Sample {
    file: &'static str,
    n: usize,
    seed: u64,
}

#[derive(Serialize)]
struct Manifest {
    fixture: String,
    train: Sample,
    test: Sample,
    spec: FixtureSpec,
}

fn sample_of(spec: &FixtureSpec) -> (usize, u64) {
    match spec {
        FixtureSpec::Gaussian(s) => (s.n, s.seed),
        FixtureSpec::Discrete(s) => (s.n, s.seed),
    }
}

fn synth_cmd(
    fixture: Fixture,
    n: Option<usize>,
    seed: Option<u64>,
    test_n: usize,
    dir: &Path,
) -> Result<(), CliError> {
    let base = fixture.spec();
    let (n0, s0) = sample_of(&base);
    let (n, seed) = (n.unwrap_or(n0), seed.unwrap_or(s0));
    let test_seed = seed.wrapping_add(100);
    let spec = base.with_sample(n, seed);
    let out = OutDir::create(dir)?;
    write_csv(&spec.generate()?, out.path("train.csv"))?;
    write_csv(
        &spec.clone().with_sample(test_n, test_seed).generate()?,
        out.path("test.csv"),
    )?;
    out.json(
        "manifest.json",
        &Manifest {
            fixture: fixture.to_string(),
            train: Sample {
                file: "train.csv",
                n,
                seed,
            },
            test: Sample {
                file: "test.csv",
                n: test_n,
                seed: test_seed,
            },
            spec: spec.clone(),
        },
    )?;
    let mut cfg = RunConfig {
        schema: Some(spec.schema()),
        ..RunConfig::default()
    };
    cfg.paths.train = Some("train.csv".into());
    cfg.paths.test = Some("test.csv".into());
    std::fs::write(out.path("config.toml"), cfg.to_toml()).map_err(|source| CliError::Write {
        path: out.path("config.toml"),
        source,
    })
}
