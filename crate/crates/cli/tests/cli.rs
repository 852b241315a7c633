use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_condexp"))
}

/// Runs `condexp --config <dir>/config.toml <args>` and returns the exit code.
fn run(dir: &Path, args: &[&str]) -> i32 {
    let out = bin()
        .arg("--config")
        .arg(dir.join("config.toml"))
        .args(args)
        .output()
        .unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.code().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn read(path: PathBuf) -> String {
    std::fs::read_to_string(path).unwrap()
}

/// Small fixture with fitted base and surrogate models.
fn fitted(fixture: &str, n: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args([
            "synth",
            "--fixture",
            fixture,
            "--n",
            n,
            "--test-n",
            "1000",
            "--out",
        ])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        run(
            dir.path(),
            &["fit-base", "--epochs", "20", "--batch-size", "256"]
        ),
        0
    );
    assert_eq!(
        run(
            dir.path(),
            &["fit-cen", "--epochs", "10", "--batch-size", "256"]
        ),
        0
    );
    dir
}

#[test]
fn synth_writes_data_manifest_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["synth", "--fixture", "F2", "--n", "300", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let manifest = json(dir.path().join("manifest.json"));
    assert_eq!(manifest["fixture"], "F2");
    assert_eq!(manifest["train"]["n"], 300);
    assert_eq!(manifest["spec"]["family"], "gaussian");
    let train = read(dir.path().join("train.csv"));
    assert_eq!(train.lines().next().unwrap(), "x1,x2,x3,x4,y");
    assert_eq!(train.lines().count(), 301);
    assert!(read(dir.path().join("config.toml")).contains("[schema]"));
}

#[test]
fn fit_base_beats_null_and_is_reproducible() {
    let dir = fitted("F1", "3000");
    let metrics = read(dir.path().join("output/base_metrics.json"));
    let m: Value = serde_json::from_str(&metrics).unwrap();
    let table = m["table"].as_array().unwrap();
    assert_eq!(table[0]["model"], "null");
    let null = table[0]["out_of_sample_x100"].as_f64().unwrap();
    let full = table[1]["out_of_sample_x100"].as_f64().unwrap();
    assert!(full < null, "{full} vs {null}");

    assert_eq!(
        run(
            dir.path(),
            &["fit-base", "--epochs", "20", "--batch-size", "256"]
        ),
        0
    );
    assert_eq!(read(dir.path().join("output/base_metrics.json")), metrics);
}

fn two_feature_config(dir: &Path) {
    std::fs::write(
        dir.join("config.toml"),
        r#"
[schema]
response = "y"
features = [
  { name = "a", kind = "continuous" },
  { name = "b", kind = "categorical", levels = ["u", "v", "w"] },
]

[paths]
train = "train.csv"
test = "test.csv"
"#,
    )
    .unwrap();
}

fn constant_csv(rows: usize, y: u32) -> String {
    let mut csv = String::from("a,b,y\n");
    for i in 0..rows {
        csv.push_str(&format!(
            "{},{},{}\n",
            (i % 17) as f64 / 3.0,
            ["u", "v", "w"][i % 3],
            y
        ));
    }
    csv
}

#[test]
fn constant_response_gives_the_null_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    two_feature_config(d);
    std::fs::write(d.join("train.csv"), constant_csv(600, 2)).unwrap();
    std::fs::write(d.join("test.csv"), constant_csv(60, 2)).unwrap();
    assert_eq!(run(d, &["fit-base"]), 0);
    let m = json(d.join("output/base_metrics.json"));
    assert_eq!(m["null_frequency"], 2.0);
    let file = condexp_core::nn::load(d.join("models/base.json")).unwrap();
    let data = condexp_core::data::load_csv_with_stats(
        d.join("train.csv"),
        &file.context.schema,
        &file.context.standardization,
    )
    .unwrap();
    let preds = file.network.predict_dataset(&data).unwrap();
    let mean = preds.iter().sum::<f64>() / preds.len() as f64;
    assert!((mean / 2.0 - 1.0).abs() <= 1e-3, "{mean}");
}

#[test]
fn cen_outputs_calibration_and_scatter() {
    let dir = fitted("F1", "2000");
    let cal = json(dir.path().join("output/calibration.json"));
    let rows: Vec<&str> = cal["table"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["model"].as_str().unwrap())
        .collect();
    assert_eq!(rows, ["null", "full", "surrogate-null", "surrogate-full"]);
    let scatter = read(dir.path().join("output/cen_scatter.csv"));
    let mut lines = scatter.lines();
    assert_eq!(
        lines.next().unwrap(),
        "kind,source_row,coalition_bits,target,prediction"
    );
    let kinds: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(kinds.len(), 6000);
    for k in ["full", "null", "masked"] {
        assert_eq!(kinds.iter().filter(|&&x| x == k).count(), 2000);
    }
    assert!(read(dir.path().join("output/cen_scatter.svg")).contains("viewBox=\"0 0 800 600\""));
}

#[test]
fn analyses_on_gaussian_fixture() {
    let dir = fitted("F1", "2000");
    let d = dir.path();
    let out = d.join("output");

    assert_eq!(run(d, &["drop1"]), 0);
    let first = read(out.join("drop1.json"));
    assert_eq!(run(d, &["drop1"]), 0);
    assert_eq!(read(out.join("drop1.json")), first);
    assert_eq!(
        read(out.join("drop1.csv")).lines().next().unwrap(),
        "feature,value,percent"
    );

    assert_eq!(run(d, &["anova", "--order", "x1,x2,x3,x4"]), 0);
    let a = json(out.join("anova.json"));
    assert_eq!(run(d, &["anova", "--order", "x4,x2,x1,x3"]), 0);
    let b = json(out.join("anova.json"));
    let total = |v: &Value| v["report"]["total"].as_f64().unwrap();
    let sum = |v: &Value| {
        v["report"]["entries"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| e["value"].as_f64().unwrap())
            .sum::<f64>()
    };
    assert!((total(&a) - total(&b)).abs() <= 1e-12);
    assert!((sum(&a) - total(&a)).abs() <= 1e-12);
    assert!((sum(&b) - total(&b)).abs() <= 1e-12);

    assert_eq!(run(d, &["vpi", "--seed", "3"]), 0);
    assert_eq!(json(out.join("vpi.json"))["report"]["kind"]["seed"], 3);

    assert_eq!(
        run(d, &["shap", "--instance", "0", "--value-fn", "conditional"]),
        0
    );
    let s = json(out.join("shap_0_conditional.json"));
    let phi: f64 = s["phi"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["value"].as_f64().unwrap())
        .sum();
    let mu0 = s["mu0"].as_f64().unwrap();
    assert!((mu0 + phi - s["surrogate_full"].as_f64().unwrap()).abs() < 1e-9);
    assert!((s["reconstruction"].as_f64().unwrap() - mu0 - phi).abs() < 1e-12);
    assert!(read(out.join("shap_0_conditional.svg")).starts_with("<svg"));

    assert_eq!(
        run(
            d,
            &[
                "shap",
                "--instance",
                "1",
                "--value-fn",
                "interventional",
                "--m",
                "10",
                "--seed",
                "2"
            ]
        ),
        0
    );
    assert_eq!(json(out.join("shap_1_interventional.json"))["m"], 10);

    assert_eq!(
        run(d, &["shap", "--cases", "20", "--value-fn", "conditional"]),
        0
    );
    let dep = json(out.join("shap_dependence_conditional.json"));
    assert_eq!(dep["coloring"].as_array().unwrap().len(), 4);
    assert!(out.join("shap_dependence_conditional_x1.svg").exists());

    assert_eq!(
        run(
            d,
            &["loss-shap", "--n-cases", "100", "--m", "14", "--seed", "5"]
        ),
        0
    );
    let ls = json(out.join("loss_shap.json"));
    assert_eq!(ls["report"]["kind"]["kind"], "shap-anova");
    let cases = read(out.join("loss_shap_cases.csv"));
    assert_eq!(cases.lines().count(), 101);
    assert_eq!(
        cases.lines().next().unwrap(),
        "row,null_loss,full_loss,phi_x1,phi_x2,phi_x3,phi_x4"
    );

    assert_eq!(
        run(d, &["pdp", "--feature", "x1", "--grid-points", "11"]),
        0
    );
    let pdp = read(out.join("pdp_x1.csv"));
    assert_eq!(
        pdp.lines().next().unwrap(),
        "value,label,estimate,supported,count,observed,model_mean"
    );
    assert_eq!(pdp.lines().count(), 12);
}

#[test]
fn mcep_flags_zero_mass_levels() {
    let dir = fitted("F3", "3000");
    assert_eq!(run(dir.path(), &["mcep", "--feature", "f2"]), 0);
    let curve = json(dir.path().join("output/mcep_f2.json"));
    let points = curve["points"].as_array().unwrap();
    assert_eq!(points.len(), 4);
    // Level "d" of f2 has zero probability in the fixture.
    assert_eq!(points[3]["supported"], false);
    assert!(points[3]["estimate"].is_null());
    assert!(points[..3]
        .iter()
        .all(|p| p["supported"] == true && p["estimate"].is_f64()));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Usage errors.
    assert_eq!(bin().arg("frobnicate").status().unwrap().code(), Some(2));
    assert_eq!(
        bin()
            .args(["--config", "/nonexistent.toml", "drop1"])
            .status()
            .unwrap()
            .code(),
        Some(2)
    );

    let status = bin()
        .args(["synth", "--fixture", "F1", "--n", "500", "--out"])
        .arg(d)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        run(d, &["pdp", "--feature", "nope"]),
        3,
        "no base model yet"
    );
    assert_eq!(run(d, &["fit-base", "--epochs", "2"]), 0);
    assert_eq!(run(d, &["pdp", "--feature", "nope"]), 2);
    assert_eq!(run(d, &["shap", "--instance", "0"]), 3, "no surrogate yet");
    // No row can match μ0 to a relative 1e-15.
    assert_eq!(run(d, &["fit-cen", "--epochs", "2", "--delta", "1e-15"]), 4);

    // Undeclared value in the data.
    std::fs::write(d.join("train.csv"), "x1,x2,x3,x4,y\n1,2,3,oops,1\n").unwrap();
    assert_eq!(run(d, &["fit-base"]), 3);
}
