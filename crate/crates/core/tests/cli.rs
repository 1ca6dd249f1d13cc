mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn osrct(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_osrct"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SYNTHETIC: &str = r#"
name = "small"
n_trials = 30
cap = 2000
base_seed = 5

[source.synthetic]
n_units = 1200
n_covariates = 2
seed = 9

[bias]
terms = [{ covariate = "x1", coefficient = 1.2 }]
"#;

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            headers
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

fn findings(out: &Output) -> Vec<String> {
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    v["findings"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["code"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn validate_accepts_good_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", SYNTHETIC);
    let out = osrct(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(findings(&out).contains(&"PotentialOutcomeSource".to_string()));
}

#[test]
fn validate_rejects_unknown_key() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("{SYNTHETIC}\nbogus = 1\n"));
    let out = osrct(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_reports_missing_column() {
    let dir = TempDir::new().unwrap();
    write(
        dir.path(),
        "trial.csv",
        "treat,y,age\n1,2.0,30\n0,1.0,40\n1,2.5,35\n0,0.5,50\n",
    );
    let cfg = write(
        dir.path(),
        "c.toml",
        r#"
[source.csv]
path = "trial.csv"
schema = { treatment = "treatment_arm", outcome = "y" }

[bias]
terms = [{ covariate = "age" }]
"#,
    );
    let out = osrct(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(findings(&out), ["MissingColumn"]);
}

#[test]
fn validate_warns_on_weak_confounding() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        r#"
[source.synthetic]
n_units = 20000
n_covariates = 2
outcome_coefficients = [0.0, 1.0]
seed = 1

[bias]
terms = [{ covariate = "x1" }]
"#,
    );
    let out = osrct(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(
        findings(&out).contains(&"WeakConfounding".to_string()),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
}

#[test]
fn validate_flags_imbalanced_trial() {
    let dir = TempDir::new().unwrap();
    let mut rows = String::from("t,y,x\n");
    for i in 0..200 {
        let t = i32::from(i % 10 < 7);
        rows.push_str(&format!("{t},{},{}\n", i % 13, i % 7));
    }
    write(dir.path(), "trial.csv", &rows);
    let cfg = write(
        dir.path(),
        "c.toml",
        r#"
[source.csv]
path = "trial.csv"
schema = { treatment = "t", outcome = "y" }

[bias]
terms = [{ covariate = "x" }]
"#,
    );
    let out = osrct(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(findings(&out).contains(&"ImbalancedTreatment".to_string()));
}

fn run(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    osrct(&args)
}

#[test]
fn run_writes_one_row_per_trial_and_estimator() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", SYNTHETIC);
    let out = dir.path().join("run");
    let res = run(&cfg, &out, &[]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let rows = read_csv(&out.join("trials.csv"));
    assert_eq!(rows.len(), 30 * 5);
    for f in ["report.json", "metadata.json"] {
        assert!(out.join(f).is_file());
    }
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    assert!(meta["metadata"]["prng"]
        .as_str()
        .unwrap()
        .contains("ChaCha8"));
}

#[test]
fn run_overrides_select_estimators_and_trials() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", SYNTHETIC);
    let out = dir.path().join("run");
    let res = run(&cfg, &out, &["--trials", "7", "--estimators", "naive,iptw"]);
    assert_eq!(res.status.code(), Some(0));
    let rows = read_csv(&out.join("trials.csv"));
    assert_eq!(rows.len(), 14);
    assert!(rows
        .iter()
        .all(|r| r["estimator"] == "naive" || r["estimator"] == "iptw"));
}

#[test]
fn rerun_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", SYNTHETIC);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&cfg, &a, &["--workers", "1"]).status.code(), Some(0));
    assert_eq!(run(&cfg, &b, &["--workers", "3"]).status.code(), Some(0));
    for f in ["trials.csv", "report.json", "metadata.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn different_seed_changes_trials() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", SYNTHETIC);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&cfg, &a, &["--trials", "3"]).status.code(), Some(0));
    assert_eq!(
        run(&cfg, &b, &["--trials", "3", "--seed", "6"])
            .status
            .code(),
        Some(0)
    );
    assert_ne!(
        fs::read(a.join("trials.csv")).unwrap(),
        fs::read(b.join("trials.csv")).unwrap()
    );
}

#[test]
fn unwritable_output_is_io_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", SYNTHETIC);
    let blocker = write(dir.path(), "not_a_dir", "x");
    let res = run(&cfg, &blocker.join("run"), &[]);
    assert_eq!(res.status.code(), Some(3));
}

#[test]
fn missing_config_is_io_or_config_error() {
    let res = osrct(&["run", "/nonexistent/c.toml", "--out", "/tmp/osrct-never"]);
    assert!(matches!(res.status.code(), Some(2) | Some(3)));
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[test]
fn report_medians_match_trials() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.toml", SYNTHETIC);
    let run_dir = dir.path().join("run");
    assert_eq!(run(&cfg, &run_dir, &[]).status.code(), Some(0));
    let rendered = dir.path().join("rendered");
    let res = osrct(&[
        "report",
        run_dir.to_str().unwrap(),
        "--out",
        rendered.to_str().unwrap(),
    ]);
    assert_eq!(
        res.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );

    let trials = read_csv(&run_dir.join("trials.csv"));
    let boxes = read_csv(&rendered.join("box_stats.csv"));
    assert_eq!(boxes.len(), 5);
    for b in &boxes {
        let errs: Vec<f64> = trials
            .iter()
            .filter(|r| r["estimator"] == b["estimator"] && r["status"] == "ok")
            .map(|r| r["norm_error"].parse().unwrap())
            .collect();
        assert_eq!(b["n"].parse::<usize>().unwrap(), errs.len());
        let m: f64 = b["median"].parse().unwrap();
        assert!((m - median(errs)).abs() < 1e-12);
    }
    let svg = fs::read_to_string(rendered.join("boxplot.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(rendered.join("correlations.csv").is_file());
}

#[test]
fn report_aggregates_two_sources() {
    let dir = TempDir::new().unwrap();
    let cfg_a = write(dir.path(), "a.toml", SYNTHETIC);
    let cfg_b = write(
        dir.path(),
        "b.toml",
        &SYNTHETIC
            .replace("name = \"small\"", "name = \"other\"")
            .replace("seed = 9", "seed = 10"),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&cfg_a, &a, &["--trials", "6"]).status.code(), Some(0));
    assert_eq!(run(&cfg_b, &b, &["--trials", "6"]).status.code(), Some(0));
    let rendered = dir.path().join("r");
    let res = osrct(&[
        "report",
        a.to_str().unwrap(),
        b.join("report.json").to_str().unwrap(),
        "--out",
        rendered.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0));
    let rows = read_csv(&rendered.join("by_source.csv"));
    let sources: std::collections::BTreeSet<&str> =
        rows.iter().map(|r| r["source"].as_str()).collect();
    assert_eq!(sources, ["all", "other", "small"].into_iter().collect());
    assert_eq!(rows.len(), 5 * 3);
    for est in ["naive", "aipw"] {
        let get = |s: &str| -> f64 {
            rows.iter()
                .find(|r| r["estimator"] == est && r["source"] == s)
                .unwrap()["mean_abs_norm_error"]
                .parse()
                .unwrap()
        };
        let pooled = (get("small") + get("other")) / 2.0;
        assert!((get("all") - pooled).abs() < 1e-12);
    }
}

#[test]
fn report_rejects_malformed_input() {
    let dir = TempDir::new().unwrap();
    let bad = write(dir.path(), "report.json", "{\"not\": \"a report\"}");
    let res = osrct(&[
        "report",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("r").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn gen_synthetic_writes_loadable_tables() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("syn");
    let res = osrct(&[
        "gen-synthetic",
        "--seed",
        "4",
        "--units",
        "500",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0));
    let apo = read_csv(&out.join("apo.csv"));
    let rct = read_csv(&out.join("rct.csv"));
    assert_eq!(apo.len(), 500);
    assert_eq!(rct.len(), 500);
    let summary: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert!(summary["true_effect"].as_f64().unwrap().is_finite());

    let cfg = write(
        dir.path(),
        "c.toml",
        r#"
n_trials = 3
[source.csv]
path = "syn/rct.csv"
schema = { treatment = "treatment", outcome = "outcome", unit_id = "id" }
[bias]
terms = [{ covariate = "x1" }]
"#,
    );
    let v = osrct(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(
        v.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&v.stdout)
    );
}

#[test]
fn protocol_check_reports_pass_and_fail() {
    if !common::python_available() {
        return;
    }
    let script = common::fixture("mock_adapter.py");
    let ok = osrct(&["protocol-check", "--", "python3", script.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0));
    let bad = osrct(&[
        "protocol-check",
        "--timeout",
        "2",
        "--",
        "python3",
        script.to_str().unwrap(),
        "garbage",
    ]);
    assert_eq!(bad.status.code(), Some(4));
}
