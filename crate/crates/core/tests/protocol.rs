mod common;

use std::time::{Duration, Instant};

use common::{mock_command, python_available, study};
use osrct::bias::{BiasTerm, BiasingSpec};
use osrct::estimators::{Estimator, Naive};
use osrct::harness::{Benchmark, BenchmarkConfig, SourceConfig};
use osrct::protocol::{
    conformance_check, spawn_estimator, EstimateRequest, ExternalEstimator, ExternalSpec,
    ProtocolError, ResponseStatus, WireColumn,
};
use osrct::synthetic::SyntheticConfig;

const TIMEOUT: Duration = Duration::from_secs(10);

macro_rules! require_python {
    () => {
        if !python_available() {
            eprintln!("skipping: python3 not found");
            return;
        }
    };
}

fn small_study() -> osrct::sampling::ConstructedStudy {
    study(
        &[1, 1, 0, 0, 1, 0],
        &[3.0, 3.5, 1.0, 1.25, 2.75, 0.5],
        &[("c", vec![0.5, -0.5, 0.25, -0.25, 0.1, 0.0])],
        None,
    )
}

#[test]
fn handshake_then_estimate() {
    require_python!();
    let mut s = spawn_estimator(&mock_command("naive"), TIMEOUT).unwrap();
    let req = EstimateRequest::for_study(&small_study(), "r1");
    let resp = s.request_estimate(&req).unwrap();
    assert_eq!(resp.request_id, "r1");
    assert_eq!(resp.status, ResponseStatus::Ok);
    assert!(s.is_alive());
}

#[test]
fn missing_program_is_spawn_failure() {
    let cmd = vec!["/nonexistent/adapter-binary".to_string()];
    match spawn_estimator(&cmd, TIMEOUT) {
        Err(ProtocolError::SpawnFailure { command, .. }) => {
            assert!(command.contains("adapter-binary"))
        }
        other => panic!("expected SpawnFailure, got {other:?}"),
    }
}

#[test]
fn wrong_version_is_rejected() {
    require_python!();
    match spawn_estimator(&mock_command("version0"), TIMEOUT) {
        Err(ProtocolError::VersionMismatch(v)) => assert_eq!(v, "0"),
        other => panic!("expected VersionMismatch, got {other:?}"),
    }
}

#[test]
fn nan_in_response_closes_session() {
    require_python!();
    let mut s = spawn_estimator(&mock_command("nan"), TIMEOUT).unwrap();
    let req = EstimateRequest::for_study(&small_study(), "r1");
    assert!(matches!(
        s.request_estimate(&req),
        Err(ProtocolError::Malformed(_))
    ));
    assert!(!s.is_alive());
    assert!(matches!(s.request_estimate(&req), Err(ProtocolError::Dead)));
}

#[test]
fn garbage_response_is_malformed() {
    require_python!();
    let mut s = spawn_estimator(&mock_command("garbage"), TIMEOUT).unwrap();
    let req = EstimateRequest::for_study(&small_study(), "r1");
    assert!(matches!(
        s.request_estimate(&req),
        Err(ProtocolError::Malformed(_))
    ));
}

#[test]
fn nan_in_request_is_not_sent() {
    let s = study(&[1, 0], &[2.0, 1.0], &[], None);
    let mut req = EstimateRequest::for_study(&s, "r1");
    assert!(req.encode().is_ok());
    req.columns
        .insert("y".into(), WireColumn::Real(vec![f64::NAN, 1.0]));
    assert!(matches!(req.encode(), Err(ProtocolError::Encode(_))));
    req.columns
        .insert("y".into(), WireColumn::Real(vec![2.0, 1.0]));
    req.weights = Some(vec![1.0, f64::INFINITY]);
    assert!(matches!(req.encode(), Err(ProtocolError::Encode(_))));
}

#[test]
fn slow_adapter_times_out() {
    require_python!();
    let mut s = spawn_estimator(&mock_command("sleep"), Duration::from_millis(500)).unwrap();
    let req = EstimateRequest::for_study(&small_study(), "r1");
    let start = Instant::now();
    assert!(matches!(
        s.request_estimate(&req),
        Err(ProtocolError::Timeout(_))
    ));
    assert!(start.elapsed() < Duration::from_secs(5));
    assert!(!s.is_alive());
}

#[test]
fn crashing_adapter_is_child_exited() {
    require_python!();
    let mut s = spawn_estimator(&mock_command("crash"), TIMEOUT).unwrap();
    let req = EstimateRequest::for_study(&small_study(), "r1");
    assert!(matches!(
        s.request_estimate(&req),
        Err(ProtocolError::ChildExited(_))
    ));
}

fn synthetic_config(external: Vec<ExternalSpec>, estimators: Vec<String>) -> BenchmarkConfig {
    BenchmarkConfig {
        name: None,
        source: SourceConfig::Synthetic(SyntheticConfig {
            n_units: 600,
            seed: 3,
            ..SyntheticConfig::default()
        }),
        bias: BiasingSpec::new(vec![BiasTerm::standardized("x1", 0.8)]),
        hidden: vec![],
        estimators,
        external,
        n_trials: 4,
        cap: 2000,
        fix_subsample: false,
        base_seed: 11,
        mode: Default::default(),
        psm_target: Default::default(),
        workers: 2,
    }
}

#[test]
fn crash_is_recorded_per_trial_without_aborting() {
    require_python!();
    let cfg = synthetic_config(
        vec![ExternalSpec {
            id: "crashy".into(),
            command: mock_command("crash"),
            timeout_secs: 10.0,
        }],
        vec!["naive".into()],
    );
    let report = Benchmark::prepare(cfg).unwrap().run().unwrap();
    assert_eq!(report.trials.len(), 4);
    for trial in &report.trials {
        let naive = trial
            .results
            .iter()
            .find(|r| r.estimator == "naive")
            .unwrap();
        let crashy = trial
            .results
            .iter()
            .find(|r| r.estimator == "crashy")
            .unwrap();
        assert!(naive.is_ok());
        assert_eq!(crashy.status, "ExternalFailure");
    }
}

#[test]
fn adapter_naive_matches_builtin_naive() {
    require_python!();
    let cfg = synthetic_config(
        vec![ExternalSpec {
            id: "py_naive".into(),
            command: mock_command("naive"),
            timeout_secs: 10.0,
        }],
        vec!["naive".into()],
    );
    let report = Benchmark::prepare(cfg).unwrap().run().unwrap();
    for trial in &report.trials {
        let a = trial.results[0].estimate.unwrap();
        let b = trial.results[1].estimate.unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn adapter_sees_weights() {
    require_python!();
    let s = study(
        &[1, 1, 0, 0],
        &[4.0, 2.0, 1.0, 0.0],
        &[],
        Some(vec![3.0, 1.0, 1.0, 1.0]),
    );
    let ext = ExternalEstimator::new(ExternalSpec {
        id: "py".into(),
        command: mock_command("naive"),
        timeout_secs: 10.0,
    });
    let remote = ext.estimate(&s).unwrap().value;
    let local = Naive.estimate(&s).unwrap().value;
    assert!((remote - 3.0).abs() < 1e-12);
    assert!((remote - local).abs() < 1e-12);
}

#[test]
fn complement_predictions_have_one_value_per_unit() {
    require_python!();
    let source = osrct::synthetic::gen_apo(&SyntheticConfig {
        n_units: 300,
        seed: 5,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let mut rng = osrct::rng::TrialRng::from_seed(1);
    let rct = osrct::sampling::apo_to_rct(&source, &mut rng).unwrap();
    let bias = osrct::bias::CompiledBias::constant(0.5);
    let s = osrct::sampling::osrct_sample(&rct, &bias, &mut rng).unwrap();
    let ext = ExternalEstimator::new(ExternalSpec {
        id: "py".into(),
        command: mock_command("naive"),
        timeout_secs: 10.0,
    });
    let preds = ext.predict_complement(&s, "c1").unwrap();
    assert_eq!(preds.len(), s.complementary().n_rows());
}

#[test]
fn ten_thousand_rows_round_trip_quickly() {
    require_python!();
    let n = 10_000;
    let t: Vec<i64> = (0..n).map(|i| (i % 2) as i64).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| (i as f64).sin() + 2.0 * (i % 2) as f64)
        .collect();
    let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).cos()).collect();
    let s = study(&t, &y, &[("x", x)], None);
    let req = EstimateRequest::for_study(&s, "big");
    let mut session = spawn_estimator(&mock_command("naive"), TIMEOUT).unwrap();
    let start = Instant::now();
    let resp = session.request_estimate(&req).unwrap();
    assert!(
        start.elapsed() < Duration::from_secs(5),
        "took {:?}",
        start.elapsed()
    );
    let local = Naive.estimate(&s).unwrap().value;
    assert!((resp.estimate.unwrap() - local).abs() < 1e-9);
}

#[test]
fn encoding_is_byte_identical() {
    let a = EstimateRequest::for_study(&small_study(), "same")
        .encode()
        .unwrap();
    let b = EstimateRequest::for_study(&small_study(), "same")
        .encode()
        .unwrap();
    assert_eq!(a, b);
    assert!(a.starts_with(
        r#"{"protocol_version":"1","request_id":"same","task":"ate","columns":{"c":["#
    ));
    assert!(!a.contains('\n'));
}

#[test]
fn conformance_suite_passes_for_mock() {
    require_python!();
    let report = conformance_check(&mock_command("naive"), TIMEOUT);
    assert!(report.passed(), "{report:?}");
    let names: Vec<&str> = report.checks.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "handshake",
            "echo",
            "malformed_request",
            "nan_rejection",
            "large_request"
        ]
    );
}

#[test]
fn conformance_suite_fails_for_garbage() {
    require_python!();
    let report = conformance_check(&mock_command("garbage"), TIMEOUT);
    assert!(!report.passed());
    assert!(report.checks[0].passed);
}
