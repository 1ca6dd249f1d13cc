//! Score an estimator that runs in another process. Uses the Python mock
//! adapter from the test fixtures; any program speaking the line protocol
//! works the same way.
//!
//! cargo run --example external_adapter

use std::time::Duration;

use osrct::bias::{BiasTerm, BiasingSpec};
use osrct::harness::{run_benchmark, BenchmarkConfig, SourceConfig};
use osrct::protocol::{conformance_check, ExternalSpec};
use osrct::synthetic::SyntheticConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let script = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/mock_adapter.py"
    );
    let command = vec!["python3".to_string(), script.to_string()];

    let check = conformance_check(&command, Duration::from_secs(10));
    for c in &check.checks {
        println!(
            "{:<18} {} {}",
            c.name,
            if c.passed { "ok  " } else { "FAIL" },
            c.detail
        );
    }
    if !check.passed() {
        eprintln!("adapter failed the conformance checks (is python3 installed?)");
        return Ok(());
    }

    let cfg = BenchmarkConfig {
        name: None,
        source: SourceConfig::Synthetic(SyntheticConfig {
            n_units: 1500,
            seed: 2,
            ..SyntheticConfig::default()
        }),
        bias: BiasingSpec::new(vec![BiasTerm::standardized("x1", 1.0)]),
        hidden: vec![],
        estimators: vec!["naive".into(), "iptw".into()],
        external: vec![ExternalSpec {
            id: "python_naive".into(),
            command,
            timeout_secs: 30.0,
        }],
        n_trials: 10,
        cap: 2000,
        fix_subsample: false,
        base_seed: 3,
        mode: Default::default(),
        psm_target: Default::default(),
        workers: 2,
    };
    let report = run_benchmark(&cfg)?;
    println!("\ntrial  naive       iptw         python_naive");
    for t in &report.trials {
        let v: Vec<String> = t
            .results
            .iter()
            .map(|r| r.estimate.map_or("-".into(), |v| format!("{v:.6}")))
            .collect();
        println!("{:>5}  {}", t.trial, v.join("    "));
    }
    Ok(())
}
