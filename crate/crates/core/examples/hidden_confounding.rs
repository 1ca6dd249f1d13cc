//! Hide the covariate that drives the biased sampling and watch the
//! adjusting estimators lose their advantage over the naive difference.
//!
//! cargo run --release --example hidden_confounding

use osrct::bias::{BiasTerm, BiasingSpec};
use osrct::harness::{run_benchmark, BenchmarkConfig, SourceConfig};
use osrct::synthetic::SyntheticConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = BenchmarkConfig {
        name: Some("visible".into()),
        source: SourceConfig::Synthetic(SyntheticConfig {
            n_units: 3000,
            outcome_coefficients: Some(vec![2.0, 0.5]),
            seed: 21,
            ..SyntheticConfig::default()
        }),
        bias: BiasingSpec::new(vec![BiasTerm::standardized("x1", 1.5)]),
        hidden: vec![],
        estimators: vec![
            "naive".into(),
            "iptw".into(),
            "outcome_regression".into(),
            "aipw".into(),
        ],
        external: vec![],
        n_trials: 30,
        cap: 3000,
        fix_subsample: false,
        base_seed: 1,
        mode: Default::default(),
        psm_target: Default::default(),
        workers: 0,
    };
    let visible = run_benchmark(&cfg)?;
    cfg.hidden = vec!["x1".into()];
    let hidden = run_benchmark(&cfg)?;

    println!(
        "{:<20} {:>14} {:>14}",
        "estimator", "x1 visible", "x1 hidden"
    );
    for s in &visible.summary {
        let h = hidden
            .summary_for(&s.estimator)
            .and_then(|h| h.mean_abs_norm_error);
        println!(
            "{:<20} {:>14.5} {:>14.5}",
            s.estimator,
            s.mean_abs_norm_error.unwrap_or(f64::NAN),
            h.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
