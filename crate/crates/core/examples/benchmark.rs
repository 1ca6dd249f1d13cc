//! Load a benchmark config, run it, and print per-estimator error summaries
//! and the correlation of errors across estimators.
//!
//! cargo run --release --example benchmark [config.toml]

use osrct::harness::{run_benchmark, BenchmarkConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/examples/configs/linear_confounded.toml"
        )
        .to_string()
    });
    let cfg = BenchmarkConfig::load(&path)?;
    let report = run_benchmark(&cfg)?;

    println!(
        "source {} ({} rows), {} trials",
        report.metadata.source_tag,
        report.metadata.source_rows,
        report.trials.len()
    );
    println!(
        "{:<20} {:>4} {:>7} {:>12} {:>12}",
        "estimator", "ok", "failed", "mean |norm|", "sd |norm|"
    );
    for s in &report.summary {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.5}"));
        println!(
            "{:<20} {:>4} {:>7} {:>12} {:>12}",
            s.estimator,
            s.n_ok,
            s.n_failed,
            f(s.mean_abs_norm_error),
            f(s.sd_abs_norm_error)
        );
    }
    println!("\nerror correlations");
    let m = &report.correlations;
    print!("{:<20}", "");
    for e in &m.estimators {
        print!(" {:>9.9}", e);
    }
    println!();
    for (i, a) in m.estimators.iter().enumerate() {
        print!("{a:<20}");
        for v in &m.values[i] {
            print!(" {:>9}", v.map_or("-".to_string(), |v| format!("{v:.3}")));
        }
        println!();
    }
    Ok(())
}
