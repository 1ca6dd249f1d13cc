//! Reweighting keeps every trial unit with weight P(T^s = t | C^b) instead of
//! subsampling. Compare the deterministic weighted estimate with the spread
//! of subsampled estimates.
//!
//! cargo run --example reweighting

use osrct::bias::{compile_bias, BiasTerm, BiasingSpec};
use osrct::estimators::{builtin, MatchTarget};
use osrct::rng::TrialRng;
use osrct::sampling::{apo_to_rct, osrct_sample, weighted_view};
use osrct::stats::{mean, quantile};
use osrct::synthetic::{gen_apo, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let apo = gen_apo(&SyntheticConfig {
        n_units: 2000,
        seed: 4,
        ..SyntheticConfig::default()
    })?;
    let rct = apo_to_rct(&apo, &mut TrialRng::from_seed(1))?;
    let bias = compile_bias(
        &BiasingSpec::new(vec![BiasTerm::standardized("x1", 1.2)]),
        &rct,
    )?;
    let weighted = weighted_view(&rct, &bias)?;

    for id in ["naive", "iptw", "outcome_regression", "aipw"] {
        let est = builtin(id, MatchTarget::Ate).unwrap();
        let w = est.estimate(&weighted)?.value;
        let draws: Vec<f64> = (0..30)
            .filter_map(|i| osrct_sample(&rct, &bias, &mut TrialRng::for_trial(9, i)).ok())
            .filter_map(|s| est.estimate(&s).ok().map(|e| e.value))
            .collect();
        println!(
            "{id:<20} weighted {w:>8.4}   subsampled mean {:>8.4}  2.5%..97.5% [{:.4}, {:.4}]",
            mean(&draws).unwrap(),
            quantile(&draws, 0.025).unwrap(),
            quantile(&draws, 0.975).unwrap()
        );
    }
    Ok(())
}
