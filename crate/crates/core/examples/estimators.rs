//! Run every built-in estimator on one confounded study.
//!
//! cargo run --example estimators

use osrct::bias::{compile_bias, BiasTerm, BiasingSpec};
use osrct::estimators::{builtin, MatchTarget, BUILTIN_IDS};
use osrct::harness::ground_truth_effect;
use osrct::rng::TrialRng;
use osrct::sampling::{apo_to_rct, osrct_sample};
use osrct::synthetic::{gen_apo, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let apo = gen_apo(&SyntheticConfig {
        n_units: 2000,
        n_covariates: 3,
        categorical_levels: vec![4],
        tau: 2.0,
        seed: 11,
        ..SyntheticConfig::default()
    })?;
    let mut rng = TrialRng::from_seed(7);
    let rct = apo_to_rct(&apo, &mut rng)?;
    let truth = ground_truth_effect(&rct)?;
    let bias = compile_bias(
        &BiasingSpec::new(vec![
            BiasTerm::standardized("x1", 2.0),
            BiasTerm::standardized("x2", -1.0),
        ]),
        &rct,
    )?;
    let study = osrct_sample(&rct, &bias, &mut rng)?;
    println!(
        "truth from the full trial: {truth:.4}   accepted units: {}",
        study.accepted().n_rows()
    );

    for target in [MatchTarget::Ate, MatchTarget::Att] {
        for id in BUILTIN_IDS {
            if target == MatchTarget::Att && id != "psm" {
                continue;
            }
            let est = builtin(id, target).unwrap();
            match est.estimate(&study) {
                Ok(e) => {
                    let label = if target == MatchTarget::Att {
                        "psm (att)"
                    } else {
                        id
                    };
                    println!(
                        "{label:<20} {:>8.4}   error {:>+8.4}   {:?}",
                        e.value,
                        e.value - truth,
                        e.flags
                    );
                    for (k, v) in &e.diagnostics {
                        println!("{:<20}   {k} = {v:.4}", "");
                    }
                }
                Err(err) => println!("{id:<20} failed: {err}"),
            }
        }
    }
    Ok(())
}
