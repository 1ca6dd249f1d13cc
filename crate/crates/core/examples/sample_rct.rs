//! Construct one observational study from a randomized trial and look at
//! what the biased sampler did to the treated/control balance.
//!
//! cargo run --example sample_rct

use osrct::bias::{compile_bias, BiasTerm, BiasingSpec};
use osrct::rng::TrialRng;
use osrct::sampling::{apo_to_rct, osrct_sample};
use osrct::stats::{mean, pearson};
use osrct::synthetic::{gen_apo, SyntheticConfig};

fn arm_mean(x: &[f64], t: &[i64], arm: i64) -> f64 {
    let v: Vec<f64> = x
        .iter()
        .zip(t)
        .filter(|(_, &ti)| ti == arm)
        .map(|(&xi, _)| xi)
        .collect();
    mean(&v).unwrap_or(f64::NAN)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let apo = gen_apo(&SyntheticConfig {
        n_units: 4000,
        seed: 1,
        ..SyntheticConfig::default()
    })?;
    let mut rng = TrialRng::from_seed(42);
    let rct = apo_to_rct(&apo, &mut rng)?;

    let spec = BiasingSpec {
        calibrate: true,
        ..BiasingSpec::new(vec![BiasTerm::standardized("x1", 1.5)])
    };
    let bias = compile_bias(&spec, &rct)?;
    let study = osrct_sample(&rct, &bias, &mut rng)?;

    for (label, d) in [("trial", &rct), ("accepted", study.accepted())] {
        let t = d.binary_treatment()?;
        let x1 = d.column("x1").unwrap().data.to_f64_vec().unwrap();
        let tf: Vec<f64> = t.iter().map(|&v| v as f64).collect();
        println!(
            "{label:>9}: n = {:5}  mean x1 treated {:+.3}  control {:+.3}  corr(T, x1) {:+.3}",
            d.n_rows(),
            arm_mean(&x1, t, 1),
            arm_mean(&x1, t, 0),
            pearson(&tf, &x1).unwrap_or(f64::NAN),
        );
    }
    let (treated, control) = study.arm_counts();
    println!(
        "accepted {treated} treated + {control} control; {} units went to the complementary sample",
        study.complementary().n_rows()
    );
    Ok(())
}
