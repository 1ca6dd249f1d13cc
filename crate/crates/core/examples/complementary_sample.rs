//! Score an outcome model on the units the sampler rejected, weighted by
//! p / (1 - p), and compare with its error on the accepted sample.
//!
//! cargo run --example complementary_sample

use osrct::bias::{compile_bias, BiasTerm, BiasingSpec};
use osrct::data::Dataset;
use osrct::harness::{
    accepted_outcome_error, complementary_outcome_error, ComplementNormalization,
};
use osrct::rng::TrialRng;
use osrct::sampling::{apo_to_rct, osrct_sample};
use osrct::synthetic::{gen_apo, SyntheticConfig};

/// A fixed predictor that ignores x2.
fn predict(d: &Dataset) -> Vec<f64> {
    let t = d.binary_treatment().unwrap();
    let x1 = d.column("x1").unwrap().data.to_f64_vec().unwrap();
    t.iter()
        .zip(&x1)
        .map(|(&t, &x)| 2.0 * t as f64 + x)
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let apo = gen_apo(&SyntheticConfig {
        n_units: 3000,
        outcome_coefficients: Some(vec![1.5, 1.0]),
        seed: 8,
        ..SyntheticConfig::default()
    })?;
    let spec = BiasingSpec {
        calibrate: true,
        ..BiasingSpec::new(vec![BiasTerm::standardized("x2", 1.2)])
    };
    let bias = compile_bias(&spec, &apo)?;

    println!("seed  accepted  complement(count)  complement(self-normalized)");
    let (mut a_sum, mut c_sum) = (0.0, 0.0);
    let trials = 20;
    for s in 0..trials {
        let mut rng = TrialRng::for_trial(5, s);
        let rct = apo_to_rct(&apo, &mut rng)?;
        let study = osrct_sample(&rct, &bias, &mut rng)?;
        let a = accepted_outcome_error(&predict(study.accepted()), &study)?;
        let comp = predict(study.complementary());
        let c = complementary_outcome_error(&comp, &study, ComplementNormalization::Count)?;
        let h =
            complementary_outcome_error(&comp, &study, ComplementNormalization::SelfNormalized)?;
        a_sum += a;
        c_sum += c;
        println!("{s:>4}  {a:>+8.4}  {c:>+17.4}  {h:>+27.4}");
    }
    println!(
        "mean  {:>+8.4}  {:>+17.4}",
        a_sum / trials as f64,
        c_sum / trials as f64
    );
    Ok(())
}
