//! Subsampling a randomized trial keeps each (unit, treatment) pair with
//! half the probability that biased sampling of all potential outcomes does.
//!
//! cargo run --release --example osapo_equivalence

use osrct::bias::{compile_bias, BiasTerm, BiasingSpec};
use osrct::rng::TrialRng;
use osrct::sampling::{apo_to_rct, osapo_sample, osrct_draw};
use osrct::synthetic::{gen_apo, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let apo = gen_apo(&SyntheticConfig {
        n_units: 2000,
        seed: 3,
        ..SyntheticConfig::default()
    })?;
    let bias = compile_bias(
        &BiasingSpec::new(vec![BiasTerm::standardized("x1", 1.0)]),
        &apo,
    )?;
    let x1 = apo.column("x1").unwrap().data.to_f64_vec().unwrap();

    let seeds = 300;
    // Accepted counts indexed by (x1 > 0) * 2 + t.
    let mut rct_counts = [0usize; 4];
    let mut apo_counts = [0usize; 4];
    for s in 0..seeds {
        let mut rng = TrialRng::for_trial(1, s);
        let rct = apo_to_rct(&apo, &mut rng)?;
        let study = osrct_draw(&rct, &bias, &mut rng)?;
        tally(study.accepted(), &mut rct_counts)?;
        let study = osapo_sample(&apo, &bias, &mut TrialRng::for_trial(2, s))?;
        tally(study.accepted(), &mut apo_counts)?;
    }
    println!("stratum    t   OSRCT rate   0.5 x OSAPO rate");
    let n_high = x1.iter().filter(|&&v| v > 0.0).count();
    for (k, count) in rct_counts.iter().enumerate() {
        let stratum_size = if k >= 2 { n_high } else { x1.len() - n_high };
        let denom = (stratum_size * seeds as usize) as f64;
        println!(
            "{:>7}   {}   {:>10.4}   {:>16.4}",
            if k >= 2 { "x1 > 0" } else { "x1 <= 0" },
            k % 2,
            *count as f64 / denom,
            0.5 * apo_counts[k] as f64 / denom
        );
    }
    Ok(())
}

fn tally(
    d: &osrct::data::Dataset,
    counts: &mut [usize; 4],
) -> Result<(), Box<dyn std::error::Error>> {
    let x1 = d.column("x1").unwrap();
    let t = d.binary_treatment()?;
    for r in 0..d.n_rows() {
        let high = x1.data.as_f64(r).unwrap() > 0.0;
        counts[usize::from(high) * 2 + t[r] as usize] += 1;
    }
    Ok(())
}
