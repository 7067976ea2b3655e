//! Sample-complexity bound of the learned set, and an empirical check of it.

use homotube::learner::{epsilon_for, fit_initial, required_samples, violation_rate, InformationSet, LearnerOptions};
use homotube::sim::{platooning, streams};

fn main() -> anyhow::Result<()> {
    let (n_x, n_v, delta) = (2, 6, 0.05);
    for n in [100, 1000, 10000] {
        println!("|I0| = {n:>5}: epsilon = {:.4}", epsilon_for(n, delta, n_x, n_v)?);
    }
    let need = required_samples(0.1, delta, n_x, n_v)?.required_samples;
    println!("epsilon = 0.1 needs {need} samples");

    let sc = platooning::default_scenario()?;
    let mut worst = 0.0f64;
    for trial in 0..20u64 {
        let (mut a, mut b) = streams(trial);
        let i0 = InformationSet::from_samples(sc.truth.sample_many(need, &mut a)?);
        let fit = fit_initial(&sc.w, &i0, &LearnerOptions::default())?;
        let fresh = sc.truth.sample_many(20_000, &mut b)?;
        worst = worst.max(violation_rate(&fit.set, &fresh)?);
    }
    println!("largest empirical violation over 20 trials: {worst:.4}");
    Ok(())
}
