//! The conventional, learned-rigid and learned-homothetic controllers from the
//! same state with the same disturbance stream.

use homotube::experiment::{cmd_compare, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.simulation.steps = 80;
    let dir = tempfile::tempdir()?;
    let (rows, traces) = cmd_compare(&cfg, dir.path())?;
    println!("{:<20} {:>6} {:>9} {:>12} {:>8}", "controller", "steps", "feasible", "cost", "recomp");
    for r in &rows {
        println!("{:<20} {:>6} {:>9} {:>12.3} {:>8}", r.controller, r.steps, r.all_feasible, r.total_cost, r.horizon_recomputations);
    }
    let same = traces.windows(2).all(|p| p[0].steps.iter().zip(&p[1].steps).all(|(a, b)| a.k == b.k));
    println!("aligned step indices: {same}");
    Ok(())
}
