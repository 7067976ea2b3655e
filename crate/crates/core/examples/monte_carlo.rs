//! Feasibility rate from a boundary initial state over seeded runs.

use homotube::experiment::{boundary_point, ExperimentConfig};
use homotube::sim::{feasible_region_scan, monte_carlo_feasibility, ControllerKind, RunOptions};

fn main() -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::default();
    // A coarser grid is enough to locate a boundary state.
    cfg.region.resolution = [25, 25];
    let sc = cfg.scenario()?;
    let kind = ControllerKind::LearnedHomothetic;
    let i0 = sc.offline_samples(cfg.seed)?;
    let set = sc.initial_learner(kind, &i0)?.current().clone();
    let ctl = sc.controller(kind, &set, None)?;
    let region = feasible_region_scan(&ctl, &set, &cfg.region, kind.label())?;
    let x0 = boundary_point(&region, &cfg.region, 2).expect("nonempty region");
    println!("x0 = ({:+.3}, {:+.3})", x0[0], x0[1]);
    for n in [30, 100] {
        let mut s = sc.clone();
        s.n_offline = n;
        let r = monte_carlo_feasibility(&s, kind, &x0, 20, cfg.seed, &RunOptions { steps: 60, ..RunOptions::default() }, 0.05)?;
        println!("|I0| = {n:>4}: {}/{} feasible, epsilon = {:.4}", r.feasible_runs, r.runs, r.epsilon);
    }
    Ok(())
}
