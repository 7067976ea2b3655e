//! One seeded closed-loop run of the learning-based homothetic controller.
//!
//! ```text
//! cargo run --release --example closed_loop -- /tmp/trace.csv
//! ```

use homotube::sim::{all_feasible, platooning, ControllerKind, RunOptions};
use nalgebra::DVector;

fn main() -> anyhow::Result<()> {
    let sc = platooning::default_scenario()?;
    let x0 = DVector::from_vec(vec![4.0, 2.0]);
    let trace = sc.run(ControllerKind::LearnedHomothetic, &x0, 1, &RunOptions { steps: 100, ..RunOptions::default() })?;
    println!("{} steps, all feasible: {}", trace.len(), all_feasible(&trace));
    let worst = trace.steps.iter().filter_map(|s| s.constraint_excess).fold(f64::NEG_INFINITY, f64::max);
    println!("largest constraint value Fx + Gu - 1: {worst:+.4}");
    println!("offsets: {:.4?} -> {:.4?}", trace.meta.initial_offsets, trace.meta.final_offsets);
    println!("final state ({:+.4}, {:+.4})", trace.x_final[0], trace.x_final[1]);
    if let Some(path) = std::env::args().nth(1) {
        trace.write_csv(path.as_ref())?;
        println!("trace written to {path}");
    }
    Ok(())
}
