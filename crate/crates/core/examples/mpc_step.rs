//! A single homothetic tube MPC solve and the predicted tube.

use homotube::mpc::expand_trajectory;
use homotube::sim::{platooning, ControllerKind};
use nalgebra::DVector;

fn main() -> anyhow::Result<()> {
    let sc = platooning::default_scenario()?;
    let i0 = sc.offline_samples(1)?;
    let learner = sc.initial_learner(ControllerKind::LearnedHomothetic, &i0)?;
    let mut ctl = sc.controller(ControllerKind::LearnedHomothetic, learner.current(), None)?;
    let x = DVector::from_vec(vec![4.0, 2.0]);
    let out = ctl.step(&x, learner.current())?;
    println!("status {:?}, cost {:.4}, nu {}", out.solution.status, out.solution.cost, out.nu);
    println!("u0 = {:?}", out.u.as_ref().map(|u| u[0]));
    println!("alpha = {:.3?}", out.solution.alpha.as_slice());
    let traj = expand_trajectory(&out.solution, ctl.tube(), ctl.plant(), out.nu);
    for (i, s) in traj.s.iter().enumerate().take(6) {
        println!("  s_{i} = ({:+.3}, {:+.3})", s[0], s[1]);
    }
    Ok(())
}
