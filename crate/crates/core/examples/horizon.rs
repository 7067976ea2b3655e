//! Constraint horizon for the conservative and learned disturbance bounds.

use homotube::mpc::{compute_horizon, tail_excess, HorizonSpec, RigidTube, DEFAULT_N_MAX};
use homotube::polytope::SupportVector;
use homotube::sim::{platooning, ControllerKind};

fn main() -> anyhow::Result<()> {
    let sc = platooning::default_scenario()?;
    let td = &sc.tube;
    let i0 = sc.offline_samples(1)?;
    for kind in [ControllerKind::Conventional, ControllerKind::LearnedHomothetic] {
        let set = sc.initial_learner(kind, &i0)?.current().clone();
        let w = td.w_max(&set.realise())?;
        let spec = HorizonSpec::Homothetic(w.clone());
        let nu = compute_horizon(td, &spec, DEFAULT_N_MAX)?;
        let tail = tail_excess(td, &spec, nu, 50)?;
        println!("{:<20} N = {}, nu = {nu}, worst tail excess {:+.2e}", kind.label(), td.horizon(), tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        let doubled = HorizonSpec::Homothetic(SupportVector(w.values() * 2.0));
        match compute_horizon(td, &doubled, DEFAULT_N_MAX) {
            Ok(n) => println!("{:<20} doubled w_max: nu = {n}", ""),
            Err(e) => println!("{:<20} doubled w_max: {e}", ""),
        }
    }
    let set = sc.initial_learner(ControllerKind::LearnedRigid, &i0)?.current().clone();
    let tube = RigidTube::for_learned(&sc.plant, &set)?;
    let nu = compute_horizon(td, &HorizonSpec::Rigid(tube.tightening(td, &sc.plant)), DEFAULT_N_MAX)?;
    println!("{:<20} scale {:.3}, nu = {nu}", "learned_rigid", tube.scale);
    Ok(())
}
