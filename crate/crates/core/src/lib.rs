//! Homothetic tube model predictive control with an online-learned disturbance set.
//!
//! The crate is organised bottom-up:
//!
//! - [`solver`]: dense simplex LP and active-set QP solvers.
//! - [`polytope`]: H-representation polytopes, support functions, invariant sets.
//! - [`learner`]: scenario-LP fitting and nested online updates of the disturbance set.
//! - [`mpc`]: tube data, constraint horizon, and the tube MPC quadratic program.
//! - [`sim`]: closed-loop simulation, feasible-region scans, Monte Carlo batteries.
//! - [`experiment`]: JSON experiment configs and the commands behind the `homotube` binary.
//!
//! Runnable walkthroughs of each capability live in `examples/`.

pub mod experiment;
pub mod learner;
pub mod linalg;
pub mod mpc;
pub mod polytope;
pub mod sim;
pub mod solver;
