//! Dense linear and convex quadratic programming.
//!
//! Both solvers share one result type and one tolerance record. Infeasible and
//! unbounded problems are ordinary outcomes, reported through [`Status`].

mod lp;
mod qp;

pub use lp::{solve_lp, LinearProgram, LpSolver};
pub use qp::{solve_qp, QpSolver, QuadraticProgram};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Terminal state of a solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl Status {
    pub fn is_optimal(self) -> bool {
        self == Status::Optimal
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub status: Status,
    /// Present iff `status == Optimal`.
    pub x: Option<DVector<f64>>,
    pub objective: f64,
    pub iterations: usize,
    /// Largest primal constraint violation of the returned point (0 when no point).
    pub residual: f64,
}

impl SolveResult {
    pub(crate) fn without_point(status: Status, iterations: usize) -> Self {
        Self {
            status,
            x: None,
            objective: f64::NAN,
            iterations,
            residual: 0.0,
        }
    }
}

/// Malformed problem data. Solve outcomes are never reported through this type.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite problem data in {0}")]
    NonFinite(&'static str),
    #[error("hessian is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("hessian is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("lower bound exceeds upper bound for variable {0}")]
    InvertedBounds(usize),
}

/// Tolerances shared by the LP and QP solvers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Smallest admissible pivot magnitude in the simplex ratio test.
    pub pivot: f64,
    /// Reduced-cost threshold, relative to the largest objective coefficient.
    pub optimality: f64,
    /// Accepted primal violation, relative to `max(1, |rhs|)`.
    pub feasibility: f64,
    /// Largest phase-one objective still treated as feasible.
    pub phase_one: f64,
    /// Accepted KKT stationarity residual for the QP.
    pub stationarity: f64,
    /// Accepted asymmetry of the Hessian (relative).
    pub symmetry: f64,
    /// Most negative Hessian eigenvalue still treated as PSD.
    pub psd: f64,
    /// Consecutive degenerate simplex pivots before switching to Bland's rule.
    pub degenerate_streak: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            pivot: 1e-9,
            optimality: 1e-10,
            feasibility: 1e-8,
            phase_one: 1e-9,
            stationarity: 1e-7,
            symmetry: 1e-12,
            psd: 1e-9,
            degenerate_streak: 8,
        }
    }
}

pub(crate) fn check_finite(v: impl IntoIterator<Item = f64>, what: &'static str) -> Result<(), SolverError> {
    if v.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(SolverError::NonFinite(what))
    }
}
