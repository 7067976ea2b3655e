//! Dense LP and QP solves on small problems.
//!
//! ```text
//! cargo run --example solvers
//! ```

use homotube::linalg::from_rows;
use homotube::solver::{LinearProgram, LpSolver, QpSolver, QuadraticProgram};
use nalgebra::DVector;

fn main() -> anyhow::Result<()> {
    // max x + y  s.t.  x + 2y ≤ 4,  3x + y ≤ 6,  x, y ≥ 0
    let lp = LinearProgram::new(DVector::from_vec(vec![-1.0, -1.0]))
        .with_ineq(from_rows(&[&[1.0, 2.0], &[3.0, 1.0]]), DVector::from_vec(vec![4.0, 6.0]))
        .with_bounds(DVector::zeros(2), DVector::from_element(2, f64::INFINITY));
    let r = LpSolver::default().solve(&lp)?;
    println!("LP  status {:?}, x = {:?}, objective {:.6}, {} pivots", r.status, r.x.as_ref().map(|x| x.as_slice().to_vec()), r.objective, r.iterations);

    // Projection of (2, 2) onto the simplex-like set x + y ≤ 1, x, y ≥ 0.
    let qp = QuadraticProgram::new(from_rows(&[&[2.0, 0.0], &[0.0, 2.0]]), DVector::from_vec(vec![-4.0, -4.0]))
        .with_ineq(from_rows(&[&[1.0, 1.0], &[-1.0, 0.0], &[0.0, -1.0]]), DVector::from_vec(vec![1.0, 0.0, 0.0]));
    let r = QpSolver::default().solve(&qp)?;
    println!("QP  status {:?}, x = {:?}, objective {:.6}", r.status, r.x.as_ref().map(|x| x.as_slice().to_vec()), r.objective);
    Ok(())
}
