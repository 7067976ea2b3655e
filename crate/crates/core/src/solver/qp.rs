use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use super::{check_finite, LinearProgram, LpSolver, SolveResult, SolverError, Status, Tolerances};

/// `min ½ xᵀHx + c·x  s.t.  A_ineq x ≤ b_ineq,  A_eq x = b_eq,  lb ≤ x ≤ ub`.
#[derive(Clone, Debug)]
pub struct QuadraticProgram {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QuadraticProgram {
    pub fn new(h: DMatrix<f64>, c: DVector<f64>) -> Self {
        let n = c.len();
        Self {
            h,
            c,
            a_ineq: DMatrix::zeros(0, n),
            b_ineq: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_ineq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_ineq = a;
        self.b_ineq = b;
        self
    }

    pub fn with_eq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_bounds(mut self, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.c.dot(x)
    }

    /// The feasible set as an LP with zero objective.
    pub fn feasibility_lp(&self) -> LinearProgram {
        LinearProgram::new(DVector::zeros(self.num_vars()))
            .with_ineq(self.a_ineq.clone(), self.b_ineq.clone())
            .with_eq(self.a_eq.clone(), self.b_eq.clone())
            .with_bounds(self.lb.clone(), self.ub.clone())
    }

    pub fn validate(&self, tol: &Tolerances) -> Result<(), SolverError> {
        let n = self.num_vars();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(SolverError::Dimension(format!(
                "hessian is {}x{}, expected {n}x{n}",
                self.h.nrows(),
                self.h.ncols()
            )));
        }
        check_finite(self.h.iter().copied(), "hessian")?;
        self.feasibility_lp().validate()?;
        check_finite(self.c.iter().copied(), "objective")?;
        let scale = self.h.amax().max(1.0);
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > tol.symmetry * scale {
            return Err(SolverError::NotSymmetric(asym));
        }
        if n > 0 {
            let sym = (&self.h + self.h.transpose()) * 0.5;
            let min_eig = sym.symmetric_eigenvalues().min();
            if min_eig < -tol.psd * scale {
                return Err(SolverError::NotPsd(min_eig));
            }
        }
        Ok(())
    }
}

/// Primal active-set QP solver.
///
/// A feasible starting point is either the supplied warm start or the vertex
/// returned by a zero-objective LP. Equality-constrained subproblems are solved
/// in the null space of the working set, which also handles directions of zero
/// curvature when the Hessian is only semidefinite.
#[derive(Clone, Debug, Default)]
pub struct QpSolver {
    pub tol: Tolerances,
}

struct Rows {
    /// All inequality rows, bounds included.
    g: DMatrix<f64>,
    h: DVector<f64>,
    e: DMatrix<f64>,
}

impl QpSolver {
    pub fn new(tol: Tolerances) -> Self {
        Self { tol }
    }

    pub fn solve(&self, qp: &QuadraticProgram) -> Result<SolveResult, SolverError> {
        self.solve_warm(qp, None)
    }

    /// Solve starting from `warm` when it is feasible, otherwise from a phase-one vertex.
    pub fn solve_warm(&self, qp: &QuadraticProgram, warm: Option<&DVector<f64>>) -> Result<SolveResult, SolverError> {
        qp.validate(&self.tol)?;
        let n = qp.num_vars();
        let rows = stack_rows(qp);
        let lp = qp.feasibility_lp();

        let mut lp_iters = 0;
        let start = match warm {
            Some(w) if w.len() == n && lp.violation(w) <= self.tol.feasibility => w.clone(),
            _ => {
                let r = LpSolver::new(self.tol).solve(&lp)?;
                lp_iters = r.iterations;
                match r.status {
                    Status::Optimal => r.x.expect("optimal LP carries a point"),
                    Status::Infeasible => return Ok(SolveResult::without_point(Status::Infeasible, lp_iters)),
                    // A zero objective cannot be unbounded.
                    _ => return Ok(SolveResult::without_point(Status::NumericalFailure, lp_iters)),
                }
            }
        };
        let mut res = self.active_set(qp, &rows, start);
        res.iterations += lp_iters;
        if let Some(x) = &res.x {
            res.residual = lp.violation(x).max(0.0);
            if res.residual > self.tol.feasibility {
                log::debug!("qp: residual {:e}", res.residual);
                return Ok(SolveResult::without_point(Status::NumericalFailure, res.iterations));
            }
        }
        Ok(res)
    }

    fn active_set(&self, qp: &QuadraticProgram, rows: &Rows, mut x: DVector<f64>) -> SolveResult {
        let n = qp.num_vars();
        let m = rows.g.nrows();
        let p_eq = rows.e.nrows();
        let max_iter = 100 + 20 * (n + m);
        let h_scale = qp.h.amax().max(1.0);

        // Working set: equalities always, then independent active inequalities.
        let mut eq_rows: Vec<usize> = Vec::new();
        let mut basis = DMatrix::<f64>::zeros(0, n);
        for i in 0..p_eq {
            let a = rows.e.row(i).transpose();
            if is_independent(&basis, &a) {
                basis = append_row(&basis, &a);
                eq_rows.push(i);
            }
        }
        let mut work: Vec<usize> = Vec::new();
        let slack = &rows.h - &rows.g * &x;
        for i in 0..m {
            if slack[i].abs() <= self.tol.feasibility * rows.h[i].abs().max(1.0) {
                let a = rows.g.row(i).transpose();
                if is_independent(&basis, &a) {
                    basis = append_row(&basis, &a);
                    work.push(i);
                }
            }
        }

        let mut iterations = 0usize;
        loop {
            if iterations >= max_iter {
                log::debug!("qp: iteration limit");
                return SolveResult::without_point(Status::NumericalFailure, iterations);
            }
            iterations += 1;

            let a_w = working_matrix(rows, &eq_rows, &work, n);
            let grad = &qp.h * &x + &qp.c;
            let z = null_space(&a_w, n);

            let mut step = DVector::zeros(n);
            let mut ray = false;
            if z.ncols() > 0 {
                let hr = z.transpose() * &qp.h * &z;
                let gr = z.transpose() * &grad;
                let eig = SymmetricEigen::new((&hr + hr.transpose()) * 0.5);
                let flat = 1e-11 * h_scale;
                let mut flat_part = DVector::zeros(z.ncols());
                let mut newton = DVector::zeros(z.ncols());
                for k in 0..eig.eigenvalues.len() {
                    let v = eig.eigenvectors.column(k);
                    let coef = v.dot(&gr);
                    if eig.eigenvalues[k] <= flat {
                        flat_part -= v * coef;
                    } else {
                        newton -= v * (coef / eig.eigenvalues[k]);
                    }
                }
                let g_scale = grad.amax().max(1.0);
                if flat_part.amax() > 1e-10 * g_scale {
                    step = &z * flat_part;
                    ray = true;
                } else {
                    step = &z * newton;
                }
            }

            let x_scale = x.amax().max(1.0);
            if !ray && step.amax() <= 1e-11 * x_scale {
                // Subspace minimiser reached: inspect multipliers.
                if a_w.nrows() == 0 {
                    return self.finish(qp, x, iterations);
                }
                let at = a_w.transpose();
                let svd = SVD::new(at.clone(), true, true);
                let lambda = match svd.solve(&(-&grad), 1e-14) {
                    Ok(l) => l,
                    Err(_) => return SolveResult::without_point(Status::NumericalFailure, iterations),
                };
                let tol_dual = 1e-9 * grad.amax().max(1.0);
                let mut drop: Option<(usize, f64)> = None;
                for (k, &row) in work.iter().enumerate() {
                    let l = lambda[eq_rows.len() + k];
                    if l < -tol_dual && drop.is_none_or(|(kk, lv)| l < lv || (l == lv && row < work[kk])) {
                        drop = Some((k, l));
                    }
                }
                match drop {
                    None => return self.finish(qp, x, iterations),
                    Some((k, _)) => {
                        work.remove(k);
                    }
                }
                continue;
            }

            // Ratio test against inactive inequalities.
            let gp = &rows.g * &step;
            let gx = &rows.g * &x;
            let mut t_max = if ray { f64::INFINITY } else { 1.0 };
            let mut blocking: Option<usize> = None;
            for i in 0..m {
                if work.contains(&i) {
                    continue;
                }
                let rate = gp[i];
                if rate > 1e-12 * step.amax().max(1e-300) * rows.g.row(i).amax().max(1.0) {
                    let t = ((rows.h[i] - gx[i]) / rate).max(0.0);
                    if t < t_max || (t == t_max && blocking.is_some_and(|b| i < b)) {
                        t_max = t;
                        blocking = Some(i);
                    }
                }
            }
            if t_max.is_infinite() {
                return SolveResult::without_point(Status::Unbounded, iterations);
            }
            x += &step * t_max;
            if let Some(b) = blocking {
                work.push(b);
            }
        }
    }

    fn finish(&self, qp: &QuadraticProgram, x: DVector<f64>, iterations: usize) -> SolveResult {
        SolveResult {
            status: Status::Optimal,
            objective: qp.objective(&x),
            x: Some(x),
            iterations,
            residual: 0.0,
        }
    }
}

fn stack_rows(qp: &QuadraticProgram) -> Rows {
    let n = qp.num_vars();
    let mut g_rows: Vec<DVector<f64>> = Vec::new();
    let mut h_vals: Vec<f64> = Vec::new();
    for i in 0..qp.a_ineq.nrows() {
        g_rows.push(qp.a_ineq.row(i).transpose());
        h_vals.push(qp.b_ineq[i]);
    }
    for j in 0..n {
        if qp.ub[j].is_finite() {
            let mut r = DVector::zeros(n);
            r[j] = 1.0;
            g_rows.push(r);
            h_vals.push(qp.ub[j]);
        }
        if qp.lb[j].is_finite() {
            let mut r = DVector::zeros(n);
            r[j] = -1.0;
            g_rows.push(r);
            h_vals.push(-qp.lb[j]);
        }
    }
    let mut g = DMatrix::zeros(g_rows.len(), n);
    for (i, r) in g_rows.iter().enumerate() {
        g.set_row(i, &r.transpose());
    }
    Rows {
        g,
        h: DVector::from_vec(h_vals),
        e: qp.a_eq.clone(),
    }
}

fn working_matrix(rows: &Rows, eq_rows: &[usize], work: &[usize], n: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(eq_rows.len() + work.len(), n);
    for (k, &i) in eq_rows.iter().enumerate() {
        a.set_row(k, &rows.e.row(i));
    }
    for (k, &i) in work.iter().enumerate() {
        a.set_row(eq_rows.len() + k, &rows.g.row(i));
    }
    a
}

/// Orthonormal basis of `{p : A p = 0}` as columns.
fn null_space(a: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    // Pad Aᵀ to a square matrix so the SVD returns a full left basis.
    let mut padded = DMatrix::zeros(n, n.max(a.nrows()));
    padded.view_mut((0, 0), (n, a.nrows())).copy_from(&a.transpose());
    let svd = SVD::new(padded, true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let cut = 1e-10 * smax.max(1e-300);
    let keep: Vec<usize> = (0..n)
        .filter(|&k| k >= svd.singular_values.len() || svd.singular_values[k] <= cut)
        .collect();
    let mut z = DMatrix::zeros(n, keep.len());
    for (c, &k) in keep.iter().enumerate() {
        z.set_column(c, &u.column(k));
    }
    z
}

fn is_independent(basis: &DMatrix<f64>, a: &DVector<f64>) -> bool {
    let n = a.len();
    if basis.nrows() >= n {
        return false;
    }
    let z = null_space(basis, n);
    let proj = z.transpose() * a;
    proj.norm() > 1e-9 * a.norm().max(1e-300)
}

fn append_row(m: &DMatrix<f64>, r: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone().insert_row(m.nrows(), 0.0);
    out.set_row(m.nrows(), &r.transpose());
    out
}

/// Solve with default tolerances and a cold start.
pub fn solve_qp(qp: &QuadraticProgram) -> Result<SolveResult, SolverError> {
    QpSolver::default().solve(qp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unconstrained_parabola() {
        // (x-1)² = x² - 2x + 1
        let qp = QuadraticProgram::new(DMatrix::from_element(1, 1, 2.0), DVector::from_vec(vec![-2.0]));
        let r = solve_qp(&qp).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert_abs_diff_eq!(r.x.unwrap()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn active_lower_bound() {
        let qp = QuadraticProgram::new(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1))
            .with_ineq(DMatrix::from_element(1, 1, -1.0), DVector::from_vec(vec![-2.0]));
        let r = solve_qp(&qp).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert_abs_diff_eq!(r.x.unwrap()[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.objective, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn semidefinite_hessian_behaves_like_lp() {
        // min x  s.t. 0 ≤ x ≤ 3, with zero curvature
        let qp = QuadraticProgram::new(DMatrix::zeros(1, 1), DVector::from_vec(vec![1.0]))
            .with_bounds(DVector::from_vec(vec![0.0]), DVector::from_vec(vec![3.0]));
        let r = solve_qp(&qp).unwrap();
        assert_abs_diff_eq!(r.x.unwrap()[0], 0.0, epsilon = 1e-12);

        let unbounded = QuadraticProgram::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            DVector::from_vec(vec![0.0, -1.0]),
        );
        let start = DVector::from_vec(vec![3.0, 1.0]);
        assert_eq!(
            QpSolver::default().solve_warm(&unbounded, Some(&start)).unwrap().status,
            Status::Unbounded
        );
    }

    #[test]
    fn equality_constrained() {
        // min x² + y²  s.t. x + y = 2
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2))
            .with_eq(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_vec(vec![2.0]));
        let r = solve_qp(&qp).unwrap();
        let x = r.x.unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn infeasible_reported() {
        let qp = QuadraticProgram::new(DMatrix::identity(1, 1), DVector::zeros(1))
            .with_bounds(DVector::from_vec(vec![2.0]), DVector::from_vec(vec![3.0]))
            .with_ineq(DMatrix::from_element(1, 1, 1.0), DVector::from_vec(vec![1.0]));
        assert_eq!(solve_qp(&qp).unwrap().status, Status::Infeasible);
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let qp = QuadraticProgram::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]), DVector::zeros(2));
        assert!(matches!(solve_qp(&qp), Err(SolverError::NotPsd(_))));
        let qp = QuadraticProgram::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), DVector::zeros(2));
        assert!(matches!(solve_qp(&qp), Err(SolverError::NotSymmetric(_))));
    }

    #[test]
    fn warm_start_from_optimum_takes_no_steps() {
        let qp = QuadraticProgram::new(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1))
            .with_ineq(DMatrix::from_element(1, 1, -1.0), DVector::from_vec(vec![-2.0]));
        let warm = DVector::from_vec(vec![2.0]);
        let r = QpSolver::default().solve_warm(&qp, Some(&warm)).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!(r.iterations <= 2);
    }
}
