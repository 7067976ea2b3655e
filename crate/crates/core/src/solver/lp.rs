use nalgebra::{DMatrix, DVector};

use super::{check_finite, SolveResult, SolverError, Status, Tolerances};

/// `min c·x  s.t.  A_ineq x ≤ b_ineq,  A_eq x = b_eq,  lb ≤ x ≤ ub`.
///
/// Bounds may be infinite. A fresh program has free variables and no rows.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    pub c: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl LinearProgram {
    pub fn new(c: DVector<f64>) -> Self {
        let n = c.len();
        Self {
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

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.c.len();
        if self.a_ineq.ncols() != n || self.a_ineq.nrows() != self.b_ineq.len() {
            return Err(SolverError::Dimension(format!(
                "inequality block is {}x{} with {} offsets, expected {} columns",
                self.a_ineq.nrows(),
                self.a_ineq.ncols(),
                self.b_ineq.len(),
                n
            )));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return Err(SolverError::Dimension(format!(
                "equality block is {}x{} with {} offsets, expected {} columns",
                self.a_eq.nrows(),
                self.a_eq.ncols(),
                self.b_eq.len(),
                n
            )));
        }
        if self.lb.len() != n || self.ub.len() != n {
            return Err(SolverError::Dimension("bound vectors".into()));
        }
        check_finite(self.c.iter().copied(), "objective")?;
        check_finite(self.a_ineq.iter().copied(), "inequality matrix")?;
        check_finite(self.b_ineq.iter().copied(), "inequality offsets")?;
        check_finite(self.a_eq.iter().copied(), "equality matrix")?;
        check_finite(self.b_eq.iter().copied(), "equality offsets")?;
        for j in 0..n {
            if self.lb[j].is_nan() || self.ub[j].is_nan() || self.lb[j] == f64::INFINITY || self.ub[j] == f64::NEG_INFINITY {
                return Err(SolverError::NonFinite("bounds"));
            }
            if self.lb[j] > self.ub[j] {
                return Err(SolverError::InvertedBounds(j));
            }
        }
        Ok(())
    }

    /// Largest violation of any row or bound at `x`, relative to `max(1, |rhs|)`.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        let ax = &self.a_ineq * x;
        for i in 0..ax.len() {
            worst = worst.max((ax[i] - self.b_ineq[i]) / self.b_ineq[i].abs().max(1.0));
        }
        let ex = &self.a_eq * x;
        for i in 0..ex.len() {
            worst = worst.max((ex[i] - self.b_eq[i]).abs() / self.b_eq[i].abs().max(1.0));
        }
        for j in 0..x.len() {
            if self.lb[j].is_finite() {
                worst = worst.max((self.lb[j] - x[j]) / self.lb[j].abs().max(1.0));
            }
            if self.ub[j].is_finite() {
                worst = worst.max((x[j] - self.ub[j]) / self.ub[j].abs().max(1.0));
            }
        }
        worst
    }
}

/// How an original variable is expressed through nonnegative standard-form columns.
#[derive(Clone, Copy, Debug)]
enum VarMap {
    /// `x = lb + s`
    Shift { col: usize, lb: f64 },
    /// `x = ub − s`
    Flip { col: usize, ub: f64 },
    /// `x = s⁺ − s⁻`
    Split { pos: usize, neg: usize },
}

/// Dense row-major simplex tableau. The last row holds reduced costs, the last
/// column the right-hand side.
struct Tableau {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tableau {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let cols = self.cols;
        let inv = 1.0 / self.at(pr, pc);
        let (before, rest) = self.data.split_at_mut(pr * cols);
        let (prow, after) = rest.split_at_mut(cols);
        for v in prow.iter_mut() {
            *v *= inv;
        }
        prow[pc] = 1.0;
        let eliminate = |row: &mut [f64]| {
            let f = row[pc];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
                row[pc] = 0.0;
            }
        };
        before.chunks_mut(cols).for_each(eliminate);
        after.chunks_mut(cols).for_each(eliminate);
    }

    fn remove_row(&mut self, r: usize) {
        let cols = self.cols;
        self.data.drain(r * cols..(r + 1) * cols);
        self.rows -= 1;
    }
}

/// Reusable two-phase simplex solver.
///
/// Entering columns follow Dantzig's rule with lowest-index tie breaking; after
/// a run of degenerate pivots the solver switches to Bland's rule until progress
/// resumes, so results are deterministic and cycling cannot occur.
#[derive(Clone, Debug, Default)]
pub struct LpSolver {
    pub tol: Tolerances,
}

impl LpSolver {
    pub fn new(tol: Tolerances) -> Self {
        Self { tol }
    }

    pub fn solve(&self, lp: &LinearProgram) -> Result<SolveResult, SolverError> {
        lp.validate()?;
        Ok(self.solve_validated(lp))
    }

    fn solve_validated(&self, lp: &LinearProgram) -> SolveResult {
        let n = lp.num_vars();

        // Standard form: nonnegative columns, rows of kind ≤ or =.
        let mut maps = Vec::with_capacity(n);
        let mut n_std = 0usize;
        for j in 0..n {
            let (lo, hi) = (lp.lb[j], lp.ub[j]);
            let m = if lo.is_finite() {
                VarMap::Shift { col: n_std, lb: lo }
            } else if hi.is_finite() {
                VarMap::Flip { col: n_std, ub: hi }
            } else {
                n_std += 1;
                VarMap::Split { pos: n_std - 1, neg: n_std }
            };
            n_std += 1;
            maps.push(m);
        }

        let mut c_std = vec![0.0; n_std];
        for (j, m) in maps.iter().enumerate() {
            let cj = lp.c[j];
            match *m {
                VarMap::Shift { col, .. } => c_std[col] = cj,
                VarMap::Flip { col, .. } => c_std[col] = -cj,
                VarMap::Split { pos, neg } => {
                    c_std[pos] = cj;
                    c_std[neg] = -cj;
                }
            }
        }

        struct Row {
            coef: Vec<f64>,
            rhs: f64,
            is_eq: bool,
        }
        let translate = |a: &[f64], b: f64, is_eq: bool| -> Row {
            let mut coef = vec![0.0; n_std];
            let mut rhs = b;
            for (j, m) in maps.iter().enumerate() {
                let aj = a[j];
                if aj == 0.0 {
                    continue;
                }
                match *m {
                    VarMap::Shift { col, lb } => {
                        coef[col] += aj;
                        rhs -= aj * lb;
                    }
                    VarMap::Flip { col, ub } => {
                        coef[col] -= aj;
                        rhs -= aj * ub;
                    }
                    VarMap::Split { pos, neg } => {
                        coef[pos] += aj;
                        coef[neg] -= aj;
                    }
                }
            }
            Row { coef, rhs, is_eq }
        };

        let mut rows: Vec<Row> = Vec::new();
        let mut buf = vec![0.0; n];
        for i in 0..lp.a_ineq.nrows() {
            for j in 0..n {
                buf[j] = lp.a_ineq[(i, j)];
            }
            rows.push(translate(&buf, lp.b_ineq[i], false));
        }
        for i in 0..lp.a_eq.nrows() {
            for j in 0..n {
                buf[j] = lp.a_eq[(i, j)];
            }
            rows.push(translate(&buf, lp.b_eq[i], true));
        }
        for (j, m) in maps.iter().enumerate() {
            if let VarMap::Shift { col, lb } = *m {
                if lp.ub[j].is_finite() {
                    let mut coef = vec![0.0; n_std];
                    coef[col] = 1.0;
                    rows.push(Row { coef, rhs: lp.ub[j] - lb, is_eq: false });
                }
            }
        }

        let m = rows.len();
        let n_slack = rows.iter().filter(|r| !r.is_eq).count();
        let needs_art: Vec<bool> = rows.iter().map(|r| r.is_eq || r.rhs < 0.0).collect();
        let n_art = needs_art.iter().filter(|&&b| b).count();
        let art_start = n_std + n_slack;
        let total = art_start + n_art;
        let rhs_col = total;

        let mut t = Tableau::zeros(m + 1, total + 1);
        let mut basis = vec![0usize; m];
        // Standard-form matrix (after sign normalisation) kept for the final refinement.
        let mut a_std = DMatrix::<f64>::zeros(m, total);
        let mut b_std = DVector::<f64>::zeros(m);
        let mut slack = n_std;
        let mut art = art_start;
        for (i, row) in rows.iter().enumerate() {
            let sign = if row.rhs < 0.0 { -1.0 } else { 1.0 };
            for j in 0..n_std {
                let v = sign * row.coef[j];
                t.set(i, j, v);
                a_std[(i, j)] = v;
            }
            if !row.is_eq {
                t.set(i, slack, sign);
                a_std[(i, slack)] = sign;
                if !needs_art[i] {
                    basis[i] = slack;
                }
                slack += 1;
            }
            if needs_art[i] {
                t.set(i, art, 1.0);
                a_std[(i, art)] = 1.0;
                basis[i] = art;
                art += 1;
            }
            t.set(i, rhs_col, sign * row.rhs);
            b_std[i] = sign * row.rhs;
        }

        let max_iter = 20_000 + 50 * (m + total);
        let mut iterations = 0usize;
        let b_scale = b_std.amax().max(1.0);

        // Phase one.
        if n_art > 0 {
            for i in 0..m {
                if basis[i] >= art_start {
                    for j in 0..=total {
                        if j < art_start || j == rhs_col {
                            let v = t.at(m, j) - t.at(i, j);
                            t.set(m, j, v);
                        }
                    }
                }
            }
            let tol_opt = self.tol.optimality;
            match self.iterate(&mut t, &mut basis, art_start, tol_opt, &mut iterations, max_iter) {
                Phase::Optimal => {}
                Phase::Unbounded => { log::debug!("lp: phase one unbounded"); return SolveResult::without_point(Status::NumericalFailure, iterations) }
                Phase::IterationLimit => return SolveResult::without_point(Status::NumericalFailure, iterations),
            }
            let infeas = -t.at(t.rows - 1, rhs_col);
            if infeas > self.tol.phase_one * b_scale {
                return SolveResult::without_point(Status::Infeasible, iterations);
            }
            // Drive artificials out of the basis; drop redundant rows.
            let mut i = 0;
            while i < t.rows - 1 {
                if basis[i] >= art_start {
                    let mut best: Option<(usize, f64)> = None;
                    for j in 0..art_start {
                        let v = t.at(i, j).abs();
                        if v > 1e-9 && best.is_none_or(|(_, bv)| v > bv) {
                            best = Some((j, v));
                        }
                    }
                    match best {
                        Some((j, _)) => {
                            t.pivot(i, j);
                            basis[i] = j;
                            iterations += 1;
                            i += 1;
                        }
                        None => {
                            t.remove_row(i);
                            basis.remove(i);
                            a_std = a_std.remove_row(i);
                            b_std = b_std.remove_row(i);
                        }
                    }
                } else {
                    i += 1;
                }
            }
        }

        // Phase two objective row.
        let m = t.rows - 1;
        for j in 0..=total {
            t.set(m, j, 0.0);
        }
        for j in 0..n_std {
            t.set(m, j, c_std[j]);
        }
        for i in 0..m {
            let cb = if basis[i] < n_std { c_std[basis[i]] } else { 0.0 };
            if cb != 0.0 {
                for j in 0..=total {
                    let v = t.at(m, j) - cb * t.at(i, j);
                    t.set(m, j, v);
                }
            }
        }
        let c_scale = c_std.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        match self.iterate(&mut t, &mut basis, art_start, self.tol.optimality * c_scale, &mut iterations, max_iter) {
            Phase::Optimal => {}
            Phase::Unbounded => return SolveResult::without_point(Status::Unbounded, iterations),
            Phase::IterationLimit => return SolveResult::without_point(Status::NumericalFailure, iterations),
        }

        // Recover the basic solution from the original data rather than the
        // accumulated tableau.
        let mut x_std = vec![0.0; total];
        let mut refined = false;
        if m > 0 {
            let mut bmat = DMatrix::<f64>::zeros(m, m);
            for (k, &col) in basis.iter().enumerate() {
                bmat.set_column(k, &a_std.column(col));
            }
            if let Some(xb) = bmat.lu().solve(&b_std) {
                if xb.iter().all(|v| v.is_finite()) {
                    for (k, &col) in basis.iter().enumerate() {
                        x_std[col] = xb[k];
                    }
                    refined = true;
                }
            }
        }
        if !refined {
            for (k, &col) in basis.iter().enumerate() {
                x_std[col] = t.at(k, rhs_col);
            }
        }

        let mut x = DVector::zeros(n);
        for (j, map) in maps.iter().enumerate() {
            x[j] = match *map {
                VarMap::Shift { col, lb } => lb + x_std[col].max(0.0),
                VarMap::Flip { col, ub } => ub - x_std[col].max(0.0),
                VarMap::Split { pos, neg } => x_std[pos] - x_std[neg],
            };
        }
        let residual = lp.violation(&x);
        if residual > self.tol.feasibility {
            log::debug!("lp: residual {residual:e} after {iterations} pivots");
            return SolveResult {
                status: Status::NumericalFailure,
                x: None,
                objective: f64::NAN,
                iterations,
                residual,
            };
        }
        SolveResult {
            status: Status::Optimal,
            objective: lp.c.dot(&x),
            x: Some(x),
            iterations,
            residual: residual.max(0.0),
        }
    }

    fn iterate(
        &self,
        t: &mut Tableau,
        basis: &mut [usize],
        art_start: usize,
        tol_opt: f64,
        iterations: &mut usize,
        max_iter: usize,
    ) -> Phase {
        let m = t.rows - 1;
        let mut degenerate = 0usize;
        loop {
            if *iterations >= max_iter {
                return Phase::IterationLimit;
            }
            let bland = degenerate >= self.tol.degenerate_streak;
            let mut enter = None;
            let mut best = -tol_opt;
            for j in 0..art_start {
                let d = t.at(m, j);
                if d < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(s) = enter else { return Phase::Optimal };

            let leave = if bland { self.ratio_bland(t, basis, s) } else { self.ratio_harris(t, s) };
            let Some((r, best_ratio)) = leave else { return Phase::Unbounded };
            if best_ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            t.pivot(r, s);
            basis[r] = s;
            *iterations += 1;
        }
    }

    /// Minimum ratio, ties to the lowest basic index.
    fn ratio_bland(&self, t: &Tableau, basis: &[usize], s: usize) -> Option<(usize, f64)> {
        let m = t.rows - 1;
        let rhs_col = t.cols - 1;
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let a = t.at(i, s);
            if a > self.tol.pivot {
                let ratio = t.at(i, rhs_col).max(0.0) / a;
                let better = match leave {
                    None => true,
                    Some((l, best)) => {
                        let slack = 1e-12 * best.abs().max(1.0);
                        ratio < best - slack || (ratio <= best + slack && basis[i] < basis[l])
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        leave
    }

    /// Two-pass ratio test: among rows within a small relaxation of the
    /// minimum ratio, the largest pivot element.
    fn ratio_harris(&self, t: &Tableau, s: usize) -> Option<(usize, f64)> {
        let m = t.rows - 1;
        let rhs_col = t.cols - 1;
        let relax = self.tol.phase_one;
        let mut bound = f64::INFINITY;
        for i in 0..m {
            let a = t.at(i, s);
            if a > self.tol.pivot {
                bound = bound.min((t.at(i, rhs_col).max(0.0) + relax) / a);
            }
        }
        if !bound.is_finite() {
            return None;
        }
        let mut leave: Option<(usize, f64, f64)> = None;
        for i in 0..m {
            let a = t.at(i, s);
            if a > self.tol.pivot {
                let ratio = t.at(i, rhs_col).max(0.0) / a;
                if ratio <= bound && leave.is_none_or(|(_, _, best)| a > best) {
                    leave = Some((i, ratio, a));
                }
            }
        }
        leave.map(|(i, r, _)| (i, r))
    }
}

enum Phase {
    Optimal,
    Unbounded,
    IterationLimit,
}

/// Solve with default tolerances.
pub fn solve_lp(lp: &LinearProgram) -> Result<SolveResult, SolverError> {
    LpSolver::default().solve(lp)
}
