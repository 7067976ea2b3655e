//! Brute-force reference computations shared by the integration tests.
#![allow(dead_code)]

use homotube::polytope::HPolytope;
use homotube::solver::{LinearProgram, QuadraticProgram};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub const FEAS_TOL: f64 = 1e-9;

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Inequality rows `A x ≤ b` including finite variable bounds.
pub fn stacked_rows(a: &DMatrix<f64>, b: &DVector<f64>, lb: &DVector<f64>, ub: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = a.ncols();
    let mut rows: Vec<(Vec<f64>, f64)> = (0..a.nrows()).map(|i| (a.row(i).iter().copied().collect(), b[i])).collect();
    for j in 0..n {
        if ub[j].is_finite() {
            let mut r = vec![0.0; n];
            r[j] = 1.0;
            rows.push((r, ub[j]));
        }
        if lb[j].is_finite() {
            let mut r = vec![0.0; n];
            r[j] = -1.0;
            rows.push((r, -lb[j]));
        }
    }
    let m = rows.len();
    let mut am = DMatrix::zeros(m, n);
    let mut bm = DVector::zeros(m);
    for (i, (r, v)) in rows.into_iter().enumerate() {
        for j in 0..n {
            am[(i, j)] = r[j];
        }
        bm[i] = v;
    }
    (am, bm)
}

fn feasible(a: &DMatrix<f64>, b: &DVector<f64>, a_eq: &DMatrix<f64>, b_eq: &DVector<f64>, x: &DVector<f64>) -> bool {
    let scale = |v: f64| v.abs().max(1.0);
    (0..a.nrows()).all(|i| (a.row(i) * x)[0] <= b[i] + FEAS_TOL * scale(b[i]))
        && (0..a_eq.nrows()).all(|i| ((a_eq.row(i) * x)[0] - b_eq[i]).abs() <= FEAS_TOL * scale(b_eq[i]))
}

/// Optimal value of a bounded LP by enumerating every vertex, or `None` when
/// the feasible set is empty.
pub fn lp_by_vertices(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_vars();
    let (a, b) = stacked_rows(&lp.a_ineq, &lp.b_ineq, &lp.lb, &lp.ub);
    let ne = lp.a_eq.nrows();
    let mut best: Option<f64> = None;
    for s in subsets(a.nrows(), n - ne) {
        let mut m = DMatrix::zeros(n, n);
        let mut r = DVector::zeros(n);
        for (k, &i) in s.iter().enumerate() {
            m.row_mut(k).copy_from(&a.row(i));
            r[k] = b[i];
        }
        for e in 0..ne {
            m.row_mut(n - ne + e).copy_from(&lp.a_eq.row(e));
            r[n - ne + e] = lp.b_eq[e];
        }
        if m.determinant().abs() < 1e-10 {
            continue;
        }
        let Some(x) = m.lu().solve(&r) else { continue };
        if feasible(&a, &b, &lp.a_eq, &lp.b_eq, &x) {
            let v = lp.c.dot(&x);
            best = Some(best.map_or(v, |w: f64| w.min(v)));
        }
    }
    best
}

/// Optimal value of a strictly convex QP by enumerating active sets, or `None`
/// when no candidate is feasible.
pub fn qp_by_active_sets(qp: &QuadraticProgram) -> Option<f64> {
    let n = qp.num_vars();
    let (a, b) = stacked_rows(&qp.a_ineq, &qp.b_ineq, &qp.lb, &qp.ub);
    let ne = qp.a_eq.nrows();
    let mut best: Option<f64> = None;
    for k in 0..=(n - ne).min(a.nrows()) {
        for s in subsets(a.nrows(), k) {
            let na = k + ne;
            let mut kkt = DMatrix::zeros(n + na, n + na);
            let mut rhs = DVector::zeros(n + na);
            kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
            for j in 0..n {
                rhs[j] = -qp.c[j];
            }
            let mut put = |row: usize, coeffs: Vec<f64>, val: f64| {
                for j in 0..n {
                    kkt[(n + row, j)] = coeffs[j];
                    kkt[(j, n + row)] = coeffs[j];
                }
                rhs[n + row] = val;
            };
            for (q, &i) in s.iter().enumerate() {
                put(q, a.row(i).iter().copied().collect(), b[i]);
            }
            for e in 0..ne {
                put(k + e, qp.a_eq.row(e).iter().copied().collect(), qp.b_eq[e]);
            }
            if kkt.determinant().abs() < 1e-12 {
                continue;
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let x = sol.rows(0, n).into_owned();
            if feasible(&a, &b, &qp.a_eq, &qp.b_eq, &x) {
                let v = qp.objective(&x);
                best = Some(best.map_or(v, |w: f64| w.min(v)));
            }
        }
    }
    best
}

/// Vertices of a bounded 2-D polytope by pairwise facet intersection, in
/// counter-clockwise order.
pub fn polygon_vertices(p: &HPolytope) -> Vec<[f64; 2]> {
    let (v, b) = (p.normals(), p.offsets());
    let m = v.nrows();
    let mut pts: Vec<[f64; 2]> = Vec::new();
    for i in 0..m {
        for j in i + 1..m {
            let det = v[(i, 0)] * v[(j, 1)] - v[(i, 1)] * v[(j, 0)];
            if det.abs() < 1e-14 {
                continue;
            }
            let x = (b[i] * v[(j, 1)] - v[(i, 1)] * b[j]) / det;
            let y = (v[(i, 0)] * b[j] - b[i] * v[(j, 0)]) / det;
            let ok = (0..m).all(|k| v[(k, 0)] * x + v[(k, 1)] * y <= b[k] + 1e-9 * b[k].abs().max(1.0));
            if ok && !pts.iter().any(|q| (q[0] - x).abs() < 1e-12 && (q[1] - y).abs() < 1e-12) {
                pts.push([x, y]);
            }
        }
    }
    if pts.is_empty() {
        return pts;
    }
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / pts.len() as f64;
    pts.sort_by(|p, q| (p[1] - cy).atan2(p[0] - cx).total_cmp(&(q[1] - cy).atan2(q[0] - cx)));
    pts
}

/// Shoelace area of a vertex list.
pub fn shoelace(pts: &[[f64; 2]]) -> f64 {
    let n = pts.len();
    if n < 3 {
        return 0.0;
    }
    (0..n).map(|i| pts[i][0] * pts[(i + 1) % n][1] - pts[(i + 1) % n][0] * pts[i][1]).sum::<f64>().abs() / 2.0
}

/// Bounded polygon `{V w ≤ 1}` with `m` facets whose normal angles are
/// spread around the circle with jitter and random lengths.
pub fn random_unit_polygon<R: Rng>(m: usize, rng: &mut R) -> HPolytope {
    let step = std::f64::consts::TAU / m as f64;
    let mut v = DMatrix::zeros(m, 2);
    for i in 0..m {
        let ang = step * i as f64 + rng.random_range(-0.2..0.2) * step;
        let len = rng.random_range(0.5..2.0);
        v[(i, 0)] = ang.cos() * len;
        v[(i, 1)] = ang.sin() * len;
    }
    HPolytope::new(v, DVector::from_element(m, 1.0)).expect("spread normals give a bounded polygon")
}

/// Uniform point of a polygon by rejection from its bounding box.
pub fn uniform_in<R: Rng>(p: &HPolytope, rng: &mut R) -> DVector<f64> {
    let (lo, hi) = p.bounding_box().expect("bounded");
    loop {
        let x = DVector::from_fn(p.dim(), |i, _| rng.random_range(lo[i]..=hi[i]));
        if p.contains_point(&x, 0.0) {
            return x;
        }
    }
}

/// Value of the covering problem over `(v, θ, ρ)` for a fixed `ρ`: with
/// `y = (1 − ρ) v` it is `ρ + min_y Σ max(0, lower − V y)` subject to
/// `lower − V y ≤ ρ` and `V y ≤ 1 − ρ`. The inner problem is piecewise linear
/// in the plane, so its minimum sits at an intersection of two breakpoint
/// lines. `uniform` replaces the sum by `m·ρ` (all `θ_i = ρ`).
pub fn cover_value_at_rho(v: &DMatrix<f64>, lower: &DVector<f64>, rho: f64, uniform: bool) -> Option<f64> {
    let m = v.nrows();
    let mut lines: Vec<(usize, f64)> = Vec::new();
    for i in 0..m {
        lines.push((i, lower[i]));
        lines.push((i, lower[i] - rho));
        lines.push((i, 1.0 - rho));
    }
    let tol = 1e-11;
    let value = |y: [f64; 2]| -> Option<f64> {
        let mut sum = 0.0;
        for i in 0..m {
            let vy = v[(i, 0)] * y[0] + v[(i, 1)] * y[1];
            if vy > 1.0 - rho + tol || lower[i] - vy > rho + tol {
                return None;
            }
            sum += (lower[i] - vy).max(0.0);
        }
        Some(rho + if uniform { m as f64 * rho } else { sum })
    };
    let mut best: Option<f64> = None;
    for p in 0..lines.len() {
        for q in p + 1..lines.len() {
            let (i, bi) = lines[p];
            let (j, bj) = lines[q];
            let det = v[(i, 0)] * v[(j, 1)] - v[(i, 1)] * v[(j, 0)];
            if det.abs() < 1e-14 {
                continue;
            }
            let y = [(bi * v[(j, 1)] - v[(i, 1)] * bj) / det, (v[(i, 0)] * bj - bi * v[(j, 0)]) / det];
            if let Some(f) = value(y) {
                best = Some(best.map_or(f, |b: f64| b.min(f)));
            }
        }
    }
    best
}

/// Minimum over `ρ ∈ [0, 1]` of [`cover_value_at_rho`]: a grid pass followed by
/// a ternary refinement around the best grid point (the value is convex on its
/// feasible interval).
pub fn cover_by_rho_grid(v: &DMatrix<f64>, lower: &DVector<f64>, uniform: bool) -> f64 {
    let grid: usize = 400;
    let at = |r: f64| cover_value_at_rho(v, lower, r, uniform).unwrap_or(f64::INFINITY);
    let mut k_best = grid;
    let mut f_best = at(1.0);
    for k in 0..grid {
        let f = at(k as f64 / grid as f64);
        if f < f_best {
            f_best = f;
            k_best = k;
        }
    }
    let mut lo = (k_best.saturating_sub(1)) as f64 / grid as f64;
    let mut hi = ((k_best + 1).min(grid)) as f64 / grid as f64;
    if !at(lo).is_finite() {
        // Left end of the feasible interval by bisection.
        let mut good = k_best as f64 / grid as f64;
        for _ in 0..100 {
            let mid = 0.5 * (lo + good);
            if at(mid).is_finite() {
                good = mid;
            } else {
                lo = mid;
            }
        }
        lo = good;
    }
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if at(m1) <= at(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    f_best.min(at(0.5 * (lo + hi))).min(at(lo))
}

fn random_matrix<R: Rng>(r: usize, c: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Small LP with a box, a few random inequalities and, sometimes, one
/// equality. About one in six instances is made infeasible.
pub fn random_lp<R: Rng>(rng: &mut R) -> LinearProgram {
    let n = rng.random_range(2..=4);
    let m = rng.random_range(2..=6);
    let a = random_matrix(m, n, rng);
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let mut b = &a * &x0 + DVector::from_fn(m, |_, _| rng.random_range(0.0..1.0));
    if rng.random_bool(1.0 / 6.0) {
        // Two opposite half-spaces that cannot both hold.
        let mut a2 = DMatrix::zeros(m + 2, n);
        a2.view_mut((0, 0), (m, n)).copy_from(&a);
        let d = random_matrix(1, n, rng);
        a2.row_mut(m).copy_from(&d);
        a2.row_mut(m + 1).copy_from(&(-d));
        let mut b2 = DVector::zeros(m + 2);
        b2.rows_mut(0, m).copy_from(&b);
        b2[m] = -0.5;
        b2[m + 1] = -0.5;
        return LinearProgram::new(DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)))
            .with_ineq(a2, b2)
            .with_bounds(DVector::from_element(n, -3.0), DVector::from_element(n, 3.0));
    }
    let mut lp = LinearProgram::new(DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)));
    if rng.random_bool(0.3) {
        let e = random_matrix(1, n, rng);
        let be = (&e * &x0)[0];
        lp = lp.with_eq(e, DVector::from_element(1, be));
    }
    b.iter_mut().for_each(|v| *v = v.max(-2.5));
    lp.with_ineq(a, b).with_bounds(DVector::from_element(n, -3.0), DVector::from_element(n, 3.0))
}

/// Small strictly convex QP with random inequalities, optional bounds and,
/// sometimes, one equality.
pub fn random_qp<R: Rng>(rng: &mut R) -> QuadraticProgram {
    let n = rng.random_range(2..=4);
    let m = rng.random_range(1..=5);
    let l = random_matrix(n, n, rng);
    let h = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    let c = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let a = random_matrix(m, n, rng);
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let b = &a * &x0 + DVector::from_fn(m, |_, _| rng.random_range(0.0..0.5));
    let mut qp = QuadraticProgram::new(h, c).with_ineq(a, b);
    if rng.random_bool(0.5) {
        qp = qp.with_bounds(DVector::from_element(n, -2.0), DVector::from_element(n, 2.0));
    }
    if rng.random_bool(0.3) {
        let e = random_matrix(1, n, rng);
        let be = (&e * &x0)[0];
        qp = qp.with_eq(e, DVector::from_element(1, be));
    }
    qp
}
