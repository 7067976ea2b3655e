//! Polytopes in halfspace representation `{x : V x ≤ b}`.
//!
//! Every set-valued quantity in the controller (the conservative disturbance set,
//! the tube cross-section, learned sets) is an [`HPolytope`]. Minkowski sums are
//! never formed explicitly; they are handled through support-function
//! arithmetic, one LP per direction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{serde_matrix, serde_vector, spectral_radius};
use crate::solver::{LinearProgram, LpSolver, SolverError, Status};

/// Absolute tolerance for containment and verification comparisons.
pub const TOL_SET: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolytopeError {
    #[error("polytope is empty")]
    Empty,
    #[error("polytope is unbounded")]
    Unbounded,
    #[error("row {0} of the normal matrix is zero")]
    ZeroRow(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite polytope data")]
    NonFinite,
    #[error("scaling vector entry {index} = {value} is outside [0, 1]")]
    ScalingOutOfRange { index: usize, value: f64 },
    #[error("heterogeneous scaling needs unit offsets")]
    NotUnitOffsets,
    #[error("LP failed numerically while evaluating a support function")]
    Numerical,
    #[error("closed loop is not strictly stable (spectral radius {0})")]
    NotStable(f64),
    #[error(
        "invariant-set iteration did not converge in {iterations} steps (last change {change:e}); \
         enrich the template, e.g. append rows of template·Φ and template·Φ²"
    )]
    NotConverged { iterations: usize, change: f64 },
    #[error("invariant-set offsets must be positive; row {0} has a non-positive offset (origin not interior)")]
    NonPositiveOffset(usize),
    #[error("invariance check failed: support(S, V_s Φ) + support(W, V_s) reaches {0} > 1")]
    NotInvariant(f64),
    #[error("only defined for dimension {expected}, got {got}")]
    WrongDimension { expected: usize, got: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// `{x : V x ≤ b}`.
///
/// Construction through [`HPolytope::new`] checks that the set is nonempty and
/// bounded. Lower-dimensional sets (e.g. a single point) are legal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolytope", into = "RawPolytope")]
pub struct HPolytope {
    v: DMatrix<f64>,
    b: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolytope {
    #[serde(rename = "V", with = "serde_matrix")]
    v: DMatrix<f64>,
    #[serde(with = "serde_vector")]
    b: DVector<f64>,
}

impl TryFrom<RawPolytope> for HPolytope {
    type Error = PolytopeError;
    fn try_from(raw: RawPolytope) -> Result<Self, Self::Error> {
        HPolytope::new(raw.v, raw.b)
    }
}

impl From<HPolytope> for RawPolytope {
    fn from(p: HPolytope) -> Self {
        RawPolytope { v: p.v, b: p.b }
    }
}

/// Support values, one per queried direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SupportVector(#[serde(with = "serde_vector")] pub DVector<f64>);

impl SupportVector {
    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for SupportVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl HPolytope {
    pub fn new(v: DMatrix<f64>, b: DVector<f64>) -> Result<Self, PolytopeError> {
        let p = Self::unchecked(v, b)?;
        p.check_nonempty_bounded()?;
        Ok(p)
    }

    /// Shape checks only; callers guarantee nonemptiness and boundedness.
    pub(crate) fn unchecked(v: DMatrix<f64>, b: DVector<f64>) -> Result<Self, PolytopeError> {
        if v.nrows() != b.len() {
            return Err(PolytopeError::Dimension(format!("{} normals but {} offsets", v.nrows(), b.len())));
        }
        if !v.iter().chain(b.iter()).all(|x| x.is_finite()) {
            return Err(PolytopeError::NonFinite);
        }
        for i in 0..v.nrows() {
            if v.row(i).amax() == 0.0 {
                return Err(PolytopeError::ZeroRow(i));
            }
        }
        Ok(Self { v, b })
    }

    /// Axis-aligned box `[lo, hi]`.
    pub fn from_bounds(lo: &[f64], hi: &[f64]) -> Result<Self, PolytopeError> {
        if lo.len() != hi.len() {
            return Err(PolytopeError::Dimension("box bounds".into()));
        }
        let n = lo.len();
        let mut v = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for i in 0..n {
            v[(2 * i, i)] = 1.0;
            b[2 * i] = hi[i];
            v[(2 * i + 1, i)] = -1.0;
            b[2 * i + 1] = -lo[i];
        }
        Self::new(v, b)
    }

    /// `[-1, 1]^n` with facet order `+x₁, −x₁, +x₂, −x₂, …`.
    pub fn unit_box(n: usize) -> Self {
        Self::from_bounds(&vec![-1.0; n], &vec![1.0; n]).expect("unit box is valid")
    }

    pub fn dim(&self) -> usize {
        self.v.ncols()
    }

    pub fn num_facets(&self) -> usize {
        self.v.nrows()
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn contains_point(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim() && (&self.v * x - &self.b).iter().all(|&r| r <= tol)
    }

    fn check_nonempty_bounded(&self) -> Result<(), PolytopeError> {
        let n = self.dim();
        let mut dirs = DMatrix::zeros(2 * n, n);
        for i in 0..n {
            dirs[(2 * i, i)] = 1.0;
            dirs[(2 * i + 1, i)] = -1.0;
        }
        self.support(&dirs).map(|_| ())
    }

    /// Maximiser and value of `d·x` over the set.
    pub fn argmax(&self, d: &DVector<f64>) -> Result<(f64, DVector<f64>), PolytopeError> {
        if d.len() != self.dim() {
            return Err(PolytopeError::Dimension(format!("direction of length {} in dimension {}", d.len(), self.dim())));
        }
        let lp = LinearProgram::new(-d.clone()).with_ineq(self.v.clone(), self.b.clone());
        let r = LpSolver::default().solve(&lp)?;
        match r.status {
            Status::Optimal => Ok((-r.objective, r.x.expect("optimal"))),
            Status::Infeasible => Err(PolytopeError::Empty),
            Status::Unbounded => Err(PolytopeError::Unbounded),
            Status::NumericalFailure => Err(PolytopeError::Numerical),
        }
    }

    /// `max_{x∈P} d·x` for a single direction.
    pub fn support_dir(&self, d: &DVector<f64>) -> Result<f64, PolytopeError> {
        self.argmax(d).map(|(v, _)| v)
    }

    /// Support values for every row of `dirs`.
    pub fn support(&self, dirs: &DMatrix<f64>) -> Result<SupportVector, PolytopeError> {
        if dirs.ncols() != self.dim() {
            return Err(PolytopeError::Dimension(format!(
                "directions have {} columns, set has dimension {}",
                dirs.ncols(),
                self.dim()
            )));
        }
        let mut out = DVector::zeros(dirs.nrows());
        for j in 0..dirs.nrows() {
            out[j] = self.support_dir(&dirs.row(j).transpose())?;
        }
        Ok(SupportVector(out))
    }

    /// `true` iff `inner ⊆ self`, within [`TOL_SET`].
    pub fn contains(&self, inner: &HPolytope) -> Result<bool, PolytopeError> {
        if inner.dim() != self.dim() {
            return Err(PolytopeError::Dimension(format!("{} vs {}", self.dim(), inner.dim())));
        }
        let s = inner.support(&self.v)?;
        Ok(s.0.iter().zip(self.b.iter()).all(|(a, b)| *a <= *b + TOL_SET))
    }

    /// `{x : V x ≤ θ}` for a set given with unit offsets.
    pub fn scale_hetero(&self, theta: &DVector<f64>) -> Result<HPolytope, PolytopeError> {
        if theta.len() != self.num_facets() {
            return Err(PolytopeError::Dimension(format!("{} scalings for {} facets", theta.len(), self.num_facets())));
        }
        if self.b.iter().any(|&b| (b - 1.0).abs() > 1e-12) {
            return Err(PolytopeError::NotUnitOffsets);
        }
        for (index, &value) in theta.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(PolytopeError::ScalingOutOfRange { index, value });
            }
        }
        Ok(Self { v: self.v.clone(), b: theta.clone() })
    }

    /// `{x + t : x ∈ P}`.
    pub fn translate(&self, t: &DVector<f64>) -> Result<HPolytope, PolytopeError> {
        if t.len() != self.dim() {
            return Err(PolytopeError::Dimension(format!("shift of length {} in dimension {}", t.len(), self.dim())));
        }
        Ok(Self { v: self.v.clone(), b: &self.b + &self.v * t })
    }

    /// `{a x : x ∈ P}` for `a ≥ 0`.
    pub fn scale(&self, a: f64) -> HPolytope {
        assert!(a >= 0.0, "scaling factor must be nonnegative");
        Self { v: self.v.clone(), b: &self.b * a }
    }

    /// Componentwise bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> Result<(DVector<f64>, DVector<f64>), PolytopeError> {
        let n = self.dim();
        let mut lo = DVector::zeros(n);
        let mut hi = DVector::zeros(n);
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            hi[i] = self.support_dir(&e)?;
            e[i] = -1.0;
            lo[i] = -self.support_dir(&e)?;
        }
        Ok((lo, hi))
    }

    /// Radius of the largest Euclidean ball inside the set; zero for sets
    /// without interior.
    pub fn chebyshev_radius(&self) -> Result<f64, PolytopeError> {
        let n = self.dim();
        let m = self.num_facets();
        let mut a = DMatrix::zeros(m, n + 1);
        a.view_mut((0, 0), (m, n)).copy_from(&self.v);
        for i in 0..m {
            a[(i, n)] = self.v.row(i).norm();
        }
        let mut c = DVector::zeros(n + 1);
        c[n] = -1.0;
        let mut lb = DVector::from_element(n + 1, f64::NEG_INFINITY);
        lb[n] = 0.0;
        let lp = LinearProgram::new(c)
            .with_ineq(a, self.b.clone())
            .with_bounds(lb, DVector::from_element(n + 1, f64::INFINITY));
        let r = LpSolver::default().solve(&lp)?;
        match r.status {
            Status::Optimal => Ok(-r.objective),
            Status::Infeasible => Err(PolytopeError::Empty),
            Status::Unbounded => Err(PolytopeError::Unbounded),
            Status::NumericalFailure => Err(PolytopeError::Numerical),
        }
    }

    /// Drop rows implied by the others. The set is unchanged.
    pub fn remove_redundant(&self) -> Result<HPolytope, PolytopeError> {
        let mut keep: Vec<usize> = (0..self.num_facets()).collect();
        let mut i = 0;
        while i < keep.len() {
            let row = keep[i];
            let others: Vec<usize> = keep.iter().copied().filter(|&r| r != row).collect();
            if others.is_empty() {
                break;
            }
            let sub = Self {
                v: self.v.select_rows(others.iter()),
                b: self.b.select_rows(others.iter()),
            };
            let redundant = match sub.support_dir(&self.v.row(row).transpose()) {
                Ok(s) => s <= self.b[row] + 1e-10 * self.b[row].abs().max(1.0),
                Err(PolytopeError::Unbounded) => false,
                Err(e) => return Err(e),
            };
            if redundant {
                keep.remove(i);
            } else {
                i += 1;
            }
        }
        Ok(Self {
            v: self.v.select_rows(keep.iter()),
            b: self.b.select_rows(keep.iter()),
        })
    }

    /// Vertices of a 2-D polytope in counter-clockwise order.
    ///
    /// Pairwise facet intersections, filtered for feasibility, deduplicated and
    /// sorted by angle about their centroid. Degenerate sets return fewer than
    /// three points.
    pub fn vertices_2d(&self) -> Result<Vec<[f64; 2]>, PolytopeError> {
        if self.dim() != 2 {
            return Err(PolytopeError::WrongDimension { expected: 2, got: self.dim() });
        }
        let m = self.num_facets();
        let scale = self.b.amax().max(1.0);
        let mut pts: Vec<[f64; 2]> = Vec::new();
        for i in 0..m {
            for j in (i + 1)..m {
                let (a1, b1, c1) = (self.v[(i, 0)], self.v[(i, 1)], self.b[i]);
                let (a2, b2, c2) = (self.v[(j, 0)], self.v[(j, 1)], self.b[j]);
                let det = a1 * b2 - a2 * b1;
                if det.abs() < 1e-12 * (a1.hypot(b1) * a2.hypot(b2)) {
                    continue;
                }
                let x = (c1 * b2 - c2 * b1) / det;
                let y = (a1 * c2 - a2 * c1) / det;
                let p = DVector::from_vec(vec![x, y]);
                if self.contains_point(&p, 1e-9 * scale)
                    && !pts.iter().any(|q| (q[0] - x).abs() <= 1e-9 * scale && (q[1] - y).abs() <= 1e-9 * scale)
                {
                    pts.push([x, y]);
                }
            }
        }
        if pts.len() >= 3 {
            let cx = pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64;
            let cy = pts.iter().map(|p| p[1]).sum::<f64>() / pts.len() as f64;
            pts.sort_by(|p, q| {
                let ap = (p[1] - cy).atan2(p[0] - cx);
                let aq = (q[1] - cy).atan2(q[0] - cx);
                ap.total_cmp(&aq)
            });
        }
        Ok(pts)
    }

    /// Exact area of a 2-D polytope (shoelace over the enumerated vertices).
    pub fn area_2d(&self) -> Result<f64, PolytopeError> {
        let pts = self.vertices_2d()?;
        if pts.len() < 3 {
            return Ok(0.0);
        }
        let mut twice = 0.0;
        for k in 0..pts.len() {
            let p = pts[k];
            let q = pts[(k + 1) % pts.len()];
            twice += p[0] * q[1] - q[0] * p[1];
        }
        Ok(0.5 * twice.abs())
    }
}

/// Options for [`invariant_set`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvariantSetOptions {
    pub max_iter: usize,
    /// Convergence threshold on the largest offset change, relative to `max(1, |b|)`.
    pub tol: f64,
    /// Remove redundant rows from the result.
    pub prune: bool,
}

impl Default for InvariantSetOptions {
    fn default() -> Self {
        Self { max_iter: 5000, tol: 1e-11, prune: true }
    }
}

/// Template rows `V_w, V_w Φ, …, V_w Φ^{depth−1}`, normalised to unit length,
/// with vanishing and parallel duplicate rows removed.
pub fn default_template(v_w: &DMatrix<f64>, phi: &DMatrix<f64>, depth: usize) -> DMatrix<f64> {
    let n = v_w.ncols();
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut block = v_w.clone();
    for _ in 0..depth.max(1) {
        for i in 0..block.nrows() {
            let r = block.row(i).transpose();
            let norm = r.norm();
            if norm < 1e-12 {
                continue;
            }
            let r = r / norm;
            if !rows.iter().any(|q| (q - &r).amax() < 1e-12) {
                rows.push(r);
            }
        }
        block = &block * phi;
    }
    let mut out = DMatrix::zeros(rows.len(), n);
    for (i, r) in rows.iter().enumerate() {
        out.set_row(i, &r.transpose());
    }
    out
}

/// Robust positively invariant set `S = {e : V_s e ≤ 1}` with `Φ S ⊕ W ⊆ S`.
///
/// Template offsets are obtained by the fixed-point iteration
/// `b ← support(S(b), template·Φ) + support(W, template)` started from
/// `support(W, template)`, where `S(b) = {e : template·e ≤ b}`. The returned
/// normals are `diag(1/b)·template`, and invariance is re-verified with LPs
/// before returning.
pub fn invariant_set(
    phi: &DMatrix<f64>,
    w: &HPolytope,
    template: &DMatrix<f64>,
    opts: &InvariantSetOptions,
) -> Result<HPolytope, PolytopeError> {
    let n = w.dim();
    if phi.nrows() != n || phi.ncols() != n || template.ncols() != n {
        return Err(PolytopeError::Dimension("closed-loop matrix, template and W must share a dimension".into()));
    }
    let rho = spectral_radius(phi);
    if rho >= 1.0 {
        return Err(PolytopeError::NotStable(rho));
    }
    let w_part = w.support(template)?.into_inner();
    let t_phi = template * phi;
    let mut b = w_part.clone();
    let mut converged = false;
    let mut change = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let s = HPolytope::unchecked(template.clone(), b.clone())?;
        let next = s.support(&t_phi)?.into_inner() + &w_part;
        change = (&next - &b).amax();
        let scale = next.amax().max(1.0);
        b = next;
        if change <= opts.tol * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(PolytopeError::NotConverged { iterations: opts.max_iter, change });
    }
    if let Some(i) = b.iter().position(|&x| x <= 0.0) {
        return Err(PolytopeError::NonPositiveOffset(i));
    }
    let mut v_s = template.clone();
    for i in 0..v_s.nrows() {
        let f = 1.0 / b[i];
        v_s.row_mut(i).scale_mut(f);
    }
    let mut s = HPolytope::unchecked(v_s, DVector::from_element(template.nrows(), 1.0))?;
    if opts.prune {
        s = s.remove_redundant()?;
    }
    let worst = invariance_margin(&s, phi, w)?;
    if worst > 1.0 + TOL_SET {
        return Err(PolytopeError::NotInvariant(worst));
    }
    Ok(s)
}

/// Largest entry of `support(S, V_s Φ) + support(W, V_s)`; `S` (with unit
/// offsets) satisfies `Φ S ⊕ W ⊆ S` iff this is at most one.
pub fn invariance_margin(s: &HPolytope, phi: &DMatrix<f64>, w: &HPolytope) -> Result<f64, PolytopeError> {
    let e_max = s.support(&(s.normals() * phi))?.into_inner();
    let w_max = w.support(s.normals())?.into_inner();
    let total = e_max + w_max;
    Ok(total.iter().zip(s.offsets().iter()).map(|(t, b)| t / b).fold(f64::NEG_INFINITY, f64::max))
}
