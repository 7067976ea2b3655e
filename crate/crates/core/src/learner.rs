//! Online learning of the disturbance set.
//!
//! A learned set is parameterised over a conservative polytope
//! `W = {w : V_w w ≤ 1}` as
//!
//! ```text
//! W(v, θ, ρ) = {w : V_w w ≤ θ + (1 − ρ) V_w v},   θ ≤ ρ·1,  v ∈ W
//! ```
//!
//! i.e. a heterogeneous shrink of `W` translated by `(1 − ρ) v`. Fitting the
//! smallest such set that covers a batch of samples is nonconvex in
//! `(v, θ, ρ)` but becomes an LP in `(y, θ, ρ)` with `y = (1 − ρ) v`. Online
//! updates keep the previous set inside the new one, so the sequence of learned
//! sets is nested.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::serde_vector;
use crate::polytope::{HPolytope, PolytopeError};
use crate::solver::{LinearProgram, LpSolver, SolverError, Status};

/// Tolerance for deciding that a sample lies outside the conservative set.
pub const TOL_SAMPLE: f64 = 1e-9;
/// Threshold on `|1 − ρ|` below which the translation is taken as zero.
pub const TOL_RHO_ONE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("no usable samples: {0}")]
    NoSamples(&'static str),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("conservative set must have unit offsets")]
    NotUnitOffsets,
    #[error("invalid learned-set parameters: {0}")]
    InvalidParameters(String),
    #[error("scenario bound parameters out of range: {0}")]
    BoundRange(String),
    #[error("learning LP ended with status {0:?}")]
    Lp(Status),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error("sample file: {0}")]
    Csv(#[from] csv::Error),
    #[error("sample file: {0}")]
    Io(#[from] std::io::Error),
}

/// Shape family of the learned set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterisation {
    /// Independent scaling per facet.
    #[default]
    Heterogeneous,
    /// One scaling for all facets (`θ = ρ·1`): a uniformly shrunk and
    /// translated copy of `W`.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerOptions {
    pub parameterisation: Parameterisation,
    /// Among optimal LP solutions, pick the one with the smallest facet
    /// offsets. With this, an update by a sample that is already covered
    /// leaves the set unchanged.
    pub minimal_offsets: bool,
}

impl Default for LearnerOptions {
    fn default() -> Self {
        Self { parameterisation: Parameterisation::Heterogeneous, minimal_offsets: true }
    }
}

/// Serialised form of a learned set, without its base polytope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnedSetParams {
    #[serde(with = "serde_vector")]
    pub v: DVector<f64>,
    #[serde(with = "serde_vector")]
    pub theta: DVector<f64>,
    pub rho: f64,
}

/// `W(v, θ, ρ)` over a fixed conservative set.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedSet {
    base: HPolytope,
    v: DVector<f64>,
    theta: DVector<f64>,
    rho: f64,
}

const TOL_PARAM: f64 = 1e-7;

impl LearnedSet {
    /// Validates `θ ∈ [0,1]`, `ρ ∈ [0,1]`, `θ ≤ ρ·1` and `v ∈ W`.
    pub fn new(base: HPolytope, v: DVector<f64>, theta: DVector<f64>, rho: f64) -> Result<Self, LearnerError> {
        check_unit_base(&base)?;
        if v.len() != base.dim() || theta.len() != base.num_facets() {
            return Err(LearnerError::Dimension(format!(
                "v has {} entries (need {}), θ has {} (need {})",
                v.len(),
                base.dim(),
                theta.len(),
                base.num_facets()
            )));
        }
        let bad = |m: String| Err(LearnerError::InvalidParameters(m));
        if !rho.is_finite() || !(0.0..=1.0).contains(&rho) {
            return bad(format!("ρ = {rho} outside [0, 1]"));
        }
        if let Some(i) = theta.iter().position(|t| !t.is_finite() || *t < 0.0 || *t > 1.0) {
            return bad(format!("θ[{i}] = {} outside [0, 1]", theta[i]));
        }
        if let Some(i) = theta.iter().position(|t| *t > rho + TOL_PARAM) {
            return bad(format!("θ[{i}] = {} exceeds ρ = {rho}", theta[i]));
        }
        if !base.contains_point(&v, TOL_PARAM) {
            return bad("v lies outside the conservative set".into());
        }
        let ls = Self { base, v, theta, rho };
        debug_assert!(ls.base.contains(&ls.realise()).unwrap_or(false));
        Ok(ls)
    }

    pub fn from_params(base: HPolytope, p: LearnedSetParams) -> Result<Self, LearnerError> {
        Self::new(base, p.v, p.theta, p.rho)
    }

    /// `θ = 1, ρ = 1, v = 0`: the conservative set itself.
    pub fn conservative(base: HPolytope) -> Result<Self, LearnerError> {
        let (n, m) = (base.dim(), base.num_facets());
        Self::new(base, DVector::zeros(n), DVector::from_element(m, 1.0), 1.0)
    }

    pub fn params(&self) -> LearnedSetParams {
        LearnedSetParams { v: self.v.clone(), theta: self.theta.clone(), rho: self.rho }
    }

    pub fn base(&self) -> &HPolytope {
        &self.base
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Facet offsets `θ + (1 − ρ) V_w v`.
    pub fn offsets(&self) -> DVector<f64> {
        &self.theta + self.base.normals() * &self.v * (1.0 - self.rho)
    }

    /// LP objective `1·θ + ρ`.
    pub fn objective(&self) -> f64 {
        self.theta.sum() + self.rho
    }

    /// `{w : V_w w ≤ θ + (1 − ρ) V_w v}`.
    pub fn realise(&self) -> HPolytope {
        HPolytope::unchecked(self.base.normals().clone(), self.offsets()).expect("base rows are valid")
    }

    /// `V_w w ≤ offsets + tol`.
    pub fn covers(&self, w: &DVector<f64>, tol: f64) -> bool {
        self.realise().contains_point(w, tol)
    }

    /// True when the realised set has no interior (e.g. after a single sample).
    pub fn is_degenerate(&self) -> Result<bool, LearnerError> {
        Ok(self.realise().chebyshev_radius()? <= 1e-9)
    }
}

fn check_unit_base(base: &HPolytope) -> Result<(), LearnerError> {
    if base.offsets().iter().any(|b| (b - 1.0).abs() > 1e-12) {
        return Err(LearnerError::NotUnitOffsets);
    }
    Ok(())
}

/// Ordered record of measured disturbances.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InformationSet {
    samples: Vec<DVector<f64>>,
}

impl InformationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: Vec<DVector<f64>>) -> Self {
        Self { samples }
    }

    pub fn push(&mut self, w: DVector<f64>) {
        self.samples.push(w);
    }

    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices of samples outside `W`.
    pub fn outside(&self, base: &HPolytope) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| !base.contains_point(&self.samples[i], TOL_SAMPLE)).collect()
    }

    /// One sample per row, no header.
    pub fn write_csv(&self, path: &Path) -> Result<(), LearnerError> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        for s in &self.samples {
            w.write_record(s.iter().map(|x| format!("{x:?}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, LearnerError> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
        let mut samples = Vec::new();
        for rec in r.deserialize::<Vec<f64>>() {
            samples.push(DVector::from_vec(rec?));
        }
        if let Some(first) = samples.first() {
            let n = first.len();
            if let Some(i) = samples.iter().position(|s| s.len() != n) {
                return Err(LearnerError::Dimension(format!("row {i} of {} has {} entries, expected {n}", path.display(), samples[i].len())));
            }
        }
        Ok(Self { samples })
    }
}

/// Result of a batch fit.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub set: LearnedSet,
    /// Optimal value of `1·θ + ρ`.
    pub objective: f64,
    /// Samples left out because they lie outside `W`.
    pub rejected: Vec<usize>,
}

/// Smallest learned set covering all samples in `I0`.
///
/// Solves, over `(y, θ, ρ)`,
///
/// ```text
/// min 1·θ + ρ   s.t.  V_w w ≤ θ + V_w y  for every sample w,
///                     V_w y ≤ (1 − ρ)·1,  0 ≤ θ ≤ ρ·1,  ρ ≤ 1
/// ```
///
/// and recovers `v = y / (1 − ρ)` (or `v = 0` when `ρ = 1`). The sample
/// constraints are aggregated per facet as `max_s V_w,i w_s`, which leaves the
/// LP size independent of `|I0|`.
pub fn fit_initial(base: &HPolytope, i0: &InformationSet, opts: &LearnerOptions) -> Result<FitOutcome, LearnerError> {
    check_unit_base(base)?;
    if i0.is_empty() {
        return Err(LearnerError::NoSamples("the offline sample set is empty"));
    }
    if let Some(s) = i0.samples().iter().find(|s| s.len() != base.dim()) {
        return Err(LearnerError::Dimension(format!("sample of length {} in dimension {}", s.len(), base.dim())));
    }
    let rejected = i0.outside(base);
    if !rejected.is_empty() {
        warn!(
            "{} of {} offline samples lie outside the conservative set and are excluded (model mismatch)",
            rejected.len(),
            i0.len()
        );
    }
    let vw = base.normals();
    let mut lower = DVector::from_element(base.num_facets(), f64::NEG_INFINITY);
    let mut used = 0;
    for (k, s) in i0.samples().iter().enumerate() {
        if rejected.binary_search(&k).is_ok() {
            continue;
        }
        used += 1;
        lower = lower.sup(&(vw * s));
    }
    if used == 0 {
        return Err(LearnerError::NoSamples("every offline sample lies outside the conservative set"));
    }
    let (set, objective) = solve_cover(base, &lower, opts)?;
    Ok(FitOutcome { set, objective, rejected })
}

/// Result of an online update.
#[derive(Clone, Debug)]
pub struct UpdateOutcome {
    pub set: LearnedSet,
    /// `false` when the sample lay outside `W`; the set is then unchanged.
    pub accepted: bool,
}

/// Nested update with a new sample.
///
/// Same LP as [`fit_initial`], with the sample constraints replaced by two
/// families: the new offsets dominate the previous ones, and the new sample is
/// covered. The LP size does not grow with `k`.
pub fn update(prev: &LearnedSet, w_new: &DVector<f64>, opts: &LearnerOptions) -> Result<UpdateOutcome, LearnerError> {
    let base = prev.base();
    if w_new.len() != base.dim() {
        return Err(LearnerError::Dimension(format!("sample of length {} in dimension {}", w_new.len(), base.dim())));
    }
    if !base.contains_point(w_new, TOL_SAMPLE) {
        warn!("measured disturbance lies outside the conservative set (model mismatch); learned set kept");
        return Ok(UpdateOutcome { set: prev.clone(), accepted: false });
    }
    let lower = prev.offsets().sup(&(base.normals() * w_new));
    let (set, _) = solve_cover(base, &lower, opts)?;
    Ok(UpdateOutcome { set, accepted: true })
}

/// `min 1·θ + ρ` over learned sets whose offsets dominate `lower`.
fn solve_cover(base: &HPolytope, lower: &DVector<f64>, opts: &LearnerOptions) -> Result<(LearnedSet, f64), LearnerError> {
    let vw = base.normals();
    let (n, m) = (base.dim(), base.num_facets());
    let nv = n + m + 1;
    let (iy, it, ir) = (0, n, n + m);

    // rows: -V_w y - θ ≤ -lower ; V_w y + ρ1 ≤ 1 ; θ - ρ1 ≤ 0
    let mut a = DMatrix::zeros(3 * m, nv);
    let mut b = DVector::zeros(3 * m);
    for i in 0..m {
        for j in 0..n {
            a[(i, iy + j)] = -vw[(i, j)];
            a[(m + i, iy + j)] = vw[(i, j)];
        }
        a[(i, it + i)] = -1.0;
        b[i] = -lower[i];
        a[(m + i, ir)] = 1.0;
        b[m + i] = 1.0;
        a[(2 * m + i, it + i)] = 1.0;
        a[(2 * m + i, ir)] = -1.0;
    }
    let mut lb = DVector::from_element(nv, f64::NEG_INFINITY);
    let mut ub = DVector::from_element(nv, f64::INFINITY);
    for k in it..nv {
        lb[k] = 0.0;
        ub[k] = 1.0;
    }
    let (a_eq, b_eq) = match opts.parameterisation {
        Parameterisation::Heterogeneous => (DMatrix::zeros(0, nv), DVector::zeros(0)),
        Parameterisation::Uniform => {
            let mut e = DMatrix::zeros(m, nv);
            for i in 0..m {
                e[(i, it + i)] = 1.0;
                e[(i, ir)] = -1.0;
            }
            (e, DVector::zeros(m))
        }
    };
    let mut c = DVector::zeros(nv);
    for k in it..nv {
        c[k] = 1.0;
    }
    let lp = LinearProgram::new(c.clone())
        .with_ineq(a.clone(), b.clone())
        .with_eq(a_eq.clone(), b_eq.clone())
        .with_bounds(lb.clone(), ub.clone());
    let solver = LpSolver::default();
    let r = solver.solve(&lp)?;
    if r.status != Status::Optimal {
        return Err(LearnerError::Lp(r.status));
    }
    let optimum = r.objective;
    let mut x = r.x.expect("optimal");

    if opts.minimal_offsets {
        // Second stage: keep the objective optimal, minimise Σ(θ + V_w y).
        let mut a2 = DMatrix::zeros(3 * m + 1, nv);
        a2.view_mut((0, 0), (3 * m, nv)).copy_from(&a);
        a2.row_mut(3 * m).copy_from(&c.transpose());
        let mut b2 = DVector::zeros(3 * m + 1);
        b2.rows_mut(0, 3 * m).copy_from(&b);
        b2[3 * m] = optimum + 1e-9 * optimum.abs().max(1.0);
        let mut c2 = DVector::zeros(nv);
        for j in 0..n {
            c2[iy + j] = vw.column(j).sum();
        }
        for i in 0..m {
            c2[it + i] = 1.0;
        }
        let lp2 = LinearProgram::new(c2).with_ineq(a2, b2).with_eq(a_eq, b_eq).with_bounds(lb, ub);
        let r2 = solver.solve(&lp2)?;
        if r2.status == Status::Optimal {
            x = r2.x.expect("optimal");
        } else {
            warn!("offset tie-break LP ended with {:?}; keeping first-stage solution", r2.status);
        }
    }

    let rho = x[ir].clamp(0.0, 1.0);
    let theta = x.rows(it, m).map(|t| t.clamp(0.0, rho));
    let y = x.rows(iy, n).into_owned();
    let v = if (1.0 - rho).abs() > TOL_RHO_ONE { y / (1.0 - rho) } else { DVector::zeros(n) };
    let set = LearnedSet::new(base.clone(), v, theta, rho)?;
    Ok((set, optimum))
}

/// Single-writer learner state carried through a closed loop.
#[derive(Clone, Debug)]
pub struct Learner {
    current: LearnedSet,
    info: InformationSet,
    opts: LearnerOptions,
    mismatches: Vec<usize>,
}

impl Learner {
    /// Batch fit on `I0`; rejected offline samples are recorded as mismatches.
    pub fn fit(base: &HPolytope, i0: InformationSet, opts: LearnerOptions) -> Result<Self, LearnerError> {
        let fit = fit_initial(base, &i0, &opts)?;
        Ok(Self { current: fit.set, info: i0, opts, mismatches: fit.rejected })
    }

    /// A learner whose set never changes: the conservative set, for baselines.
    pub fn frozen(set: LearnedSet) -> Self {
        Self { current: set, info: InformationSet::new(), opts: LearnerOptions::default(), mismatches: Vec::new() }
    }

    pub fn current(&self) -> &LearnedSet {
        &self.current
    }

    pub fn information(&self) -> &InformationSet {
        &self.info
    }

    pub fn options(&self) -> &LearnerOptions {
        &self.opts
    }

    /// Indices (into the information set) of samples outside `W`.
    pub fn mismatches(&self) -> &[usize] {
        &self.mismatches
    }

    /// Record `w` and update the set. Returns `false` on a model mismatch.
    pub fn observe(&mut self, w: DVector<f64>) -> Result<bool, LearnerError> {
        let out = update(&self.current, &w, &self.opts)?;
        if !out.accepted {
            self.mismatches.push(self.info.len());
        }
        self.current = out.set;
        self.info.push(w);
        Ok(out.accepted)
    }
}

/// Scenario sample-complexity bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBound {
    pub epsilon: f64,
    pub delta: f64,
    pub required_samples: usize,
}

fn bound_core(delta: f64, n_x: usize, n_v: usize) -> f64 {
    let e = std::f64::consts::E;
    e / (e - 1.0) * (n_x as f64 + n_v as f64 + (1.0 / delta).ln())
}

fn check_unit_interval(name: &str, x: f64) -> Result<(), LearnerError> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(LearnerError::BoundRange(format!("{name} = {x} must lie in (0, 1)")))
    }
}

/// `|I0| ≥ (1/ε)·(e/(e−1))·(n_x + n_v + ln(1/δ))`, rounded up.
pub fn required_samples(epsilon: f64, delta: f64, n_x: usize, n_v: usize) -> Result<ScenarioBound, LearnerError> {
    check_unit_interval("epsilon", epsilon)?;
    check_unit_interval("delta", delta)?;
    let n = (bound_core(delta, n_x, n_v) / epsilon).ceil() as usize;
    Ok(ScenarioBound { epsilon, delta, required_samples: n })
}

/// Violation level certified with confidence `1 − δ` by `n_samples` offline samples.
pub fn epsilon_for(n_samples: usize, delta: f64, n_x: usize, n_v: usize) -> Result<f64, LearnerError> {
    check_unit_interval("delta", delta)?;
    if n_samples == 0 {
        return Err(LearnerError::BoundRange("sample count must be positive".into()));
    }
    Ok(bound_core(delta, n_x, n_v) / n_samples as f64)
}

/// Fraction of `samples` outside the realised set.
pub fn violation_rate(ls: &LearnedSet, samples: &[DVector<f64>]) -> Result<f64, LearnerError> {
    if samples.is_empty() {
        return Err(LearnerError::NoSamples("violation rate needs at least one sample"));
    }
    let vw = ls.base().normals();
    let off = ls.offsets();
    let mut out = 0usize;
    for w in samples {
        if w.len() != ls.base().dim() {
            return Err(LearnerError::Dimension(format!("sample of length {} in dimension {}", w.len(), ls.base().dim())));
        }
        if (vw * w - &off).iter().any(|&r| r > TOL_SAMPLE) {
            out += 1;
        }
    }
    Ok(out as f64 / samples.len() as f64)
}
