//! Homothetic tube MPC.
//!
//! The predicted state is split as `x = s + e` with nominal `s` and error `e`.
//! Inputs are `u = K x + c` with free offsets `c_0, …, c_{N−1}` (zero beyond the
//! horizon), so the nominal evolves as `s⁺ = Φ s + B c`. The error is bounded by
//! cross-sections `α_i S` of a fixed invariant set `S = {e : V_s e ≤ 1}`, whose
//! scalings obey `α_i e_max + ŵ ≤ α_{i+1}` for the current disturbance bound
//! `ŵ = support(Ŵ, V_s)`. Constraints `F x + G u ≤ 1` become
//! `F̄ Ψ^i z ≤ 1 − α_i h` on `z = (s_0, c)`, enforced for `i = 0, …, ν`; the
//! constraint horizon `ν` is chosen so that no later constraint can bind.
//!
//! In rigid mode every cross-section is one fixed set, scaled and shifted to
//! cover the current disturbance set, and the scalings are not optimised.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::{LearnedSet, LearnerError};
use crate::linalg::{block_diag, dlqr, serde_matrix, serde_vector, spectral_radius};
use crate::polytope::{HPolytope, PolytopeError, SupportVector, TOL_SET};
use crate::solver::{LinearProgram, LpSolver, QpSolver, QuadraticProgram, SolverError, Status};

/// Slack on the horizon test `max F̄Ψ^{n+1} z ≤ 1 − h`.
pub const TOL_HORIZON: f64 = 1e-9;
/// Default cap on the constraint horizon search.
pub const DEFAULT_N_MAX: usize = 200;
/// Extra matrix powers cached beyond `ν` for tail probes.
pub const TAIL_PROBES: usize = 50;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("closed loop A + BK is not strictly stable (spectral radius {0})")]
    NotStable(f64),
    #[error("LQR design failed: the Riccati iteration did not settle")]
    Lqr,
    #[error("cost weights invalid: {0}")]
    Weights(String),
    #[error("prediction horizon must be at least 1")]
    ZeroHorizon,
    #[error(
        "constraint horizon exceeds n_max = {0}; constraints or the disturbance bound are probably mis-scaled \
         (tightened constraints leave almost no room)"
    )]
    HorizonCap(usize),
    #[error("constraint set is empty at horizon {0}: no admissible prediction exists even without feedback")]
    OmegaEmpty(usize),
    #[error("tail scaling α = 1 is infeasible: e_max + ŵ_max reaches {0} > 1")]
    TailInfeasible(f64),
    #[error("constraint horizon not set; call TubeData::set_horizon first")]
    HorizonUnset,
    #[error("horizon LP ended with status {0:?}")]
    Lp(Status),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
}

/// `x⁺ = A x + B u + w`, constraints `F x + G u ≤ 1`, prestabilising gain `K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPlant", into = "RawPlant")]
pub struct PlantModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    f: DMatrix<f64>,
    g: DMatrix<f64>,
    k: DMatrix<f64>,
    phi: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlant {
    #[serde(rename = "A", with = "serde_matrix")]
    a: DMatrix<f64>,
    #[serde(rename = "B", with = "serde_matrix")]
    b: DMatrix<f64>,
    #[serde(rename = "F", with = "serde_matrix")]
    f: DMatrix<f64>,
    #[serde(rename = "G", with = "serde_matrix")]
    g: DMatrix<f64>,
    #[serde(rename = "K", with = "serde_matrix")]
    k: DMatrix<f64>,
}

impl TryFrom<RawPlant> for PlantModel {
    type Error = MpcError;
    fn try_from(r: RawPlant) -> Result<Self, MpcError> {
        PlantModel::new(r.a, r.b, r.f, r.g, r.k)
    }
}

impl From<PlantModel> for RawPlant {
    fn from(p: PlantModel) -> Self {
        RawPlant { a: p.a, b: p.b, f: p.f, g: p.g, k: p.k }
    }
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, f: DMatrix<f64>, g: DMatrix<f64>, k: DMatrix<f64>) -> Result<Self, MpcError> {
        let nx = a.nrows();
        let nu = b.ncols();
        let dims_ok = a.ncols() == nx
            && b.nrows() == nx
            && f.ncols() == nx
            && g.ncols() == nu
            && g.nrows() == f.nrows()
            && k.nrows() == nu
            && k.ncols() == nx;
        if !dims_ok {
            return Err(MpcError::Dimension(format!(
                "A {}x{}, B {}x{}, F {}x{}, G {}x{}, K {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                f.nrows(),
                f.ncols(),
                g.nrows(),
                g.ncols(),
                k.nrows(),
                k.ncols()
            )));
        }
        let phi = &a + &b * &k;
        let rho = spectral_radius(&phi);
        if rho >= 1.0 {
            return Err(MpcError::NotStable(rho));
        }
        Ok(Self { a, b, f, g, k, phi })
    }

    /// Plant with the infinite-horizon LQR gain for `(Q, R)`; also returns the
    /// Riccati solution `P`.
    pub fn with_lqr(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        f: DMatrix<f64>,
        g: DMatrix<f64>,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
    ) -> Result<(Self, DMatrix<f64>), MpcError> {
        if q.nrows() != a.nrows() || q.ncols() != a.nrows() || r.nrows() != b.ncols() || r.ncols() != b.ncols() {
            return Err(MpcError::Dimension("LQR weights".into()));
        }
        let (k, p) = dlqr(&a, &b, q, r).ok_or(MpcError::Lqr)?;
        Ok((Self::new(a, b, f, g, k)?, p))
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }
    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }
    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_c(&self) -> usize {
        self.f.nrows()
    }

    /// `F + G K`.
    pub fn f_closed(&self) -> DMatrix<f64> {
        &self.f + &self.g * &self.k
    }

    /// `A x + B u + w`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + w
    }

    /// Largest entry of `F x + G u − 1`.
    pub fn constraint_excess(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (&self.f * x + &self.g * u).iter().map(|r| r - 1.0).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `J = ‖s_0‖²_{Px} + ‖c‖²_{Pc} + q_α Σ (α_i − 1)²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    #[serde(with = "serde_matrix")]
    pub px: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub pc: DMatrix<f64>,
    pub q_alpha: f64,
}

impl CostWeights {
    pub fn new(px: DMatrix<f64>, pc: DMatrix<f64>, q_alpha: f64) -> Result<Self, MpcError> {
        let w = Self { px, pc, q_alpha };
        for (name, m) in [("Px", &w.px), ("Pc", &w.pc)] {
            if !m.is_square() {
                return Err(MpcError::Weights(format!("{name} is not square")));
            }
            if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                return Err(MpcError::Weights(format!("{name} is not symmetric")));
            }
            let min_eig = m.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-9 {
                return Err(MpcError::Weights(format!("{name} is not PSD (eigenvalue {min_eig:e})")));
            }
        }
        if !(w.q_alpha > 0.0 && w.q_alpha.is_finite()) {
            return Err(MpcError::Weights(format!("q_alpha = {} must be positive", w.q_alpha)));
        }
        Ok(w)
    }

    /// `Px = P`, `Pc = blockdiag(R + BᵀPB)`, `q_α = 1`: the nominal cost-to-go
    /// of the LQR-prestabilised parameterisation.
    pub fn lqr_default(plant: &PlantModel, p: &DMatrix<f64>, r: &DMatrix<f64>, horizon: usize) -> Result<Self, MpcError> {
        let blk = r + plant.b().transpose() * p * plant.b();
        let blk = (&blk + blk.transpose()) * 0.5;
        let blocks: Vec<&DMatrix<f64>> = std::iter::repeat(&blk).take(horizon).collect();
        Self::new(p.clone(), block_diag(&blocks), 1.0)
    }
}

/// Which cross-section family the tube uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TubeMode {
    #[default]
    Homothetic,
    Rigid,
}

/// Fixed rigid cross-section `scale·S ⊕ {center}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTube {
    pub scale: f64,
    #[serde(with = "serde_vector")]
    pub center: DVector<f64>,
}

impl RigidTube {
    /// `S` itself.
    pub fn unit(n_x: usize) -> Self {
        Self { scale: 1.0, center: DVector::zeros(n_x) }
    }

    /// Invariant cross-section for a learned set.
    ///
    /// `Ŵ ⊆ θ_max W ⊕ {d}` with `d = (1 − ρ) v`; then `θ_max S ⊕ {(I − Φ)⁻¹ d}`
    /// is invariant under `e⁺ = Φ e + w`. For the uniform parameterisation the
    /// first inclusion is an equality, and for `Ŵ = W` the tube is `S`.
    pub fn for_learned(plant: &PlantModel, learned: &LearnedSet) -> Result<Self, MpcError> {
        let n = plant.n_x();
        let scale = learned.theta().max().clamp(0.0, 1.0);
        let d = learned.v() * (1.0 - learned.rho());
        let center = if d.amax() == 0.0 {
            DVector::zeros(n)
        } else {
            let lhs = DMatrix::identity(n, n) - plant.phi();
            lhs.lu().solve(&d).ok_or_else(|| MpcError::NotStable(1.0))?
        };
        Ok(Self { scale, center })
    }

    /// Tightening `support(scale·S ⊕ center, F + GK)`.
    pub fn tightening(&self, td: &TubeData, plant: &PlantModel) -> DVector<f64> {
        td.h() * self.scale + plant.f_closed() * &self.center
    }
}

/// Precomputed tube and prediction data.
#[derive(Clone, Debug)]
pub struct TubeData {
    s: HPolytope,
    horizon: usize,
    n_x: usize,
    n_u: usize,
    e_max: DVector<f64>,
    h: DVector<f64>,
    fbar: DMatrix<f64>,
    psi: DMatrix<f64>,
    nu: Option<usize>,
    /// `F̄ Ψ^i` for `i = 0, 1, …`.
    powers: Vec<DMatrix<f64>>,
}

/// `E`: selects `c_0` from the stacked `c`.
pub fn first_block_selector(n_u: usize, horizon: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(n_u, horizon * n_u);
    e.view_mut((0, 0), (n_u, n_u)).fill_with_identity();
    e
}

/// `M`: shifts the stacked `c` up by one block and appends zero.
pub fn block_upshift(n_u: usize, horizon: usize) -> DMatrix<f64> {
    let m = horizon * n_u;
    let mut s = DMatrix::zeros(m, m);
    for i in 0..m.saturating_sub(n_u) {
        s[(i, i + n_u)] = 1.0;
    }
    s
}

/// Fill `e_max`, `h`, `F̄`, `Ψ` for invariant set `S` and horizon `N`.
pub fn assemble(plant: &PlantModel, s: &HPolytope, horizon: usize) -> Result<TubeData, MpcError> {
    if horizon == 0 {
        return Err(MpcError::ZeroHorizon);
    }
    let (nx, nu) = (plant.n_x(), plant.n_u());
    if s.dim() != nx {
        return Err(MpcError::Dimension(format!("S has dimension {}, plant has {nx} states", s.dim())));
    }
    if s.offsets().iter().any(|b| (b - 1.0).abs() > 1e-12) {
        return Err(MpcError::Dimension("S must be given with unit offsets".into()));
    }
    let e_max = s.support(&(s.normals() * plant.phi()))?.into_inner();
    let fk = plant.f_closed();
    let h = s.support(&fk)?.into_inner();
    let e = first_block_selector(nu, horizon);
    let nz = nx + horizon * nu;
    let mut fbar = DMatrix::zeros(plant.n_c(), nz);
    fbar.view_mut((0, 0), (plant.n_c(), nx)).copy_from(&fk);
    fbar.view_mut((0, nx), (plant.n_c(), horizon * nu)).copy_from(&(plant.g() * &e));
    let mut psi = DMatrix::zeros(nz, nz);
    psi.view_mut((0, 0), (nx, nx)).copy_from(plant.phi());
    psi.view_mut((0, nx), (nx, horizon * nu)).copy_from(&(plant.b() * &e));
    psi.view_mut((nx, nx), (horizon * nu, horizon * nu)).copy_from(&block_upshift(nu, horizon));
    let mut td = TubeData { s: s.clone(), horizon, n_x: nx, n_u: nu, e_max, h, fbar: fbar.clone(), psi, nu: None, powers: vec![fbar] };
    td.extend_powers(horizon + TAIL_PROBES);
    Ok(td)
}

impl TubeData {
    pub fn s(&self) -> &HPolytope {
        &self.s
    }
    pub fn v_s(&self) -> &DMatrix<f64> {
        self.s.normals()
    }
    pub fn n_s(&self) -> usize {
        self.s.num_facets()
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn n_x(&self) -> usize {
        self.n_x
    }
    pub fn n_u(&self) -> usize {
        self.n_u
    }
    pub fn n_c(&self) -> usize {
        self.fbar.nrows()
    }
    /// Length of `z = (s_0, c)`.
    pub fn n_z(&self) -> usize {
        self.n_x + self.horizon * self.n_u
    }
    pub fn e_max(&self) -> &DVector<f64> {
        &self.e_max
    }
    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }
    pub fn fbar(&self) -> &DMatrix<f64> {
        &self.fbar
    }
    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }
    pub fn nu(&self) -> Option<usize> {
        self.nu
    }

    /// Record `ν` and cache powers up to `ν + 1 + TAIL_PROBES`.
    pub fn set_nu(&mut self, nu: usize) {
        self.nu = Some(nu);
        self.extend_powers(nu + 1 + TAIL_PROBES);
    }

    fn extend_powers(&mut self, upto: usize) {
        while self.powers.len() <= upto {
            let next = self.powers.last().expect("nonempty") * &self.psi;
            self.powers.push(next);
        }
    }

    /// `F̄ Ψ^i`.
    pub fn fbar_psi(&self, i: usize) -> DMatrix<f64> {
        if let Some(p) = self.powers.get(i) {
            return p.clone();
        }
        let mut p = self.powers.last().expect("nonempty").clone();
        for _ in self.powers.len()..=i {
            p = &p * &self.psi;
        }
        p
    }

    /// `support(W, V_s)` for a disturbance set.
    pub fn w_max(&self, w: &HPolytope) -> Result<SupportVector, MpcError> {
        Ok(w.support(self.v_s())?)
    }
}

/// Which admissible set the horizon is computed for.
#[derive(Clone, Debug)]
pub enum HorizonSpec {
    /// Homothetic scalings driven by the disturbance bound `ŵ`.
    Homothetic(SupportVector),
    /// Rigid cross-section with the given constraint tightening.
    Rigid(DVector<f64>),
}

/// Constraint set over `(z, α)` (or `z` alone for the rigid case) truncated at `n`.
fn omega_rows(td: &TubeData, spec: &HorizonSpec, n: usize) -> (DMatrix<f64>, DVector<f64>, usize) {
    let (nz, nn, nc) = (td.n_z(), td.horizon, td.n_c());
    match spec {
        HorizonSpec::Homothetic(w) => {
            let nv = nz + nn;
            let facets = recursion_facets(&td.e_max, w.values());
            let rows = (n + 1) * nc + nn * facets.len();
            let mut a = DMatrix::zeros(rows, nv);
            let mut b = DVector::zeros(rows);
            for i in 0..=n {
                let p = td.fbar_psi(i);
                a.view_mut((i * nc, 0), (nc, nz)).copy_from(&p);
                for r in 0..nc {
                    if i < nn {
                        a[(i * nc + r, nz + i)] = td.h[r];
                        b[i * nc + r] = 1.0;
                    } else {
                        b[i * nc + r] = 1.0 - td.h[r];
                    }
                }
            }
            let off = (n + 1) * nc;
            alpha_recursion(&mut a, &mut b, off, nz, td, w.values(), &facets);
            (a, b, nv)
        }
        HorizonSpec::Rigid(tight) => {
            let rows = (n + 1) * nc;
            let mut a = DMatrix::zeros(rows, nz);
            let mut b = DVector::zeros(rows);
            for i in 0..=n {
                a.view_mut((i * nc, 0), (nc, nz)).copy_from(&td.fbar_psi(i));
                for r in 0..nc {
                    b[i * nc + r] = 1.0 - tight[r];
                }
            }
            (a, b, nz)
        }
    }
}

/// Facets whose line `α ↦ α e_max,j + ŵ_j` attains the maximum over all
/// facets for some `α ≥ 0`. The scaling recursion only needs these rows.
pub fn recursion_facets(e_max: &DVector<f64>, w: &DVector<f64>) -> Vec<usize> {
    let n = e_max.len();
    let mut keep = Vec::new();
    'outer: for j in 0..n {
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        for k in 0..n {
            if k == j {
                continue;
            }
            let (de, dw) = (e_max[j] - e_max[k], w[k] - w[j]);
            // Need de·α ≥ dw; exact duplicates keep the lower index.
            if de == 0.0 && dw == 0.0 {
                if k < j {
                    continue 'outer;
                }
            } else if de > 0.0 {
                lo = lo.max(dw / de);
            } else if de < 0.0 {
                hi = hi.min(dw / de);
            } else if dw > 0.0 {
                continue 'outer;
            }
        }
        if lo <= hi {
            keep.push(j);
        }
    }
    keep
}

/// Rows `α_i e_max,j − α_{i+1} ≤ −ŵ_j` (with `α_N = 1`) for `j` in `facets`,
/// written from row `off`, where `α_i` is variable `col + i`.
fn alpha_recursion(a: &mut DMatrix<f64>, b: &mut DVector<f64>, off: usize, col: usize, td: &TubeData, w: &DVector<f64>, facets: &[usize]) {
    let nn = td.horizon;
    let nk = facets.len();
    for i in 0..nn {
        for (q, &j) in facets.iter().enumerate() {
            let row = off + i * nk + q;
            a[(row, col + i)] = td.e_max[j];
            if i + 1 < nn {
                a[(row, col + i + 1)] = -1.0;
                b[row] = -w[j];
            } else {
                b[row] = 1.0 - w[j];
            }
        }
    }
}

fn tightening_of(td: &TubeData, spec: &HorizonSpec) -> DVector<f64> {
    match spec {
        HorizonSpec::Homothetic(_) => td.h.clone(),
        HorizonSpec::Rigid(t) => t.clone(),
    }
}

/// Largest value of `max_{Ω(n)} F̄Ψ^i z − (1 − h)` over rows, for each `i` in
/// `probe`. `Ok(None)` entries mean the maximum is unbounded.
fn omega_excess(td: &TubeData, spec: &HorizonSpec, n: usize, probe: &[usize]) -> Result<Vec<Option<f64>>, MpcError> {
    let (a, b, nv) = omega_rows(td, spec, n);
    let nz = td.n_z();
    let mut lb = DVector::from_element(nv, f64::NEG_INFINITY);
    for k in nz..nv {
        lb[k] = 0.0;
    }
    let ub = DVector::from_element(nv, f64::INFINITY);
    let tight = tightening_of(td, spec);
    let solver = LpSolver::default();
    let mut out = Vec::with_capacity(probe.len());
    for &i in probe {
        let p = td.fbar_psi(i);
        let mut worst = f64::NEG_INFINITY;
        let mut unbounded = false;
        for r in 0..td.n_c() {
            let mut c = DVector::zeros(nv);
            for j in 0..nz {
                c[j] = -p[(r, j)];
            }
            let lp = LinearProgram::new(c).with_ineq(a.clone(), b.clone()).with_bounds(lb.clone(), ub.clone());
            let res = solver.solve(&lp)?;
            match res.status {
                Status::Optimal => worst = worst.max(-res.objective - (1.0 - tight[r])),
                Status::Unbounded => unbounded = true,
                Status::Infeasible => return Err(MpcError::OmegaEmpty(n)),
                s => return Err(MpcError::Lp(s)),
            }
        }
        out.push(if unbounded { None } else { Some(worst) });
    }
    Ok(out)
}

/// `e_max + ŵ ≤ 1` check; returns the largest entry.
fn check_tail(td: &TubeData, spec: &HorizonSpec) -> Result<(), MpcError> {
    if let HorizonSpec::Homothetic(w) = spec {
        if w.len() != td.n_s() {
            return Err(MpcError::Dimension(format!("ŵ has {} entries, S has {} facets", w.len(), td.n_s())));
        }
        let worst = (&td.e_max + w.values()).max();
        if worst > 1.0 + TOL_SET {
            return Err(MpcError::TailInfeasible(worst));
        }
    }
    Ok(())
}

/// Smallest `n ≥ N − 1` for which no constraint beyond `n` can bind on the
/// truncated admissible set.
pub fn compute_horizon(td: &TubeData, spec: &HorizonSpec, n_max: usize) -> Result<usize, MpcError> {
    check_tail(td, spec)?;
    let mut n = td.horizon - 1;
    loop {
        if n > n_max {
            return Err(MpcError::HorizonCap(n_max));
        }
        if let Some(ex) = omega_excess(td, spec, n, &[n + 1])?[0] {
            if ex <= TOL_HORIZON {
                return Ok(n);
            }
        }
        n += 1;
    }
}

/// Per-probe excess `max_{Ω(ν)} F̄Ψ^i z − (1 − h)` for `i ∈ [ν+1, ν+count]`.
/// Unbounded maxima are reported as `+∞`.
pub fn tail_excess(td: &TubeData, spec: &HorizonSpec, nu: usize, count: usize) -> Result<Vec<f64>, MpcError> {
    check_tail(td, spec)?;
    let probe: Vec<usize> = (nu + 1..=nu + count).collect();
    Ok(omega_excess(td, spec, nu, &probe)?.into_iter().map(|e| e.unwrap_or(f64::INFINITY)).collect())
}

/// Whether `n` passes the horizon test (used for minimality checks).
pub fn horizon_test(td: &TubeData, spec: &HorizonSpec, n: usize) -> Result<bool, MpcError> {
    check_tail(td, spec)?;
    Ok(matches!(omega_excess(td, spec, n, &[n + 1])?[0], Some(ex) if ex <= TOL_HORIZON))
}

/// QP over `(s_0, c, α)` for the homothetic problem at state `x`.
///
/// Row order: initial-state membership (`n_s`), scaling recursion (`N` blocks
/// over [`recursion_facets`]), `α ≥ 0` (`N`), constraints for `i = 0..=ν`
/// (`(ν+1)·n_c`).
pub fn build_qp(td: &TubeData, weights: &CostWeights, x: &DVector<f64>, w_hat: &SupportVector, nu: usize) -> QuadraticProgram {
    let (nx, nn, nz, nc, ns) = (td.n_x, td.horizon, td.n_z(), td.n_c(), td.n_s());
    let nv = nz + nn;
    let facets = recursion_facets(&td.e_max, w_hat.values());
    let nk = facets.len();
    let rows = ns + nn * nk + nn + (nu + 1) * nc;
    let mut a = DMatrix::zeros(rows, nv);
    let mut b = DVector::zeros(rows);
    let vs = td.v_s();
    // (i) −V_s s_0 − α_0 1 ≤ −V_s x
    a.view_mut((0, 0), (ns, nx)).copy_from(&(-vs));
    let vx = vs * x;
    for j in 0..ns {
        a[(j, nz)] = -1.0;
        b[j] = -vx[j];
    }
    // (ii)
    alpha_recursion(&mut a, &mut b, ns, nz, td, w_hat.values(), &facets);
    // (iii)
    let off = ns + nn * nk;
    for i in 0..nn {
        a[(off + i, nz + i)] = -1.0;
    }
    // (iv)
    let off = off + nn;
    for i in 0..=nu {
        a.view_mut((off + i * nc, 0), (nc, nz)).copy_from(&td.fbar_psi(i));
        for r in 0..nc {
            if i < nn {
                a[(off + i * nc + r, nz + i)] = td.h[r];
                b[off + i * nc + r] = 1.0;
            } else {
                b[off + i * nc + r] = 1.0 - td.h[r];
            }
        }
    }
    let (hess, lin) = cost_terms(td, weights, true);
    QuadraticProgram::new(hess, lin).with_ineq(a, b)
}

/// QP over `(s_0, c)` for the rigid problem with cross-section `tube`.
pub fn build_rigid_qp(
    td: &TubeData,
    plant: &PlantModel,
    weights: &CostWeights,
    x: &DVector<f64>,
    tube: &RigidTube,
    nu: usize,
) -> QuadraticProgram {
    let (nx, nz, nc, ns) = (td.n_x, td.n_z(), td.n_c(), td.n_s());
    let rows = ns + (nu + 1) * nc;
    let mut a = DMatrix::zeros(rows, nz);
    let mut b = DVector::zeros(rows);
    let vs = td.v_s();
    // V_s (x − s_0 − center) ≤ scale·1
    a.view_mut((0, 0), (ns, nx)).copy_from(&(-vs));
    let shifted = vs * (x - &tube.center);
    for j in 0..ns {
        b[j] = tube.scale - shifted[j];
    }
    let tight = tube.tightening(td, plant);
    for i in 0..=nu {
        a.view_mut((ns + i * nc, 0), (nc, nz)).copy_from(&td.fbar_psi(i));
        for r in 0..nc {
            b[ns + i * nc + r] = 1.0 - tight[r];
        }
    }
    let (hess, lin) = cost_terms(td, weights, false);
    QuadraticProgram::new(hess, lin).with_ineq(a, b)
}

/// `½ xᵀHx + g·x` equal to `J − N q_α` (homothetic) or `J` (rigid, α ≡ 1).
fn cost_terms(td: &TubeData, w: &CostWeights, with_alpha: bool) -> (DMatrix<f64>, DVector<f64>) {
    let nz = td.n_z();
    let nn = td.horizon;
    let nv = if with_alpha { nz + nn } else { nz };
    let mut hess = DMatrix::zeros(nv, nv);
    hess.view_mut((0, 0), (td.n_x, td.n_x)).copy_from(&(&w.px * 2.0));
    let nc = nn * td.n_u;
    hess.view_mut((td.n_x, td.n_x), (nc, nc)).copy_from(&(&w.pc * 2.0));
    let mut lin = DVector::zeros(nv);
    if with_alpha {
        for i in 0..nn {
            hess[(nz + i, nz + i)] = 2.0 * w.q_alpha;
            lin[nz + i] = -2.0 * w.q_alpha;
        }
    }
    (hess, lin)
}

/// Solution of one MPC step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    pub status: Status,
    #[serde(with = "serde_vector")]
    pub s0: DVector<f64>,
    #[serde(with = "serde_vector")]
    pub c: DVector<f64>,
    /// Cross-section scalings `α_0, …, α_{N−1}`; `α_i = 1` for `i ≥ N`. In
    /// rigid mode all entries equal the rigid scale.
    #[serde(with = "serde_vector")]
    pub alpha: DVector<f64>,
    pub cost: f64,
    pub iterations: usize,
}

impl MpcSolution {
    fn infeasible(status: Status, td: &TubeData, iterations: usize) -> Self {
        Self {
            status,
            s0: DVector::zeros(td.n_x),
            c: DVector::zeros(td.horizon * td.n_u),
            alpha: DVector::zeros(td.horizon),
            cost: f64::NAN,
            iterations,
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.status == Status::Optimal
    }

    /// `c_{0|k}`.
    pub fn c0(&self, n_u: usize) -> DVector<f64> {
        self.c.rows(0, n_u).into_owned()
    }

    /// `z = (s_0, c)`.
    pub fn z(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.s0.len() + self.c.len());
        z.rows_mut(0, self.s0.len()).copy_from(&self.s0);
        z.rows_mut(self.s0.len(), self.c.len()).copy_from(&self.c);
        z
    }
}

/// How the constraint horizon is handled online.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonPolicy {
    /// Computed once from the initial learned set.
    #[default]
    Fixed,
    /// Recomputed from the current learned set at every step.
    Recompute,
}

/// Output of [`MpcController::step`].
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub solution: MpcSolution,
    /// `ŵ_max,k = support(Ŵ_k, V_s)`.
    pub w_hat: SupportVector,
    /// Constraint horizon used for this step.
    pub nu: usize,
    /// Applied input `K x + c_0`, absent when infeasible.
    pub u: Option<DVector<f64>>,
}

/// Receding-horizon controller with warm starts.
#[derive(Clone, Debug)]
pub struct MpcController {
    plant: PlantModel,
    td: TubeData,
    weights: CostWeights,
    mode: TubeMode,
    policy: HorizonPolicy,
    n_max: usize,
    solver: QpSolver,
    warm: Option<DVector<f64>>,
    recomputations: usize,
}

impl MpcController {
    /// Computes the fixed horizon from `initial` (the learned set at `k = 0`).
    pub fn new(
        plant: PlantModel,
        mut td: TubeData,
        weights: CostWeights,
        mode: TubeMode,
        policy: HorizonPolicy,
        initial: &LearnedSet,
    ) -> Result<Self, MpcError> {
        let nz = td.n_z();
        if weights.px.nrows() != td.n_x || weights.pc.nrows() != nz - td.n_x {
            return Err(MpcError::Dimension(format!(
                "weights Px {}x{}, Pc {}x{} do not match n_x = {}, N·n_u = {}",
                weights.px.nrows(),
                weights.px.ncols(),
                weights.pc.nrows(),
                weights.pc.ncols(),
                td.n_x,
                nz - td.n_x
            )));
        }
        let mut ctl = Self { plant, td: td.clone(), weights, mode, policy, n_max: DEFAULT_N_MAX, solver: QpSolver::default(), warm: None, recomputations: 0 };
        let spec = ctl.horizon_spec(initial)?;
        let nu = compute_horizon(&td, &spec, ctl.n_max)?;
        td.set_nu(nu);
        ctl.td = td;
        Ok(ctl)
    }

    pub fn with_n_max(mut self, n_max: usize) -> Self {
        self.n_max = n_max;
        self
    }

    pub fn plant(&self) -> &PlantModel {
        &self.plant
    }
    pub fn tube(&self) -> &TubeData {
        &self.td
    }
    pub fn weights(&self) -> &CostWeights {
        &self.weights
    }
    pub fn mode(&self) -> TubeMode {
        self.mode
    }
    pub fn policy(&self) -> HorizonPolicy {
        self.policy
    }
    /// Online horizon recomputations so far.
    pub fn recomputations(&self) -> usize {
        self.recomputations
    }
    pub fn nu(&self) -> usize {
        self.td.nu.expect("set in constructor")
    }

    pub fn reset_warm_start(&mut self) {
        self.warm = None;
    }

    fn horizon_spec(&self, learned: &LearnedSet) -> Result<HorizonSpec, MpcError> {
        Ok(match self.mode {
            TubeMode::Homothetic => HorizonSpec::Homothetic(self.td.w_max(&learned.realise())?),
            TubeMode::Rigid => HorizonSpec::Rigid(RigidTube::for_learned(&self.plant, learned)?.tightening(&self.td, &self.plant)),
        })
    }

    fn problem(
        &self,
        x: &DVector<f64>,
        learned: &LearnedSet,
        w_hat: &SupportVector,
        nu: usize,
    ) -> Result<(QuadraticProgram, Option<RigidTube>), MpcError> {
        Ok(match self.mode {
            TubeMode::Homothetic => (build_qp(&self.td, &self.weights, x, w_hat, nu), None),
            TubeMode::Rigid => {
                let tube = RigidTube::for_learned(&self.plant, learned)?;
                (build_rigid_qp(&self.td, &self.plant, &self.weights, x, &tube, nu), Some(tube))
            }
        })
    }

    /// The QP this controller would solve at `x`, with the horizon fixed at
    /// construction.
    pub fn qp_at(&self, x: &DVector<f64>, learned: &LearnedSet) -> Result<QuadraticProgram, MpcError> {
        let w_hat = self.td.w_max(&learned.realise())?;
        Ok(self.problem(x, learned, &w_hat, self.nu())?.0)
    }

    /// Whether the problem at `x` has a feasible point (one LP, no QP solve).
    pub fn is_feasible_at(&self, x: &DVector<f64>, learned: &LearnedSet) -> Result<bool, MpcError> {
        let lp = self.qp_at(x, learned)?.feasibility_lp();
        let r = LpSolver::new(self.solver.tol).solve(&lp)?;
        match r.status {
            Status::Optimal => Ok(true),
            Status::Infeasible => Ok(false),
            s => Err(MpcError::Lp(s)),
        }
    }

    /// Solve at state `x` with the current learned set.
    pub fn step(&mut self, x: &DVector<f64>, learned: &LearnedSet) -> Result<StepOutput, MpcError> {
        if x.len() != self.td.n_x {
            return Err(MpcError::Dimension(format!("state of length {}, expected {}", x.len(), self.td.n_x)));
        }
        let w_hat = self.td.w_max(&learned.realise())?;
        let nu = match self.policy {
            HorizonPolicy::Fixed => self.nu(),
            HorizonPolicy::Recompute => {
                self.recomputations += 1;
                let spec = match self.mode {
                    TubeMode::Homothetic => HorizonSpec::Homothetic(w_hat.clone()),
                    TubeMode::Rigid => self.horizon_spec(learned)?,
                };
                let n = compute_horizon(&self.td, &spec, self.n_max)?;
                if n + 1 + TAIL_PROBES >= self.td.powers.len() {
                    self.td.extend_powers(n + 1 + TAIL_PROBES);
                }
                n
            }
        };
        let (qp, rigid) = self.problem(x, learned, &w_hat, nu)?;
        let res = self.solver.solve_warm(&qp, self.warm.as_ref())?;
        let (nx, nn, nu_in) = (self.td.n_x, self.td.horizon, self.td.n_u);
        let ncv = nn * nu_in;
        let solution = match (&res.status, &res.x) {
            (Status::Optimal, Some(v)) => {
                let alpha = match &rigid {
                    None => v.rows(nx + ncv, nn).into_owned(),
                    Some(t) => DVector::from_element(nn, t.scale),
                };
                let cost = res.objective + if rigid.is_none() { nn as f64 * self.weights.q_alpha } else { 0.0 };
                MpcSolution { status: Status::Optimal, s0: v.rows(0, nx).into_owned(), c: v.rows(nx, ncv).into_owned(), alpha, cost, iterations: res.iterations }
            }
            _ => MpcSolution::infeasible(res.status, &self.td, res.iterations),
        };
        let u = if solution.is_feasible() {
            self.warm = Some(self.shifted(&solution, rigid.is_some()));
            Some(self.plant.k() * x + solution.c0(nu_in))
        } else {
            self.warm = None;
            None
        };
        Ok(StepOutput { solution, w_hat, nu, u })
    }

    /// Previous solution advanced one step: `s_0 ← Φ s_0 + B c_0`, `c` and `α`
    /// shifted with zero and one appended.
    fn shifted(&self, sol: &MpcSolution, rigid: bool) -> DVector<f64> {
        let (nx, nn, nu) = (self.td.n_x, self.td.horizon, self.td.n_u);
        let nv = nx + nn * nu + if rigid { 0 } else { nn };
        let mut w = DVector::zeros(nv);
        let s1 = self.plant.phi() * &sol.s0 + self.plant.b() * sol.c0(nu);
        w.rows_mut(0, nx).copy_from(&s1);
        for i in 0..nn.saturating_sub(1) * nu {
            w[nx + i] = sol.c[nu + i];
        }
        if !rigid {
            let off = nx + nn * nu;
            for i in 0..nn - 1 {
                w[off + i] = sol.alpha[i + 1];
            }
            w[off + nn - 1] = 1.0;
        }
        w
    }
}

/// Predicted nominal trajectory and tube.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    /// `s_{i|k}` for `i = 0, …, ν+1`.
    pub s: Vec<Vec<f64>>,
    /// `c_{i|k}` (zero for `i ≥ N`).
    pub c: Vec<Vec<f64>>,
    /// `α_{i|k}` (one for `i ≥ N`).
    pub alpha: Vec<f64>,
    /// Cross-sections `s_{i|k} ⊕ α_{i|k} S`.
    pub cross_sections: Vec<HPolytope>,
}

/// Expand a solution into `s_{i|k}`, offsets and tube cross-sections.
pub fn expand_trajectory(sol: &MpcSolution, td: &TubeData, plant: &PlantModel, nu: usize) -> Trajectory {
    let (nn, nu_in) = (td.horizon, td.n_u);
    let mut s = sol.s0.clone();
    let mut out = Trajectory { s: Vec::new(), c: Vec::new(), alpha: Vec::new(), cross_sections: Vec::new() };
    for i in 0..=nu + 1 {
        let ci = if i < nn { sol.c.rows(i * nu_in, nu_in).into_owned() } else { DVector::zeros(nu_in) };
        let ai = if i < nn { sol.alpha[i] } else { 1.0 };
        let offsets = DVector::from_element(td.n_s(), ai) + td.v_s() * &s;
        out.cross_sections.push(HPolytope::unchecked(td.v_s().clone(), offsets).expect("S rows are valid"));
        out.s.push(s.iter().copied().collect());
        out.c.push(ci.iter().copied().collect());
        out.alpha.push(ai);
        s = plant.phi() * &s + plant.b() * &ci;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_rows;
    use crate::polytope::{invariant_set, InvariantSetOptions};
    use approx::assert_abs_diff_eq;

    fn di() -> (PlantModel, DMatrix<f64>, DMatrix<f64>) {
        let a = from_rows(&[&[1.0, 0.1], &[0.0, 1.0]]);
        let b = from_rows(&[&[0.0], &[0.1]]);
        let f = from_rows(&[&[0.2, 0.0], &[-0.2, 0.0], &[0.0, 0.5], &[0.0, -0.5], &[0.0, 0.0], &[0.0, 0.0]]);
        let g = from_rows(&[&[0.0], &[0.0], &[0.0], &[0.0], &[0.5], &[-0.5]]);
        let r = DMatrix::identity(1, 1) * 0.1;
        let (p, pm) = PlantModel::with_lqr(a, b, f, g, &DMatrix::identity(2, 2), &r).unwrap();
        (p, pm, r)
    }

    fn small_w() -> HPolytope {
        HPolytope::from_bounds(&[-0.002, -0.004], &[0.002, 0.004]).unwrap()
    }

    fn unit_w() -> HPolytope {
        let w = small_w();
        let v = w.normals().clone();
        let mut vn = v.clone();
        for i in 0..v.nrows() {
            let b = w.offsets()[i];
            vn.row_mut(i).scale_mut(1.0 / b);
        }
        HPolytope::new(vn, DVector::from_element(4, 1.0)).unwrap()
    }

    fn setup(n: usize) -> (PlantModel, TubeData, CostWeights) {
        let (plant, p, r) = di();
        let w = unit_w();
        let t = crate::polytope::default_template(w.normals(), plant.phi(), 3);
        let s = invariant_set(plant.phi(), &w, &t, &InvariantSetOptions::default()).unwrap();
        let td = assemble(&plant, &s, n).unwrap();
        let weights = CostWeights::lqr_default(&plant, &p, &r, n).unwrap();
        (plant, td, weights)
    }

    #[test]
    fn single_block_psi() {
        let (plant, td, _) = setup(1);
        assert_abs_diff_eq!(td.psi().view((0, 0), (2, 2)).into_owned(), plant.phi().clone());
        assert_abs_diff_eq!(td.psi().view((0, 2), (2, 1)).into_owned(), plant.b().clone());
        assert_eq!(td.psi()[(2, 2)], 0.0);
    }

    #[test]
    fn selector_and_shift() {
        let e = first_block_selector(1, 3);
        assert_eq!(e, from_rows(&[&[1.0, 0.0, 0.0]]));
        let m = block_upshift(1, 3);
        let c = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!((m * c).as_slice(), &[2.0, 3.0, 0.0]);
    }

    #[test]
    fn no_feedback_tightening() {
        let a = from_rows(&[&[0.5, 0.0], &[0.0, 0.5]]);
        let b = DMatrix::identity(2, 2);
        let f = from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let g = DMatrix::zeros(2, 2);
        let plant = PlantModel::new(a, b, f.clone(), g, DMatrix::zeros(2, 2)).unwrap();
        let s = HPolytope::unit_box(2);
        let td = assemble(&plant, &s, 2).unwrap();
        assert_abs_diff_eq!(td.fbar().view((0, 0), (2, 2)).into_owned(), f);
        assert_eq!(td.h().as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn origin_costs_nothing() {
        let (plant, td, weights) = setup(5);
        let w0 = LearnedSet::new(unit_w(), DVector::zeros(2), DVector::zeros(4), 0.0).unwrap();
        let mut ctl = MpcController::new(plant, td, weights, TubeMode::Homothetic, HorizonPolicy::Fixed, &w0).unwrap();
        let out = ctl.step(&DVector::zeros(2), &w0).unwrap();
        assert!(out.solution.is_feasible());
        assert_abs_diff_eq!(out.solution.cost, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(out.solution.alpha, DVector::from_element(5, 1.0), epsilon = 1e-8);
        assert_abs_diff_eq!(out.u.unwrap()[0], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn row_counts() {
        let (_, mut td, weights) = setup(4);
        let w = td.w_max(&unit_w()).unwrap();
        let nu = compute_horizon(&td, &HorizonSpec::Homothetic(w.clone()), DEFAULT_N_MAX).unwrap();
        td.set_nu(nu);
        let qp = build_qp(&td, &weights, &DVector::zeros(2), &w, nu);
        assert_eq!(qp.a_ineq.nrows(), td.n_s() + 4 * recursion_facets(td.e_max(), w.values()).len() + 4 + (nu + 1) * td.n_c());
        assert_eq!(qp.num_vars(), 2 + 4 + 4);
        assert!(nu >= 3);
    }

    #[test]
    fn far_state_infeasible() {
        let (plant, td, weights) = setup(5);
        let w0 = LearnedSet::conservative(unit_w()).unwrap();
        let mut ctl = MpcController::new(plant, td, weights, TubeMode::Homothetic, HorizonPolicy::Fixed, &w0).unwrap();
        let out = ctl.step(&DVector::from_vec(vec![40.0, 10.0]), &w0).unwrap();
        assert_eq!(out.solution.status, Status::Infeasible);
        assert!(out.u.is_none());
    }

    #[test]
    fn trajectory_identities() {
        let (plant, td, weights) = setup(5);
        let w0 = LearnedSet::conservative(unit_w()).unwrap();
        let mut ctl = MpcController::new(plant.clone(), td, weights, TubeMode::Homothetic, HorizonPolicy::Fixed, &w0).unwrap();
        let out = ctl.step(&DVector::from_vec(vec![2.0, -0.5]), &w0).unwrap();
        let nu = out.nu;
        let traj = expand_trajectory(&out.solution, ctl.tube(), &plant, nu);
        let z = out.solution.z();
        for i in 0..5 {
            let lhs = ctl.tube().fbar_psi(i) * &z;
            let s = DVector::from_vec(traj.s[i].clone());
            let c = DVector::from_vec(traj.c[i].clone());
            let rhs = plant.f_closed() * s + plant.g() * c;
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
        }
        assert!(traj.alpha[5..].iter().all(|&a| a == 1.0));
    }
}
