//! Experiment configuration and the commands behind the `homotube` binary.
//!
//! Every command takes a parsed [`ExperimentConfig`], writes plain JSON/CSV
//! into the output directory and returns a report whose `passed` flag carries
//! the command's built-in verification.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::learner::{epsilon_for, fit_initial, required_samples, InformationSet, LearnedSet, LearnedSetParams, LearnerOptions, Parameterisation};
use crate::linalg::serde_matrix;
use crate::mpc::{compute_horizon, horizon_test, tail_excess, CostWeights, HorizonSpec, PlantModel, RigidTube, TubeMode, DEFAULT_N_MAX, TAIL_PROBES};
use crate::polytope::{invariance_margin, HPolytope};
use crate::sim::platooning::{self, DesignConfig, PlatooningConfig};
use crate::sim::{
    all_feasible, feasible_region_scan, monte_carlo_feasibility, write_joint_csv, ControllerKind, Distribution, GridSpec, MonteCarloReport, RegionGrid,
    RunOptions, Scenario, SimError, SimTrace, TrueDisturbanceModel,
};

pub const CONFIG_VERSION: u32 = 1;
const TOL_INVARIANT: f64 = 1e-8;
const TOL_CONSTRAINT: f64 = 1e-6;
const TOL_MEASUREMENT: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("unsupported config version {0} (expected {CONFIG_VERSION})")]
    Version(u32),
    #[error("{0}")]
    Invalid(String),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("writing {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl From<crate::learner::LearnerError> for ExperimentError {
    fn from(e: crate::learner::LearnerError) -> Self {
        ExperimentError::Sim(e.into())
    }
}

impl From<crate::mpc::MpcError> for ExperimentError {
    fn from(e: crate::mpc::MpcError) -> Self {
        ExperimentError::Sim(e.into())
    }
}

impl From<crate::polytope::PolytopeError> for ExperimentError {
    fn from(e: crate::polytope::PolytopeError) -> Self {
        ExperimentError::Sim(e.into())
    }
}

/// Controller family selected with `--mode`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Homothetic,
    Rigid,
    Conventional,
}

impl Mode {
    pub fn kind(self) -> ControllerKind {
        match self {
            Mode::Homothetic => ControllerKind::LearnedHomothetic,
            Mode::Rigid => ControllerKind::LearnedRigid,
            Mode::Conventional => ControllerKind::Conventional,
        }
    }
}

/// Experiment run by `repro`-style drivers when no subcommand is given.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Fit,
    Invariant,
    Horizon,
    Simulate,
    Region,
    Montecarlo,
    Compare,
    Repro,
}

/// A generic linear system with a directly sampled disturbance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSystem {
    #[serde(rename = "A", with = "serde_matrix")]
    pub a: DMatrix<f64>,
    #[serde(rename = "B", with = "serde_matrix")]
    pub b: DMatrix<f64>,
    #[serde(rename = "F", with = "serde_matrix")]
    pub f: DMatrix<f64>,
    #[serde(rename = "G", with = "serde_matrix")]
    pub g: DMatrix<f64>,
    /// Conservative set, unit offsets.
    #[serde(rename = "W")]
    pub w: HPolytope,
    /// Support of the true disturbance.
    pub true_support: HPolytope,
    pub true_distribution: Distribution,
    #[serde(default)]
    pub extreme_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemSpec {
    Platooning(PlatooningConfig),
    Linear(LinearSystem),
}

/// Explicit cost weights; the LQR-derived ones are used when absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    #[serde(rename = "Px", with = "serde_matrix")]
    pub px: DMatrix<f64>,
    #[serde(rename = "Pc", with = "serde_matrix")]
    pub pc: DMatrix<f64>,
    pub q_alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    /// Overrides the parameterisation implied by the mode.
    pub parameterisation: Option<Parameterisation>,
    /// Confidence parameter of the sample bounds.
    pub delta: f64,
    /// Target violation level; reported with the matching sample count.
    pub epsilon: Option<f64>,
    /// CSV of offline samples used instead of sampling `I0`.
    pub samples_file: Option<PathBuf>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self { parameterisation: None, delta: 0.05, epsilon: Some(0.1), samples_file: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub x0: Vec<f64>,
    pub steps: usize,
    pub hold_last_input: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { x0: vec![4.0, 2.0], steps: 100, hold_last_input: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub runs: usize,
    pub steps: usize,
    /// Initial state; a boundary point of the scanned region when absent.
    pub x0: Option<Vec<f64>>,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { runs: 100, steps: 100, x0: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonConfig {
    pub n_max: usize,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self { n_max: DEFAULT_N_MAX }
    }
}

/// Versioned experiment description. Matrices are row-major nested arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub system: SystemSpec,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default)]
    pub cost: Option<CostSpec>,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default = "default_grid")]
    pub region: GridSpec,
    #[serde(default)]
    pub montecarlo: MonteCarloConfig,
    #[serde(default)]
    pub horizon: HorizonConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// 50×50 cell-centred grid over the constraint box of the default instance.
pub fn default_grid() -> GridSpec {
    let (lo, hi, n) = ([-15.0, -5.0], [8.0, 5.0], 50usize);
    let half = [(hi[0] - lo[0]) / (2.0 * n as f64), (hi[1] - lo[1]) / (2.0 * n as f64)];
    GridSpec::new([lo[0] + half[0], lo[1] + half[1]], [hi[0] - half[0], hi[1] - half[1]], [n, n])
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            experiment: None,
            seed: 1,
            out_dir: default_out(),
            system: SystemSpec::Platooning(PlatooningConfig::default()),
            design: DesignConfig::default(),
            cost: None,
            learner: LearnerConfig::default(),
            simulation: SimulationConfig::default(),
            region: default_grid(),
            montecarlo: MonteCarloConfig::default(),
            horizon: HorizonConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates; schema errors carry the offending field path.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::Schema { path, message: e.into_inner().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// SHA-256 of the canonical serialisation.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Version(self.version));
        }
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let n_x = match &self.system {
            SystemSpec::Platooning(_) => 2,
            SystemSpec::Linear(l) => {
                let n = l.a.nrows();
                if l.w.dim() != n || l.true_support.dim() != n {
                    return invalid(format!("system: W and true_support must be {n}-dimensional"));
                }
                n
            }
        };
        let d = &self.design;
        if d.q.nrows() != n_x || d.q.ncols() != n_x {
            return invalid(format!("design.Q must be {n_x}x{n_x}"));
        }
        if d.horizon == 0 {
            return invalid("design.horizon must be at least 1".into());
        }
        if self.simulation.x0.len() != n_x {
            return invalid(format!("simulation.x0 has {} entries, expected {n_x}", self.simulation.x0.len()));
        }
        if let Some(x0) = &self.montecarlo.x0 {
            if x0.len() != n_x {
                return invalid(format!("montecarlo.x0 has {} entries, expected {n_x}", x0.len()));
            }
        }
        if self.simulation.steps == 0 || self.montecarlo.steps == 0 {
            return invalid("simulation and montecarlo steps must be at least 1".into());
        }
        if self.montecarlo.runs == 0 {
            return invalid("montecarlo.runs must be at least 1".into());
        }
        if !(self.learner.delta > 0.0 && self.learner.delta < 1.0) {
            return invalid(format!("learner.delta = {} outside (0, 1)", self.learner.delta));
        }
        if let Some(eps) = self.learner.epsilon {
            if !(eps > 0.0 && eps < 1.0) {
                return invalid(format!("learner.epsilon = {eps} outside (0, 1)"));
            }
        }
        if let Some(f) = &self.learner.samples_file {
            if !f.is_file() {
                return invalid(format!("learner.samples_file {} does not exist", f.display()));
            }
        }
        Ok(())
    }

    /// Scenario described by the config.
    pub fn scenario(&self) -> Result<Scenario, ExperimentError> {
        let mut sc = match &self.system {
            SystemSpec::Platooning(p) => platooning::scenario(p, &self.design)?,
            SystemSpec::Linear(l) => {
                let (plant, p) = PlantModel::with_lqr(l.a.clone(), l.b.clone(), l.f.clone(), l.g.clone(), &self.design.q, &self.design.r)?;
                let weights = CostWeights::lqr_default(&plant, &p, &self.design.r, self.design.horizon)?;
                let truth = TrueDisturbanceModel::direct(l.true_support.clone(), l.true_distribution.clone(), l.w.normals(), l.extreme_prob)?;
                Scenario::build(plant, weights, l.w.clone(), truth, self.design.horizon, self.design.template_depth, self.design.n_offline)?
            }
        };
        if let Some(c) = &self.cost {
            sc.weights = CostWeights::new(c.px.clone(), c.pc.clone(), c.q_alpha)?;
        }
        if let Some(p) = self.learner.parameterisation {
            sc.learner.parameterisation = p;
        }
        sc.config_hash = self.hash();
        Ok(sc)
    }

    fn learner_options(&self, sc: &Scenario, mode: Mode) -> LearnerOptions {
        let mut o = sc.learner_options(mode.kind());
        if let Some(p) = self.learner.parameterisation {
            o.parameterisation = p;
        }
        o
    }

    /// `I0` from the samples file or drawn with the configured seed.
    pub fn offline_samples(&self, sc: &Scenario) -> Result<InformationSet, ExperimentError> {
        match &self.learner.samples_file {
            Some(f) => Ok(InformationSet::read_csv(f)?),
            None => Ok(sc.offline_samples(self.seed)?),
        }
    }

    /// Learned set at `k = 0` for `mode`.
    pub fn initial_set(&self, sc: &Scenario, mode: Mode, i0: &InformationSet) -> Result<LearnedSet, ExperimentError> {
        if mode == Mode::Conventional {
            return Ok(LearnedSet::conservative(sc.w.clone())?);
        }
        Ok(fit_initial(&sc.w, i0, &self.learner_options(sc, mode))?.set)
    }
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, ExperimentError> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value).map_err(SimError::from)?;
    fs::write(&path, text).map_err(|source| ExperimentError::Output { path: path.clone(), source })?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Output { path: dir.to_path_buf(), source })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub mode: Mode,
    pub n_samples: usize,
    pub rejected: Vec<usize>,
    pub delta: f64,
    /// Violation level certified by `n_samples`.
    pub epsilon: f64,
    pub epsilon_target: Option<f64>,
    pub required_samples: Option<usize>,
    pub objective: f64,
    pub degenerate: bool,
    pub set: LearnedSetParams,
    pub offsets: Vec<f64>,
    pub passed: bool,
}

/// Fits `Ŵ_0` and reports the scenario bound.
///
/// Writes `learned_set.json` and `fit_report.json`.
pub fn cmd_fit(cfg: &ExperimentConfig, mode: Mode, out: &Path) -> Result<FitReport, ExperimentError> {
    ensure_dir(out)?;
    let sc = cfg.scenario()?;
    let i0 = cfg.offline_samples(&sc)?;
    let (set, objective, rejected) = if mode == Mode::Conventional {
        let set = LearnedSet::conservative(sc.w.clone())?;
        let obj = set.objective();
        (set, obj, i0.outside(&sc.w))
    } else {
        let fit = fit_initial(&sc.w, &i0, &cfg.learner_options(&sc, mode))?;
        (fit.set, fit.objective, fit.rejected)
    };
    let degenerate = set.is_degenerate()?;
    if degenerate {
        warn!("learned set is degenerate (a point); {} offline sample(s)", i0.len());
    }
    if !rejected.is_empty() {
        warn!("{} offline sample(s) lie outside W and were ignored", rejected.len());
    }
    let (n_x, n_v) = (sc.n_x(), sc.w.num_facets());
    let epsilon = epsilon_for(i0.len().max(1), cfg.learner.delta, n_x, n_v)?;
    let required = match cfg.learner.epsilon {
        Some(e) => Some(required_samples(e, cfg.learner.delta, n_x, n_v)?.required_samples),
        None => None,
    };
    if let (Some(target), Some(need)) = (cfg.learner.epsilon, required) {
        if i0.len() < need {
            warn!("|I0| = {} certifies epsilon = {epsilon:.4}; the target {target} needs {need} samples", i0.len());
        }
    }
    let report = FitReport {
        mode,
        n_samples: i0.len(),
        rejected,
        delta: cfg.learner.delta,
        epsilon,
        epsilon_target: cfg.learner.epsilon,
        required_samples: required,
        objective,
        degenerate,
        set: set.params(),
        offsets: set.offsets().iter().copied().collect(),
        passed: sc.w.contains(&set.realise())?,
    };
    write_json(out, "learned_set.json", &set.params())?;
    write_json(out, "fit_report.json", &report)?;
    info!("fit: |I0| = {}, epsilon = {:.4}, objective = {:.6}", report.n_samples, report.epsilon, report.objective);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub n_facets: usize,
    /// `max(support(S, V_s Φ) + support(W, V_s)) − 1`.
    pub excess: f64,
    pub set: HPolytope,
    pub passed: bool,
}

/// Computes `S` and checks `Φ S ⊕ W ⊆ S`. Writes `invariant_set.json`.
pub fn cmd_invariant(cfg: &ExperimentConfig, out: &Path) -> Result<InvariantReport, ExperimentError> {
    ensure_dir(out)?;
    let sc = cfg.scenario()?;
    let s = sc.tube.s().clone();
    let excess = invariance_margin(&s, sc.plant.phi(), &sc.w)? - 1.0;
    let report = InvariantReport { n_facets: s.num_facets(), excess, set: s.clone(), passed: excess <= TOL_INVARIANT };
    write_json(out, "invariant_set.json", &s)?;
    write_json(out, "invariant_report.json", &report)?;
    info!("invariant set: {} facets, invariance excess {:.3e}", report.n_facets, excess);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub mode: Mode,
    pub horizon: usize,
    pub nu: usize,
    /// Excess over `1 − h` of the probes `ν+1, …, ν+50`.
    pub tail: Vec<f64>,
    pub tail_ok: bool,
    /// `ν − 1` fails the test (or `ν = N − 1`).
    pub minimal: bool,
    pub w_hat: Vec<f64>,
    /// `ν` for the doubled bound, when one exists.
    pub nu_doubled: Option<usize>,
    pub passed: bool,
}

/// Constraint horizon for `mode`, with the tail probes and a comparison
/// against a doubled disturbance bound. Writes `horizon_report.json`.
pub fn cmd_horizon(cfg: &ExperimentConfig, mode: Mode, out: &Path) -> Result<HorizonReport, ExperimentError> {
    ensure_dir(out)?;
    let sc = cfg.scenario()?;
    let i0 = cfg.offline_samples(&sc)?;
    let set = cfg.initial_set(&sc, mode, &i0)?;
    let td = &sc.tube;
    let n_max = cfg.horizon.n_max;
    let (spec, doubled, w_hat) = match mode.kind().mode() {
        TubeMode::Homothetic => {
            let w = td.w_max(&set.realise())?;
            let d = HorizonSpec::Homothetic(crate::polytope::SupportVector(w.values() * 2.0));
            let vals = w.values().iter().copied().collect();
            (HorizonSpec::Homothetic(w), Some(d), vals)
        }
        TubeMode::Rigid => {
            let tube = RigidTube::for_learned(&sc.plant, &set)?;
            (HorizonSpec::Rigid(tube.tightening(td, &sc.plant)), None, Vec::new())
        }
    };
    let nu = compute_horizon(td, &spec, n_max)?;
    let tail = tail_excess(td, &spec, nu, TAIL_PROBES)?;
    let tail_ok = tail.iter().all(|e| *e <= 1e-7);
    let minimal = nu + 1 == td.horizon() || !horizon_test(td, &spec, nu - 1)?;
    let nu_doubled = match &doubled {
        Some(d) => match compute_horizon(td, d, n_max) {
            Ok(n) => Some(n),
            Err(e) => {
                info!("doubled disturbance bound: {e}");
                None
            }
        },
        None => None,
    };
    if let Some(nd) = nu_doubled {
        info!("nu = {nu}; with doubled w_hat nu = {nd}");
    }
    let report = HorizonReport { mode, horizon: td.horizon(), nu, tail, tail_ok, minimal, w_hat, nu_doubled, passed: tail_ok && minimal && nu + 1 >= td.horizon() };
    write_json(out, "horizon_report.json", &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub mode: Mode,
    pub seed: u64,
    pub steps: usize,
    pub all_feasible: bool,
    pub max_constraint_excess: f64,
    pub max_measurement_error: f64,
    pub passed: bool,
}

/// Largest `|w_k − (x_{k+1} − A x_k − B u_k)|` along a trace.
pub fn measurement_error(trace: &SimTrace, plant: &PlantModel) -> f64 {
    let mut worst = 0.0f64;
    for (k, s) in trace.steps.iter().enumerate() {
        let (Some(u), Some(w)) = (&s.u, &s.w) else { continue };
        let next = match trace.steps.get(k + 1) {
            Some(n) => DVector::from_column_slice(&n.x),
            None if trace.meta.terminated_at.is_none() => DVector::from_column_slice(&trace.x_final),
            None => continue,
        };
        let x = DVector::from_column_slice(&s.x);
        let u = DVector::from_column_slice(u);
        let pred = next - plant.a() * x - plant.b() * u;
        worst = worst.max((pred - DVector::from_column_slice(w)).amax());
    }
    worst
}

/// One closed loop from `simulation.x0`. Writes `trace_<controller>.json`
/// and `.csv`.
pub fn cmd_simulate(cfg: &ExperimentConfig, mode: Mode, out: &Path) -> Result<(SimulateReport, SimTrace), ExperimentError> {
    ensure_dir(out)?;
    let sc = cfg.scenario()?;
    let x0 = DVector::from_column_slice(&cfg.simulation.x0);
    let opts = RunOptions { steps: cfg.simulation.steps, hold_last_input: cfg.simulation.hold_last_input, policy: None };
    let trace = sc.run(mode.kind(), &x0, cfg.seed, &opts)?;
    let label = mode.kind().label();
    trace.write_json(&out.join(format!("trace_{label}.json")))?;
    trace.write_csv(&out.join(format!("trace_{label}.csv")))?;
    let excess = trace.steps.iter().filter(|s| s.feasible()).filter_map(|s| s.constraint_excess).fold(f64::NEG_INFINITY, f64::max);
    let meas = measurement_error(&trace, &sc.plant);
    let feasible = all_feasible(&trace);
    let report = SimulateReport {
        mode,
        seed: cfg.seed,
        steps: trace.len(),
        all_feasible: feasible,
        max_constraint_excess: excess,
        max_measurement_error: meas,
        passed: feasible && excess <= TOL_CONSTRAINT && meas <= TOL_MEASUREMENT,
    };
    write_json(out, &format!("simulate_{label}.json"), &report)?;
    Ok((report, trace))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub counts: Vec<(String, usize)>,
    /// Conventional points infeasible for learned-rigid.
    pub conventional_not_rigid: usize,
    /// Learned-rigid points infeasible for learned-homothetic.
    pub rigid_not_homothetic: usize,
    pub conventional_not_homothetic: usize,
    pub homothetic_extra: usize,
    pub passed: bool,
}

/// The three initial feasible regions, from one `I0`.
pub fn scan_regions(cfg: &ExperimentConfig, sc: &Scenario) -> Result<Vec<RegionGrid>, ExperimentError> {
    let i0 = cfg.offline_samples(sc)?;
    let mut grids = Vec::new();
    for mode in [Mode::Conventional, Mode::Rigid, Mode::Homothetic] {
        let set = cfg.initial_set(sc, mode, &i0)?;
        let ctl = sc.controller(mode.kind(), &set, None)?;
        grids.push(feasible_region_scan(&ctl, &set, &cfg.region, mode.kind().label())?);
    }
    Ok(grids)
}

/// Scans the initial feasible regions. Writes `region.csv`.
pub fn cmd_region(cfg: &ExperimentConfig, out: &Path) -> Result<(RegionReport, Vec<RegionGrid>), ExperimentError> {
    ensure_dir(out)?;
    let sc = cfg.scenario()?;
    let grids = scan_regions(cfg, &sc)?;
    crate::sim::write_grids_csv(&grids, &out.join("region.csv"))?;
    let (conv, rigid, homo) = (&grids[0], &grids[1], &grids[2]);
    let conventional_not_rigid = conv.not_in(rigid).len();
    let rigid_not_homothetic = rigid.not_in(homo).len();
    let conventional_not_homothetic = conv.not_in(homo).len();
    let homothetic_extra = homo.not_in(conv).len();
    let passed = conventional_not_rigid == 0 && rigid_not_homothetic == 0 && conventional_not_homothetic == 0 && homothetic_extra > 0;
    if !passed {
        warn!(
            "regions not nested: conventional outside rigid {conventional_not_rigid}, rigid outside homothetic {rigid_not_homothetic}, \
             conventional outside homothetic {conventional_not_homothetic}, homothetic extra {homothetic_extra}"
        );
    }
    let report = RegionReport {
        counts: grids.iter().map(|g| (g.source.clone(), g.count())).collect(),
        conventional_not_rigid,
        rigid_not_homothetic,
        conventional_not_homothetic,
        homothetic_extra,
        passed,
    };
    write_json(out, "region_report.json", &report)?;
    Ok((report, grids))
}

/// A feasible boundary point of `region` that is farthest from the origin in
/// the grid's scaled coordinates.
pub fn boundary_point(region: &RegionGrid, grid: &GridSpec, n_x: usize) -> Option<DVector<f64>> {
    let sx = (grid.hi[0] - grid.lo[0]).abs().max(1e-12);
    let sy = (grid.hi[1] - grid.lo[1]).abs().max(1e-12);
    region
        .boundary()
        .into_iter()
        .max_by(|a, b| {
            let na = (a.0 / sx).hypot(a.1 / sy);
            let nb = (b.0 / sx).hypot(b.1 / sy);
            na.total_cmp(&nb)
        })
        .map(|(x, y)| grid.point(n_x, x, y))
}

/// Feasibility rate from a boundary initial state. Writes `montecarlo.json`.
pub fn cmd_montecarlo(cfg: &ExperimentConfig, mode: Mode, out: &Path) -> Result<MonteCarloReport, ExperimentError> {
    ensure_dir(out)?;
    let sc = cfg.scenario()?;
    let x0 = match &cfg.montecarlo.x0 {
        Some(x) => DVector::from_column_slice(x),
        None => {
            let i0 = cfg.offline_samples(&sc)?;
            let set = cfg.initial_set(&sc, mode, &i0)?;
            let ctl = sc.controller(mode.kind(), &set, None)?;
            let grid = feasible_region_scan(&ctl, &set, &cfg.region, mode.kind().label())?;
            boundary_point(&grid, &cfg.region, sc.n_x()).ok_or_else(|| ConfigError::Invalid("the scanned feasible region is empty".into()))?
        }
    };
    let opts = RunOptions { steps: cfg.montecarlo.steps, hold_last_input: false, policy: None };
    let report = monte_carlo_feasibility(&sc, mode.kind(), &x0, cfg.montecarlo.runs, cfg.seed, &opts, cfg.learner.delta)?;
    write_json(out, "montecarlo.json", &report)?;
    info!("monte carlo: {}/{} feasible runs, epsilon = {:.4}", report.feasible_runs, report.runs, report.epsilon);
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub controller: String,
    pub steps: usize,
    pub all_feasible: bool,
    pub total_cost: f64,
    pub horizon_recomputations: usize,
    pub max_constraint_excess: f64,
}

/// The three controllers from one initial state and one seed. Writes
/// `compare.csv` (long format) and `compare.json`.
pub fn cmd_compare(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<CompareRow>, Vec<SimTrace>), ExperimentError> {
    ensure_dir(out)?;
    let sc = cfg.scenario()?;
    let x0 = DVector::from_column_slice(&cfg.simulation.x0);
    let opts = RunOptions { steps: cfg.simulation.steps, hold_last_input: cfg.simulation.hold_last_input, policy: None };
    let mut traces = Vec::new();
    for kind in ControllerKind::ALL {
        traces.push(sc.run(kind, &x0, cfg.seed, &opts)?);
    }
    let labelled: Vec<(&str, &SimTrace)> = traces.iter().map(|t| (t.meta.controller.as_str(), t)).collect();
    write_joint_csv(&labelled, &out.join("compare.csv"))?;
    let rows: Vec<CompareRow> = traces
        .iter()
        .map(|t| CompareRow {
            controller: t.meta.controller.clone(),
            steps: t.len(),
            all_feasible: all_feasible(t),
            total_cost: t.steps.iter().filter_map(|s| s.cost).sum(),
            horizon_recomputations: t.meta.horizon_recomputations,
            max_constraint_excess: t.steps.iter().filter_map(|s| s.constraint_excess).fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();
    write_json(out, "compare.json", &rows)?;
    Ok((rows, traces))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReproReport {
    pub fit: FitReport,
    pub invariant: InvariantReport,
    pub horizon: HorizonReport,
    pub region: RegionReport,
    pub montecarlo: MonteCarloReport,
    pub passed: bool,
}

/// fit → invariant → horizon → region → montecarlo with one config.
pub fn cmd_repro(cfg: &ExperimentConfig, mode: Mode, out: &Path) -> Result<ReproReport, ExperimentError> {
    let fit = cmd_fit(cfg, mode, out)?;
    let invariant = cmd_invariant(cfg, out)?;
    let horizon = cmd_horizon(cfg, mode, out)?;
    let (region, _) = cmd_region(cfg, out)?;
    let montecarlo = cmd_montecarlo(cfg, mode, out)?;
    let passed = fit.passed && invariant.passed && horizon.passed && region.passed && montecarlo.rate == 1.0;
    let report = ReproReport { fit, invariant, horizon, region, montecarlo, passed };
    write_json(out, "repro.json", &report)?;
    Ok(report)
}
