//! Closed-loop simulation harness.
//!
//! A [`Scenario`] bundles the plant, the conservative disturbance set, the tube
//! and the true disturbance law. Each run draws its offline samples and its
//! online disturbances from two separate streams of one seeded generator, so
//! controllers run with the same seed see identical disturbances.

mod disturbance;
pub mod platooning;
mod scan;
mod trace;

pub use disturbance::{Component, Distribution, TrueDisturbanceModel};
pub use scan::{feasible_region_scan, monte_carlo_feasibility, write_grids_csv, GridSpec, MonteCarloReport, RegionGrid};
pub use trace::{write_joint_csv, SimTrace, StepRecord, TraceMeta};

use std::time::Instant;

use log::{info, warn};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::{InformationSet, LearnedSet, Learner, LearnerError, LearnerOptions, Parameterisation};
use crate::mpc::{assemble, CostWeights, HorizonPolicy, MpcController, MpcError, PlantModel, TubeData, TubeMode};
use crate::polytope::{default_template, invariant_set, HPolytope, InvariantSetOptions, PolytopeError};
use crate::solver::Status;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("sampling: {0}")]
    Sampling(String),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error("output: {0}")]
    Csv(#[from] csv::Error),
    #[error("output: {0}")]
    Json(#[from] serde_json::Error),
}

/// The three controllers compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// Homothetic tube on the conservative set, no learning.
    Conventional,
    /// Homothetic tube on the heterogeneously learned set.
    LearnedHomothetic,
    /// Rigid tube on the uniformly learned set.
    LearnedRigid,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::Conventional, ControllerKind::LearnedRigid, ControllerKind::LearnedHomothetic];

    pub fn label(self) -> &'static str {
        match self {
            ControllerKind::Conventional => "conventional",
            ControllerKind::LearnedHomothetic => "learned_homothetic",
            ControllerKind::LearnedRigid => "learned_rigid",
        }
    }

    pub fn mode(self) -> TubeMode {
        match self {
            ControllerKind::LearnedRigid => TubeMode::Rigid,
            _ => TubeMode::Homothetic,
        }
    }

    pub fn learns(self) -> bool {
        self != ControllerKind::Conventional
    }

    pub fn parameterisation(self) -> Parameterisation {
        match self {
            ControllerKind::LearnedRigid => Parameterisation::Uniform,
            _ => Parameterisation::Heterogeneous,
        }
    }

    /// The rigid tube moves with the learned set, so its horizon is recomputed
    /// at every step; the homothetic controllers keep the initial one.
    pub fn default_policy(self) -> HorizonPolicy {
        match self {
            ControllerKind::LearnedRigid => HorizonPolicy::Recompute,
            _ => HorizonPolicy::Fixed,
        }
    }
}

/// Options of a single closed-loop run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub steps: usize,
    /// Keep running after an infeasible step with the last applied input.
    /// Demonstrations only.
    pub hold_last_input: bool,
    /// Overrides the controller's default horizon policy.
    pub policy: Option<HorizonPolicy>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { steps: 100, hold_last_input: false, policy: None }
    }
}

/// Everything needed to run any of the controllers.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub plant: PlantModel,
    pub weights: CostWeights,
    /// Tube for the conservative set; horizon not yet set.
    pub tube: TubeData,
    /// Conservative set `W` with unit offsets.
    pub w: HPolytope,
    pub truth: TrueDisturbanceModel,
    /// `|I0|`.
    pub n_offline: usize,
    pub learner: LearnerOptions,
    /// Hash of the configuration this scenario came from, copied into traces.
    pub config_hash: String,
}

impl Scenario {
    /// Builds `S` from `W` with the default template of the given depth and
    /// assembles the tube.
    pub fn build(
        plant: PlantModel,
        weights: CostWeights,
        w: HPolytope,
        truth: TrueDisturbanceModel,
        horizon: usize,
        template_depth: usize,
        n_offline: usize,
    ) -> Result<Self, SimError> {
        if w.dim() != plant.n_x() || truth.dim() != plant.n_x() {
            return Err(SimError::Config("W, the true disturbance model and the plant must share a dimension".into()));
        }
        if !truth.is_inside(&w)? {
            return Err(SimError::Config("the true disturbance support is not contained in the conservative set W".into()));
        }
        let template = default_template(w.normals(), plant.phi(), template_depth);
        let s = invariant_set(plant.phi(), &w, &template, &InvariantSetOptions::default())?;
        let tube = assemble(&plant, &s, horizon)?;
        Ok(Self { plant, weights, tube, w, truth, n_offline, learner: LearnerOptions::default(), config_hash: String::new() })
    }

    pub fn n_x(&self) -> usize {
        self.plant.n_x()
    }

    pub fn learner_options(&self, kind: ControllerKind) -> LearnerOptions {
        LearnerOptions { parameterisation: kind.parameterisation(), ..self.learner }
    }

    /// Offline samples `I0` for `seed`.
    pub fn offline_samples(&self, seed: u64) -> Result<InformationSet, SimError> {
        let mut rng = streams(seed).0;
        Ok(InformationSet::from_samples(self.truth.sample_many(self.n_offline, &mut rng)?))
    }

    /// Learner at `k = 0`: fitted on `I0` for learning controllers, the frozen
    /// conservative set otherwise.
    pub fn initial_learner(&self, kind: ControllerKind, i0: &InformationSet) -> Result<Learner, SimError> {
        if kind.learns() {
            Ok(Learner::fit(&self.w, i0.clone(), self.learner_options(kind))?)
        } else {
            Ok(Learner::frozen(LearnedSet::conservative(self.w.clone())?))
        }
    }

    pub fn controller(&self, kind: ControllerKind, initial: &LearnedSet, policy: Option<HorizonPolicy>) -> Result<MpcController, SimError> {
        Ok(MpcController::new(
            self.plant.clone(),
            self.tube.clone(),
            self.weights.clone(),
            kind.mode(),
            policy.unwrap_or(kind.default_policy()),
            initial,
        )?)
    }

    /// Fit, build the controller and run from `x0`.
    pub fn run(&self, kind: ControllerKind, x0: &DVector<f64>, seed: u64, opts: &RunOptions) -> Result<SimTrace, SimError> {
        let i0 = self.offline_samples(seed)?;
        let mut learner = self.initial_learner(kind, &i0)?;
        let mut ctl = self.controller(kind, learner.current(), opts.policy)?;
        let mut rng = streams(seed).1;
        let mut trace = run_closed_loop(&mut ctl, &mut learner, kind.learns(), &self.truth, x0, opts, &mut rng)?;
        trace.meta.controller = kind.label().to_string();
        trace.meta.seed = seed;
        trace.meta.config_hash = self.config_hash.clone();
        Ok(trace)
    }
}

/// Offline-sample and online-disturbance generators for `seed`.
pub fn streams(seed: u64) -> (ChaCha20Rng, ChaCha20Rng) {
    let mut a = ChaCha20Rng::seed_from_u64(seed);
    a.set_stream(0);
    let mut b = ChaCha20Rng::seed_from_u64(seed);
    b.set_stream(1);
    (a, b)
}

/// Per-run seed for run `r` of a batch started from `seed`.
pub fn run_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Receding-horizon loop.
///
/// At each step: solve with `Ŵ_k`, apply `u_k = K x_k + c_0`, draw `w_k`,
/// propagate, measure `w_k = x_{k+1} − A x_k − B u_k`, and (if `learn`) update
/// the learner. Stops at the first infeasible step unless
/// `opts.hold_last_input` is set.
pub fn run_closed_loop(
    ctl: &mut MpcController,
    learner: &mut Learner,
    learn: bool,
    truth: &TrueDisturbanceModel,
    x0: &DVector<f64>,
    opts: &RunOptions,
    rng: &mut ChaCha20Rng,
) -> Result<SimTrace, SimError> {
    let plant = ctl.plant().clone();
    if x0.len() != plant.n_x() || truth.dim() != plant.n_x() || learner.current().base().dim() != plant.n_x() {
        return Err(SimError::Config("state, disturbance model and learner dimensions disagree with the plant".into()));
    }
    let truth_offsets = truth.support().offsets().clone();
    let same_template = learner.current().base().normals() == truth.support().normals();
    if !same_template {
        warn!("true support is not expressed over the learner template; coverage of W_true is checked by LP each step");
    }
    let mut trace = SimTrace::new(ctl, learner.current(), opts.steps);
    let mut x = x0.clone();
    let mut last_u: Option<DVector<f64>> = None;
    for k in 0..opts.steps {
        let set_k = learner.current().clone();
        let offsets = set_k.offsets();
        let covers_truth = if same_template {
            offsets.iter().zip(truth_offsets.iter()).all(|(o, t)| *o >= t - 1e-9)
        } else {
            set_k.realise().contains(truth.support())?
        };
        let t0 = Instant::now();
        let out = ctl.step(&x, &set_k)?;
        let elapsed = t0.elapsed();
        let feasible = out.solution.status == Status::Optimal;
        let u = match (&out.u, opts.hold_last_input) {
            (Some(u), _) => Some(u.clone()),
            (None, true) => Some(last_u.clone().unwrap_or_else(|| plant.k() * &x)),
            (None, false) => None,
        };
        let Some(u) = u else {
            trace.push(StepRecord::infeasible(k, &x, &out, &offsets, covers_truth), elapsed);
            trace.meta.terminated_at = Some(k);
            info!("run stopped: problem infeasible at step {k}");
            break;
        };
        let w_true = truth.sample(rng)?;
        let x_next = plant.step(&x, &u, &w_true);
        let w_meas = &x_next - plant.a() * &x - plant.b() * &u;
        let in_learned = set_k.covers(&w_meas, 1e-8);
        let excess = plant.constraint_excess(&x, &u);
        trace.push(
            StepRecord {
                k,
                x: x.iter().copied().collect(),
                u: Some(u.iter().copied().collect()),
                w: Some(w_meas.iter().copied().collect()),
                status: out.solution.status,
                cost: feasible.then_some(out.solution.cost),
                nu: out.nu,
                w_hat: out.w_hat.values().iter().copied().collect(),
                offsets: offsets.iter().copied().collect(),
                alpha: out.solution.alpha.iter().copied().collect(),
                covers_truth,
                w_in_learned: Some(in_learned),
                constraint_excess: Some(excess),
            },
            elapsed,
        );
        if !feasible && trace.meta.terminated_at.is_none() {
            trace.meta.first_infeasible.get_or_insert(k);
        }
        if learn && !learner.observe(w_meas)? {
            trace.meta.mismatches.push(k);
        }
        last_u = Some(u);
        x = x_next;
    }
    trace.meta.horizon_recomputations = ctl.recomputations();
    trace.x_final = x.iter().copied().collect();
    trace.meta.final_offsets = learner.current().offsets().iter().copied().collect();
    Ok(trace)
}

/// `true` when every recorded step is feasible and the run was not cut short.
pub fn all_feasible(trace: &SimTrace) -> bool {
    trace.meta.terminated_at.is_none() && trace.steps.iter().all(|s| s.status == Status::Optimal)
}
