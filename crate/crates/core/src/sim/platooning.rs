//! Leader–follower platooning in relative coordinates.
//!
//! Both vehicles are double integrators sampled at `t_s`,
//! `x⁺ = A x + B a + ξ` with `x = (p, v)`. With the desired offset
//! `x_des = (−L, 0)` (a fixed point of `A`) the relative state
//! `x = x^f − x^l − x_des` obeys
//!
//! ```text
//! x⁺ = A x + B a^f + w,    w = ξ^f − B u^l − ξ^l,
//! ```
//!
//! so the leader's input and both process noises enter as one additive
//! disturbance, the sum of three independent components.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{from_rows, serde_matrix};
use crate::mpc::{CostWeights, PlantModel};
use crate::polytope::HPolytope;

use super::{Component, Distribution, Scenario, SimError, TrueDisturbanceModel};

/// Physical description of the platoon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatooningConfig {
    /// Sampling interval in seconds.
    pub t_s: f64,
    /// Desired spacing in metres.
    #[serde(rename = "L")]
    pub spacing: f64,
    /// Leader acceleration interval `U^l`.
    pub leader_input: [f64; 2],
    pub leader_input_distribution: Distribution,
    /// Follower process noise `Ξ^f`.
    pub xi_follower: HPolytope,
    pub xi_follower_distribution: Distribution,
    /// Leader process noise `Ξ^l`.
    pub xi_leader: HPolytope,
    pub xi_leader_distribution: Distribution,
    /// Relative-state constraints `F x + G a^f ≤ 1`.
    #[serde(rename = "F", with = "serde_matrix")]
    pub f: DMatrix<f64>,
    #[serde(rename = "G", with = "serde_matrix")]
    pub g: DMatrix<f64>,
    /// Conservative disturbance set `W`, unit offsets.
    #[serde(rename = "W")]
    pub w: HPolytope,
    /// Probability of an extreme draw.
    pub extreme_prob: f64,
}

/// Controller design for an instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    /// LQR state weight.
    #[serde(rename = "Q", with = "serde_matrix")]
    pub q: DMatrix<f64>,
    /// LQR input weight.
    #[serde(rename = "R", with = "serde_matrix")]
    pub r: DMatrix<f64>,
    /// Prediction horizon `N`.
    pub horizon: usize,
    /// Depth of the `V_w Φ^i` template for `S`.
    pub template_depth: usize,
    /// Offline samples `|I0|`.
    pub n_offline: usize,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self { q: DMatrix::from_diagonal(&DVector::from_vec(vec![20.0, 10.0])), r: DMatrix::from_element(1, 1, 1.0), horizon: 30, template_depth: 8, n_offline: 30 }
    }
}

impl Default for PlatooningConfig {
    /// Stand-in instance: `t_s = 0.1 s`, `L = 10 m`, box noises, a symmetric
    /// leader-input interval and a hexagonal `W`.
    fn default() -> Self {
        let t_s = 0.1;
        let noise = HPolytope::from_bounds(&[-0.01, -0.02], &[0.01, 0.02]).expect("box");
        // Relative position in [−15, 8] m, relative speed within ±5 m/s,
        // follower acceleration within ±8 m/s².
        let f = from_rows(&[&[1.0 / 8.0, 0.0], &[-1.0 / 15.0, 0.0], &[0.0, 0.2], &[0.0, -0.2], &[0.0, 0.0], &[0.0, 0.0]]);
        let g = from_rows(&[&[0.0], &[0.0], &[0.0], &[0.0], &[1.0 / 8.0], &[-1.0 / 8.0]]);
        Self {
            t_s,
            spacing: 10.0,
            leader_input: [-0.5, 0.5],
            leader_input_distribution: Distribution::Uniform,
            xi_follower: noise.clone(),
            xi_follower_distribution: Distribution::Uniform,
            xi_leader: noise,
            xi_leader_distribution: Distribution::Uniform,
            f,
            g,
            w: default_w(),
            extreme_prob: 0.02,
        }
    }
}

/// Six-facet conservative set: a box `|w1| ≤ 0.03`, `|w2| ≤ 0.135` with two
/// corners cut.
pub fn default_w() -> HPolytope {
    let (a, b) = (1.0 / 0.03, 1.0 / 0.135);
    let v = from_rows(&[&[a, 0.0], &[-a, 0.0], &[0.0, b], &[0.0, -b], &[a / 1.5, b / 1.5], &[-a / 1.5, -b / 1.5]]);
    HPolytope::new(v, DVector::from_element(6, 1.0)).expect("bounded")
}

impl PlatooningConfig {
    /// `A = [1 t_s; 0 1]`.
    pub fn a(&self) -> DMatrix<f64> {
        from_rows(&[&[1.0, self.t_s], &[0.0, 1.0]])
    }

    /// `B = [0; t_s]`.
    pub fn b(&self) -> DMatrix<f64> {
        from_rows(&[&[0.0], &[self.t_s]])
    }

    /// `x_des = (−L, 0)`.
    pub fn x_des(&self) -> DVector<f64> {
        DVector::from_vec(vec![-self.spacing, 0.0])
    }

    /// Relative state from absolute follower and leader states.
    pub fn relative(&self, follower: &DVector<f64>, leader: &DVector<f64>) -> DVector<f64> {
        follower - leader - self.x_des()
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.t_s > 0.0 && self.t_s.is_finite()) {
            return Err(SimError::Config(format!("t_s = {} must be positive", self.t_s)));
        }
        if !(self.spacing >= 0.0 && self.spacing.is_finite()) {
            return Err(SimError::Config(format!("L = {} must be nonnegative", self.spacing)));
        }
        let [lo, hi] = self.leader_input;
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(SimError::Config(format!("leader input interval [{lo}, {hi}] is invalid")));
        }
        for (name, p) in [("xi_follower", &self.xi_follower), ("xi_leader", &self.xi_leader), ("W", &self.w)] {
            if p.dim() != 2 {
                return Err(SimError::Config(format!("{name} must be 2-dimensional, got {}", p.dim())));
            }
        }
        if self.f.ncols() != 2 || self.g.ncols() != 1 || self.f.nrows() != self.g.nrows() {
            return Err(SimError::Config(format!("F is {}x{} and G is {}x{}; expected m x 2 and m x 1", self.f.nrows(), self.f.ncols(), self.g.nrows(), self.g.ncols())));
        }
        Ok(())
    }
}

/// Relative plant (with the LQR gain of `design`) and the composed true
/// disturbance `Ξ^f ⊕ (−Ξ^l) ⊕ (−B U^l)`, with its support over the
/// template of `W`. Also returns the Riccati matrix.
pub fn build_relative_model(cfg: &PlatooningConfig, design: &DesignConfig) -> Result<(PlantModel, TrueDisturbanceModel, DMatrix<f64>), SimError> {
    cfg.validate()?;
    let (plant, p) = PlantModel::with_lqr(cfg.a(), cfg.b(), cfg.f.clone(), cfg.g.clone(), &design.q, &design.r)?;
    let [lo, hi] = cfg.leader_input;
    let u_set = HPolytope::from_bounds(&[lo], &[hi])?;
    let components = vec![
        Component { support: cfg.xi_follower.clone(), map: DMatrix::identity(2, 2), distribution: cfg.xi_follower_distribution.clone() },
        Component { support: cfg.xi_leader.clone(), map: -DMatrix::identity(2, 2), distribution: cfg.xi_leader_distribution.clone() },
        Component { support: u_set, map: -cfg.b(), distribution: cfg.leader_input_distribution.clone() },
    ];
    let truth = TrueDisturbanceModel::composed(components, cfg.w.normals(), cfg.extreme_prob)?;
    if !truth.is_inside(&cfg.w)? {
        return Err(SimError::Config("the composed true disturbance set is not contained in W".into()));
    }
    Ok((plant, truth, p))
}

/// Scenario for an instance and a design.
pub fn scenario(cfg: &PlatooningConfig, design: &DesignConfig) -> Result<Scenario, SimError> {
    let (plant, truth, p) = build_relative_model(cfg, design)?;
    let weights = CostWeights::lqr_default(&plant, &p, &design.r, design.horizon)?;
    Scenario::build(plant, weights, cfg.w.clone(), truth, design.horizon, design.template_depth, design.n_offline)
}

/// The default instance.
pub fn default_scenario() -> Result<Scenario, SimError> {
    scenario(&PlatooningConfig::default(), &DesignConfig::default())
}
