use std::path::Path;
use std::time::Duration;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::learner::LearnedSet;
use crate::mpc::{MpcController, StepOutput};
use crate::solver::Status;

use super::SimError;

/// One closed-loop step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub x: Vec<f64>,
    /// Applied input; absent at a terminating infeasible step.
    pub u: Option<Vec<f64>>,
    /// Measured disturbance `x_{k+1} − A x_k − B u_k`.
    pub w: Option<Vec<f64>>,
    pub status: Status,
    pub cost: Option<f64>,
    pub nu: usize,
    /// `ŵ_max,k`.
    pub w_hat: Vec<f64>,
    /// Facet offsets of `Ŵ_k`.
    pub offsets: Vec<f64>,
    pub alpha: Vec<f64>,
    /// `W_true ⊆ Ŵ_k`.
    pub covers_truth: bool,
    /// `w_k ∈ Ŵ_k`.
    pub w_in_learned: Option<bool>,
    /// `max(F x_k + G u_k − 1)`.
    pub constraint_excess: Option<f64>,
}

impl StepRecord {
    pub(crate) fn infeasible(k: usize, x: &DVector<f64>, out: &StepOutput, offsets: &DVector<f64>, covers_truth: bool) -> Self {
        Self {
            k,
            x: x.iter().copied().collect(),
            u: None,
            w: None,
            status: out.solution.status,
            cost: None,
            nu: out.nu,
            w_hat: out.w_hat.values().iter().copied().collect(),
            offsets: offsets.iter().copied().collect(),
            alpha: Vec::new(),
            covers_truth,
            w_in_learned: None,
            constraint_excess: None,
        }
    }

    pub fn feasible(&self) -> bool {
        self.status == Status::Optimal
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub controller: String,
    pub seed: u64,
    pub config_hash: String,
    pub mode: String,
    pub n_x: usize,
    pub n_u: usize,
    pub horizon: usize,
    /// Horizon fixed at construction.
    pub nu0: usize,
    pub steps_requested: usize,
    /// Step at which the run stopped on infeasibility.
    pub terminated_at: Option<usize>,
    /// First infeasible step when running with a held input.
    pub first_infeasible: Option<usize>,
    /// Online recomputations of the constraint horizon.
    pub horizon_recomputations: usize,
    /// Steps whose measured disturbance fell outside the conservative set.
    pub mismatches: Vec<usize>,
    pub initial_offsets: Vec<f64>,
    pub final_offsets: Vec<f64>,
}

/// Record of a closed-loop run.
///
/// Solve times are kept apart from the serialised record, so equal seeds give
/// byte-identical output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub meta: TraceMeta,
    pub steps: Vec<StepRecord>,
    pub x_final: Vec<f64>,
    #[serde(skip)]
    pub solve_times: Vec<Duration>,
}

impl SimTrace {
    pub(crate) fn new(ctl: &MpcController, initial: &LearnedSet, steps: usize) -> Self {
        let meta = TraceMeta {
            mode: format!("{:?}", ctl.mode()).to_lowercase(),
            n_x: ctl.plant().n_x(),
            n_u: ctl.plant().n_u(),
            horizon: ctl.tube().horizon(),
            nu0: ctl.nu(),
            steps_requested: steps,
            initial_offsets: initial.offsets().iter().copied().collect(),
            ..Default::default()
        };
        Self { meta, steps: Vec::with_capacity(steps), x_final: Vec::new(), solve_times: Vec::with_capacity(steps) }
    }

    pub(crate) fn push(&mut self, r: StepRecord, t: Duration) {
        self.steps.push(r);
        self.solve_times.push(t);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Canonical JSON.
    pub fn to_json(&self) -> Result<String, SimError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), SimError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Wide CSV, one row per step.
    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.csv_header(false))?;
        self.write_csv_to(&mut w, None)?;
        w.flush()?;
        Ok(())
    }

    /// Header of the wide CSV; `label` adds a leading controller column.
    pub(crate) fn csv_header(&self, label: bool) -> Vec<String> {
        let n_s = self.steps.first().map_or(0, |s| s.w_hat.len());
        let n_v = self.steps.first().map_or(0, |s| s.offsets.len());
        let mut h: Vec<String> = Vec::new();
        if label {
            h.push("controller".into());
        }
        h.push("k".into());
        h.extend((0..self.meta.n_x).map(|i| format!("x{i}")));
        h.extend((0..self.meta.n_u).map(|i| format!("u{i}")));
        h.extend((0..self.meta.n_x).map(|i| format!("w{i}")));
        h.extend(["feasible", "cost", "nu", "constraint_excess", "covers_truth"].map(String::from));
        h.extend((0..n_s).map(|i| format!("w_hat{i}")));
        h.extend((0..n_v).map(|i| format!("offset{i}")));
        h
    }

    pub(crate) fn write_csv_to<W: std::io::Write>(&self, w: &mut csv::Writer<W>, label: Option<&str>) -> Result<(), SimError> {
        let num = |x: f64| format!("{x:?}");
        let opt = |v: &Option<Vec<f64>>, n: usize| -> Vec<String> {
            match v {
                Some(v) => v.iter().map(|x| num(*x)).collect(),
                None => vec![String::new(); n],
            }
        };
        for s in &self.steps {
            let mut row: Vec<String> = Vec::new();
            if let Some(l) = label {
                row.push(l.to_string());
            }
            row.push(s.k.to_string());
            row.extend(s.x.iter().map(|x| num(*x)));
            row.extend(opt(&s.u, self.meta.n_u));
            row.extend(opt(&s.w, self.meta.n_x));
            row.push(s.feasible().to_string());
            row.push(s.cost.map(num).unwrap_or_default());
            row.push(s.nu.to_string());
            row.push(s.constraint_excess.map(num).unwrap_or_default());
            row.push(s.covers_truth.to_string());
            row.extend(s.w_hat.iter().map(|x| num(*x)));
            row.extend(s.offsets.iter().map(|x| num(*x)));
            w.write_record(&row)?;
        }
        Ok(())
    }
}

/// Aligned traces of several controllers in one long CSV (leading
/// `controller` column).
pub fn write_joint_csv(traces: &[(&str, &SimTrace)], path: &Path) -> Result<(), SimError> {
    let mut w = csv::Writer::from_path(path)?;
    if let Some((_, first)) = traces.iter().find(|(_, t)| !t.is_empty()) {
        w.write_record(first.csv_header(true))?;
    }
    for (label, t) in traces {
        t.write_csv_to(&mut w, Some(label))?;
    }
    w.flush()?;
    Ok(())
}
