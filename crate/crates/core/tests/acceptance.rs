//! End-to-end acceptance checks on the default platooning instance.
//!
//! Prints one `PASS`/`FAIL` line per criterion and exits non-zero if any
//! criterion fails.

mod common;

use std::time::{Duration, Instant};

use homotube::experiment::{boundary_point, scan_regions, ExperimentConfig};
use homotube::learner::{epsilon_for, fit_initial, required_samples, violation_rate, InformationSet, LearnedSet, LearnerOptions};
use homotube::mpc::{compute_horizon, horizon_test, tail_excess, HorizonPolicy, HorizonSpec};
use homotube::polytope::SupportVector;
use homotube::sim::{all_feasible, run_seed, streams, ControllerKind, RegionGrid, RunOptions, Scenario, SimTrace};
use homotube::solver::{LpSolver, QpSolver, Status};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

type Outcome = (bool, String);

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, n: usize, name: &str, (ok, detail): Outcome, t: Instant) {
        self.line_timed(n, name, (ok, detail), t.elapsed());
    }

    fn line_timed(&mut self, n: usize, name: &str, (ok, detail): Outcome, took: Duration) {
        if !ok {
            self.failed += 1;
        }
        println!("criterion {n:>2} {} {name}: {detail} [{:.1} s]", if ok { "PASS" } else { "FAIL" }, took.as_secs_f64());
    }
}

fn epsilon_table() -> Outcome {
    let want = ["0.1739", "0.0174", "0.0017"];
    let t = Instant::now();
    let got: Vec<String> = [100, 1000, 10000].iter().map(|&n| format!("{:.4}", epsilon_for(n, 0.05, 2, 6).unwrap())).collect();
    let fast = t.elapsed().as_secs_f64() < 1e-3;
    (got == want && fast, format!("{} (want {})", got.join(" "), want.join(" ")))
}

fn fit_equivalence() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let m = [4, 6, 8][k % 3];
        let w = common::random_unit_polygon(m, &mut rng);
        let n = rng.random_range(5..=50);
        // Samples from a shrunk, shifted copy of W.
        let c = common::uniform_in(&w, &mut rng) * 0.5;
        let r = rng.random_range(0.05..0.6);
        let samples: Vec<DVector<f64>> = (0..n).map(|_| &c + (common::uniform_in(&w, &mut rng) - &c) * r).collect();
        let i0 = InformationSet::from_samples(samples);
        let fit = fit_initial(&w, &i0, &LearnerOptions::default()).unwrap();
        let mut lower = DVector::from_element(m, f64::NEG_INFINITY);
        for s in i0.samples() {
            lower = lower.sup(&(w.normals() * s));
        }
        let oracle = common::cover_by_rho_grid(w.normals(), &lower, false);
        worst = worst.max((fit.objective - oracle).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    (worst <= 1e-4 && secs < 30.0, format!("50 instances, largest |LP - grid| = {worst:.2e}, {secs:.2} s"))
}

fn learned_set_geometry() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let (mut contained, mut sandwiched, mut worst_rel) = (0, 0, 0.0f64);
    for _ in 0..1000 {
        let m = [4, 6, 8][rng.random_range(0..3)];
        let w = common::random_unit_polygon(m, &mut rng);
        let v = common::uniform_in(&w, &mut rng);
        let rho: f64 = rng.random_range(0.0..=1.0);
        let theta = DVector::from_fn(m, |_, _| rng.random_range(0.0..=rho));
        let ls = LearnedSet::new(w.clone(), v, theta.clone(), rho).unwrap();
        let real = ls.realise();
        if w.contains(&real).unwrap() {
            contained += 1;
        }
        let area = common::shoelace(&common::polygon_vertices(&real));
        let aw = common::shoelace(&common::polygon_vertices(&w));
        let (lo, hi) = (theta.min().powi(2) * aw, theta.max().powi(2) * aw);
        let rel = ((lo - area).max(area - hi).max(0.0)) / aw;
        worst_rel = worst_rel.max(rel);
        if rel <= 1e-9 {
            sandwiched += 1;
        }
    }
    (contained == 1000 && sandwiched == 1000, format!("contained {contained}/1000, area bounds {sandwiched}/1000 (worst relative excess {worst_rel:.1e})"))
}

fn offsets_le(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| *x <= y + tol)
}

/// Criteria on the batch of closed-loop runs: nesting and coverage (4),
/// persistence once the truth is covered (7), constraint satisfaction (8).
fn closed_loop_batch(sc: &Scenario, traces: &[SimTrace]) -> (Outcome, Outcome, Outcome) {
    let vw = sc.w.normals();
    let (mut nest, mut cover, mut mono) = (0usize, 0usize, 0usize);
    let mut checked = 0usize;
    for t in traces {
        let n = t.steps.len();
        for k in 0..n {
            let next_offsets: &[f64] = if k + 1 < n { &t.steps[k + 1].offsets } else { &t.meta.final_offsets };
            if !offsets_le(&t.steps[k].offsets, next_offsets, 1e-8) {
                nest += 1;
            }
            if let Some(w) = &t.steps[k].w {
                checked += 1;
                let vw_w = vw * DVector::from_vec(w.clone());
                if !offsets_le(vw_w.as_slice(), next_offsets, 1e-8) {
                    cover += 1;
                }
            }
            if k + 1 < n && !offsets_le(&t.steps[k].w_hat, &t.steps[k + 1].w_hat, 1e-8) {
                mono += 1;
            }
        }
    }
    let c4 = (
        nest + cover + mono == 0,
        format!("{} runs, {checked} measured samples: {nest} nesting, {cover} coverage, {mono} monotonicity violations", traces.len()),
    );

    let (mut with_star, mut broken) = (0, 0);
    for t in traces {
        let Some(ks) = t.steps.iter().position(|s| s.covers_truth) else { continue };
        if !t.steps[ks].feasible() {
            continue;
        }
        with_star += 1;
        if t.steps[ks..].iter().any(|s| !s.feasible()) {
            broken += 1;
        }
    }
    let infeasible_runs = traces.iter().filter(|t| !all_feasible(t)).count();
    let c7 = (
        broken == 0,
        format!("{with_star} runs reach coverage of the true support at a feasible step, {broken} become infeasible afterwards ({infeasible_runs} infeasible runs overall)"),
    );

    let mut worst = f64::NEG_INFINITY;
    let mut feasible_runs = 0;
    for t in traces.iter().filter(|t| all_feasible(t)) {
        feasible_runs += 1;
        for s in &t.steps {
            worst = worst.max(s.constraint_excess.unwrap_or(f64::NEG_INFINITY));
        }
    }
    let c8 = (worst <= 1e-6, format!("{feasible_runs} feasible runs, max(Fx + Gu) - 1 = {worst:.2e}"));
    (c4, c7, c8)
}

fn scenario_bound_empirical(sc: &Scenario) -> Outcome {
    let n = required_samples(0.1, 0.05, 2, sc.w.num_facets()).unwrap().required_samples;
    let rates: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|trial| {
            let (mut off, mut fresh) = streams(run_seed(5, trial as usize));
            let i0 = InformationSet::from_samples(sc.truth.sample_many(n, &mut off).unwrap());
            let fit = fit_initial(&sc.w, &i0, &LearnerOptions::default()).unwrap();
            violation_rate(&fit.set, &sc.truth.sample_many(100_000, &mut fresh).unwrap()).unwrap()
        })
        .collect();
    let good = rates.iter().filter(|&&r| r <= 0.1).count();
    let max = rates.iter().cloned().fold(0.0, f64::max);
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    (good >= 190, format!("|I0| = {n}: {good}/200 trials with violation <= 0.1 (mean {mean:.4}, max {max:.4})"))
}

fn horizon_checks(sc: &Scenario, cfg: &ExperimentConfig, trace: &SimTrace) -> Outcome {
    let i0 = cfg.offline_samples(sc).unwrap();
    let mut notes = Vec::new();
    let mut ok = true;
    for kind in [ControllerKind::Conventional, ControllerKind::LearnedHomothetic] {
        let set = sc.initial_learner(kind, &i0).unwrap().current().clone();
        let spec = HorizonSpec::Homothetic(sc.tube.w_max(&set.realise()).unwrap());
        let nu = compute_horizon(&sc.tube, &spec, 200).unwrap();
        let tail = tail_excess(&sc.tube, &spec, nu, 50).unwrap();
        let worst = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let minimal = nu + 1 == sc.tube.horizon() || !horizon_test(&sc.tube, &spec, nu - 1).unwrap();
        ok &= worst <= 1e-7 && minimal;
        notes.push(format!("{} nu = {nu} (tail max {worst:.1e}, minimal {minimal})", kind.label()));
    }
    // ν along the logged bounds: only changes in ŵ can change it.
    let mut seq: Vec<usize> = Vec::new();
    let mut last: Option<&Vec<f64>> = None;
    for s in &trace.steps {
        if last != Some(&s.w_hat) {
            let spec = HorizonSpec::Homothetic(SupportVector(DVector::from_vec(s.w_hat.clone())));
            seq.push(compute_horizon(&sc.tube, &spec, 200).unwrap());
            last = Some(&s.w_hat);
        }
    }
    let non_increasing = seq.windows(2).all(|p| p[1] <= p[0]);
    ok &= non_increasing;
    notes.push(format!("nu_k over {} distinct bounds: {:?}", seq.len(), seq));
    (ok, notes.join("; "))
}

fn region_nesting(grids: &[RegionGrid]) -> Outcome {
    let (conv, rigid, homo) = (&grids[0], &grids[1], &grids[2]);
    let a = conv.not_in(rigid).len();
    let b = rigid.not_in(homo).len();
    let extra = homo.not_in(conv).len();
    (
        a == 0 && b == 0 && extra >= 1,
        format!(
            "{}x{} grid, counts {}/{}/{}, conventional outside rigid {a}, rigid outside homothetic {b}, homothetic extra {extra}",
            conv.xs.len(),
            conv.ys.len(),
            conv.count(),
            rigid.count(),
            homo.count()
        ),
    )
}

fn recomputation_counts(sc: &Scenario, x0: &DVector<f64>, steps: usize) -> Outcome {
    let opts = RunOptions { steps, ..RunOptions::default() };
    let fixed = sc.run(ControllerKind::LearnedHomothetic, x0, 7, &opts).unwrap();
    let reference = sc.run(ControllerKind::LearnedHomothetic, x0, 7, &RunOptions { policy: Some(HorizonPolicy::Recompute), ..opts }).unwrap();
    let rigid = sc.run(ControllerKind::LearnedRigid, x0, 7, &opts).unwrap();
    let (a, b, c) = (fixed.meta.horizon_recomputations, reference.meta.horizon_recomputations, rigid.meta.horizon_recomputations);
    let full = fixed.steps.len() == steps && reference.steps.len() == steps && rigid.steps.len() == steps;
    (
        a == 0 && b == steps && c == steps && full,
        format!("T = {steps}: learned homothetic {a}, recompute reference {b}, learned rigid {c}"),
    )
}

fn solver_oracles() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let (mut lp_bad, mut qp_bad, mut worst) = (0, 0, 0.0f64);
    for _ in 0..100 {
        let lp = common::random_lp(&mut rng);
        let r = LpSolver::default().solve(&lp).unwrap();
        match common::lp_by_vertices(&lp) {
            Some(v) if r.status == Status::Optimal => {
                worst = worst.max((r.objective - v).abs());
                if (r.objective - v).abs() > 1e-6 {
                    lp_bad += 1;
                }
            }
            None if r.status == Status::Infeasible => {}
            _ => lp_bad += 1,
        }
        let qp = common::random_qp(&mut rng);
        let r = QpSolver::default().solve(&qp).unwrap();
        match common::qp_by_active_sets(&qp) {
            Some(v) if r.status == Status::Optimal => {
                worst = worst.max((r.objective - v).abs());
                if (r.objective - v).abs() > 1e-6 {
                    qp_bad += 1;
                }
            }
            None if r.status == Status::Infeasible => {}
            _ => qp_bad += 1,
        }
    }
    (lp_bad + qp_bad == 0, format!("100 LPs ({lp_bad} mismatches), 100 QPs ({qp_bad} mismatches), largest objective error {worst:.1e}"))
}

fn main() {
    let mut rep = Report { failed: 0 };
    let cfg = ExperimentConfig::default();
    let sc = cfg.scenario().expect("default scenario");

    let t = Instant::now();
    rep.line(1, "epsilon table", epsilon_table(), t);
    let t = Instant::now();
    rep.line(2, "fit LP vs rho-grid oracle", fit_equivalence(), t);
    let t = Instant::now();
    rep.line(3, "learned-set containment and area bounds", learned_set_geometry(), t);

    // Region scan first: its boundary supplies the closed-loop initial state.
    let t9 = Instant::now();
    let grids = scan_regions(&cfg, &sc).expect("region scan");
    let t9 = t9.elapsed();
    let x0 = boundary_point(&grids[2], &cfg.region, sc.n_x()).expect("nonempty learned-homothetic region");

    let t = Instant::now();
    let opts = RunOptions { steps: 200, ..RunOptions::default() };
    let traces: Vec<SimTrace> = (0..100)
        .into_par_iter()
        .map(|r| sc.run(ControllerKind::LearnedHomothetic, &x0, run_seed(cfg.seed, r), &opts).expect("closed loop"))
        .collect();
    let (c4, c7, c8) = closed_loop_batch(&sc, &traces);
    let (ok4, d4) = c4;
    rep.line(4, "nesting and coverage", (ok4, format!("x0 = ({:.3}, {:.3}), {d4}", x0[0], x0[1])), t);

    let t = Instant::now();
    rep.line(5, "empirical violation rate", scenario_bound_empirical(&sc), t);
    let t = Instant::now();
    let longest = traces.iter().max_by_key(|t| t.steps.len()).expect("runs");
    rep.line(6, "constraint horizon", horizon_checks(&sc, &cfg, longest), t);
    let t = Instant::now();
    rep.line(7, "feasibility after coverage", c7, t);
    rep.line(8, "closed-loop constraints", c8, t);
    rep.line_timed(9, "region nesting", region_nesting(&grids), t9);
    let t = Instant::now();
    let sim_x0 = DVector::from_column_slice(&cfg.simulation.x0);
    rep.line(10, "horizon recomputations", recomputation_counts(&sc, &sim_x0, 200), t);
    let t = Instant::now();
    rep.line(11, "solver oracles", solver_oracles(), t);

    if rep.failed > 0 {
        println!("{} criteria failed", rep.failed);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
