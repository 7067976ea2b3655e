mod common;

use common::{cover_by_rho_grid, polygon_vertices, random_unit_polygon, shoelace, uniform_in};
use homotube::learner::{epsilon_for, fit_initial, required_samples, update, InformationSet, LearnedSet, LearnerOptions, Parameterisation};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Samples clustered in a random sub-box of the polygon, so the optimum is a
/// genuinely shifted and shrunk set.
fn clustered_samples<R: Rng>(w: &homotube::polytope::HPolytope, n: usize, rng: &mut R) -> InformationSet {
    let c = uniform_in(w, rng) * 0.6;
    let r = rng.random_range(0.05..0.4);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = uniform_in(w, rng);
        let s = &c + (&p - &c) * r;
        if w.contains_point(&s, 0.0) {
            out.push(s);
        }
    }
    InformationSet::from_samples(out)
}

fn lower_of(w: &homotube::polytope::HPolytope, i0: &InformationSet) -> DVector<f64> {
    let mut lower = DVector::from_element(w.num_facets(), f64::NEG_INFINITY);
    for s in i0.samples() {
        lower = lower.sup(&(w.normals() * s));
    }
    lower
}

#[test]
fn heterogeneous_fit_matches_rho_grid() {
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    for k in 0..40 {
        let m = [4, 6, 8][k % 3];
        let w = random_unit_polygon(m, &mut rng);
        let n = rng.random_range(5..=50);
        let i0 = clustered_samples(&w, n, &mut rng);
        let fit = fit_initial(&w, &i0, &LearnerOptions::default()).unwrap();
        let oracle = cover_by_rho_grid(w.normals(), &lower_of(&w, &i0), false);
        assert!((fit.objective - oracle).abs() <= 1e-4, "instance {k}: LP {} oracle {oracle}", fit.objective);
        assert!((fit.set.objective() - fit.objective).abs() <= 1e-7);
    }
}

#[test]
fn uniform_fit_matches_rho_grid() {
    let mut rng = ChaCha20Rng::seed_from_u64(22);
    let opts = LearnerOptions { parameterisation: Parameterisation::Uniform, ..LearnerOptions::default() };
    for k in 0..30 {
        let w = random_unit_polygon(6, &mut rng);
        let i0 = clustered_samples(&w, 20, &mut rng);
        let fit = fit_initial(&w, &i0, &opts).unwrap();
        let oracle = cover_by_rho_grid(w.normals(), &lower_of(&w, &i0), true);
        assert!((fit.objective - oracle).abs() <= 1e-4, "instance {k}: LP {} oracle {oracle}", fit.objective);
        assert!(fit.set.theta().iter().all(|&t| (t - fit.set.rho()).abs() < 1e-9));
    }
}

#[test]
fn fitted_set_covers_every_sample() {
    let mut rng = ChaCha20Rng::seed_from_u64(23);
    for _ in 0..30 {
        let w = random_unit_polygon(6, &mut rng);
        let i0 = clustered_samples(&w, 30, &mut rng);
        let fit = fit_initial(&w, &i0, &LearnerOptions::default()).unwrap();
        assert!(i0.samples().iter().all(|s| fit.set.covers(s, 1e-8)));
    }
}

#[test]
fn sample_bound_matches_closed_form() {
    let e = std::f64::consts::E;
    for (n, d, nx, nv) in [(100, 0.05, 2, 6), (250, 0.01, 3, 8), (40, 0.2, 1, 2)] {
        let expect = e / (e - 1.0) * (nx as f64 + nv as f64 + (1.0f64 / d).ln()) / n as f64;
        assert!((epsilon_for(n, d, nx, nv).unwrap() - expect).abs() < 1e-15);
    }
    // The required count is the smallest integer whose epsilon is at most the target.
    for eps in [0.3, 0.1, 0.05, 0.013] {
        let n = required_samples(eps, 0.05, 2, 6).unwrap().required_samples;
        assert!(epsilon_for(n, 0.05, 2, 6).unwrap() <= eps);
        assert!(epsilon_for(n - 1, 0.05, 2, 6).unwrap() > eps);
    }
}

fn random_params<R: Rng>(m: usize, w: &homotube::polytope::HPolytope, rng: &mut R) -> (DVector<f64>, DVector<f64>, f64) {
    let v = uniform_in(w, rng);
    let rho = rng.random_range(0.0..=1.0);
    let theta = DVector::from_fn(m, |_, _| rng.random_range(0.0..=rho));
    (v, theta, rho)
}

#[test]
fn learned_set_lies_in_w_with_area_between_scaled_copies() {
    let mut rng = ChaCha20Rng::seed_from_u64(24);
    for _ in 0..300 {
        let m = [4, 6, 8][rng.random_range(0..3)];
        let w = random_unit_polygon(m, &mut rng);
        let (v, theta, rho) = random_params(m, &w, &mut rng);
        let ls = LearnedSet::new(w.clone(), v, theta.clone(), rho).unwrap();
        let real = ls.realise();
        let verts = polygon_vertices(&real);
        assert!(verts.iter().all(|p| w.contains_point(&DVector::from_vec(p.to_vec()), 1e-9)));
        let area = shoelace(&verts);
        let aw = shoelace(&polygon_vertices(&w));
        let (tmin, tmax) = (theta.min(), theta.max());
        assert!(area >= tmin * tmin * aw * (1.0 - 1e-9) - 1e-15, "{area} < {}", tmin * tmin * aw);
        assert!(area <= tmax * tmax * aw * (1.0 + 1e-9) + 1e-15, "{area} > {}", tmax * tmax * aw);
        assert!((real.area_2d().unwrap() - area).abs() <= 1e-9 * aw);
    }
}

fn sample_set(w: &homotube::polytope::HPolytope, seed: u64, n: usize) -> Vec<DVector<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n).map(|_| uniform_in(w, &mut rng)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn updates_are_nested_and_cover_the_new_sample(seed in 0u64..10_000, m in 4usize..9, n0 in 1usize..20, k in 1usize..25) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let w = random_unit_polygon(m, &mut rng);
        let xs = sample_set(&w, seed ^ 0xabc, n0 + k);
        let mut set = fit_initial(&w, &InformationSet::from_samples(xs[..n0].to_vec()), &LearnerOptions::default()).unwrap().set;
        for s in &xs[n0..] {
            let next = update(&set, s, &LearnerOptions::default()).unwrap().set;
            let grew = next.offsets() - set.offsets();
            prop_assert!(grew.min() >= -1e-8, "offsets shrank by {}", grew.min());
            prop_assert!(next.covers(s, 1e-8));
            prop_assert!(next.realise().contains(&set.realise()).unwrap() || set.is_degenerate().unwrap());
            set = next;
        }
    }

    #[test]
    fn covered_sample_leaves_the_set_unchanged(seed in 0u64..10_000) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let w = random_unit_polygon(6, &mut rng);
        let xs = sample_set(&w, seed, 15);
        let set = fit_initial(&w, &InformationSet::from_samples(xs.clone()), &LearnerOptions::default()).unwrap().set;
        let next = update(&set, &xs[3], &LearnerOptions::default()).unwrap().set;
        prop_assert!((next.offsets() - set.offsets()).amax() <= 1e-8);
    }

    #[test]
    fn fitting_is_deterministic(seed in 0u64..10_000) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let w = random_unit_polygon(6, &mut rng);
        let i0 = InformationSet::from_samples(sample_set(&w, seed, 25));
        let a = fit_initial(&w, &i0, &LearnerOptions::default()).unwrap().set;
        let b = fit_initial(&w, &i0, &LearnerOptions::default()).unwrap().set;
        prop_assert_eq!(a.params(), b.params());
    }
}

#[test]
fn conservative_set_is_w_itself() {
    let w = homotube::sim::platooning::default_w();
    let ls = LearnedSet::conservative(w.clone()).unwrap();
    assert_eq!(ls.offsets(), DVector::from_element(6, 1.0));
    assert_eq!(ls.realise().normals(), w.normals());
}
