mod common;

use common::{polygon_vertices, random_unit_polygon, shoelace, uniform_in};
use homotube::linalg::from_rows;
use homotube::polytope::{default_template, invariance_margin, invariant_set, HPolytope, InvariantSetOptions};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn support_by_vertices(p: &HPolytope, d: &DVector<f64>) -> f64 {
    polygon_vertices(p).iter().map(|v| v[0] * d[0] + v[1] * d[1]).fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn support_matches_vertex_enumeration() {
    let mut rng = ChaCha20Rng::seed_from_u64(31);
    for _ in 0..200 {
        let p = random_unit_polygon(rng.random_range(3..10), &mut rng);
        let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let d = DVector::from_vec(vec![ang.cos(), ang.sin()]) * rng.random_range(0.1..3.0);
        let s = p.support_dir(&d).unwrap();
        assert!((s - support_by_vertices(&p, &d)).abs() <= 1e-9 * s.abs().max(1.0));
    }
}

#[test]
fn vertices_and_area_match_brute_force() {
    let mut rng = ChaCha20Rng::seed_from_u64(32);
    for _ in 0..200 {
        let p = random_unit_polygon(rng.random_range(3..10), &mut rng);
        let a = p.area_2d().unwrap();
        assert!((a - shoelace(&polygon_vertices(&p))).abs() <= 1e-10 * a.max(1.0));
        assert_eq!(p.vertices_2d().unwrap().len(), polygon_vertices(&p).len());
    }
}

#[test]
fn area_agrees_with_hit_or_miss_estimate() {
    let mut rng = ChaCha20Rng::seed_from_u64(33);
    let p = random_unit_polygon(7, &mut rng);
    let (lo, hi) = p.bounding_box().unwrap();
    let n = 200_000;
    let hits = (0..n)
        .filter(|_| {
            let x = DVector::from_fn(2, |i, _| rng.random_range(lo[i]..hi[i]));
            p.contains_point(&x, 0.0)
        })
        .count();
    let box_area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    let est = box_area * hits as f64 / n as f64;
    let exact = p.area_2d().unwrap();
    // Five standard errors of a binomial proportion.
    let q = exact / box_area;
    let se = box_area * (q * (1.0 - q) / n as f64).sqrt();
    assert!((est - exact).abs() <= 5.0 * se, "{est} vs {exact}");
}

fn stable_phi<R: Rng>(rng: &mut R) -> DMatrix<f64> {
    loop {
        let m = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.9..0.9));
        if homotube::linalg::spectral_radius(&m) < 0.85 {
            return m;
        }
    }
}

#[test]
fn invariant_set_maps_into_itself_at_every_vertex_pair() {
    let mut rng = ChaCha20Rng::seed_from_u64(34);
    for _ in 0..25 {
        let phi = stable_phi(&mut rng);
        let w = random_unit_polygon(rng.random_range(3..7), &mut rng).scale(0.2);
        let tpl = default_template(w.normals(), &phi, 6);
        let s = invariant_set(&phi, &w, &tpl, &InvariantSetOptions::default()).unwrap();
        // Φ S ⊕ W is the hull of Φ s + w over vertex pairs.
        let sv = polygon_vertices(&s);
        let wv = polygon_vertices(&w);
        for a in &sv {
            let pa = &phi * DVector::from_vec(a.to_vec());
            for b in &wv {
                let x = &pa + DVector::from_vec(b.to_vec());
                assert!(s.contains_point(&x, 1e-7), "{x:?}");
            }
        }
        assert!(invariance_margin(&s, &phi, &w).unwrap() <= 1.0 + 1e-8);
        assert!(s.contains(&w).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn containment_agrees_with_vertices(seed in 0u64..100_000, s in 0.1f64..1.5, dx in -0.5f64..0.5, dy in -0.5f64..0.5) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let outer = random_unit_polygon(6, &mut rng);
        let inner = random_unit_polygon(5, &mut rng).scale(s).translate(&DVector::from_vec(vec![dx, dy])).unwrap();
        let by_vertices = polygon_vertices(&inner).iter().all(|v| outer.contains_point(&DVector::from_vec(v.to_vec()), 1e-9));
        prop_assert_eq!(outer.contains(&inner).unwrap(), by_vertices);
    }

    #[test]
    fn scaling_scales_support(seed in 0u64..100_000, a in 0.0f64..3.0) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let p = random_unit_polygon(6, &mut rng);
        let d = uniform_in(&p, &mut rng);
        prop_assume!(d.norm() > 1e-3);
        let lhs = p.scale(a).support_dir(&d).unwrap();
        prop_assert!((lhs - a * p.support_dir(&d).unwrap()).abs() <= 1e-9);
    }
}

#[test]
fn default_w_is_the_stated_hexagon() {
    let w = homotube::sim::platooning::default_w();
    let box_ = HPolytope::from_bounds(&[-0.03, -0.135], &[0.03, 0.135]).unwrap();
    assert!(box_.contains(&w).unwrap());
    let cut = from_rows(&[&[0.03, 0.135]]);
    assert!(!w.contains_point(&cut.transpose().column(0).into_owned(), 1e-9));
}
