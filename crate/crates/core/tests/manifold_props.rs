mod support;

use std::sync::Arc;

use axiovol::manifold::{LawManifold, TOL_FEAS, TOL_OPT};
use axiovol::{GridPreset, SurfaceGrid, TotalVarianceSurface};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{enumerate_projection, euclid, noisy_surface, uniform_surface, DenseSystem};

fn small_grids() -> Vec<Arc<SurfaceGrid>> {
    vec![
        Arc::new(SurfaceGrid::preset(GridPreset::Tiny)),
        Arc::new(SurfaceGrid::new(vec![1.0], vec![-0.2, -0.1, 0.0, 0.1, 0.2, 0.3]).unwrap()),
        Arc::new(SurfaceGrid::new(vec![0.25, 0.5, 1.0], vec![-0.1, 0.1]).unwrap()),
        Arc::new(SurfaceGrid::new(vec![0.5, 1.0], vec![-0.1, 0.0, 0.1]).unwrap()),
    ]
}

#[test]
fn projection_matches_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for grid in small_grids() {
        let m = LawManifold::build(grid.clone(), 0.01, 0.5).unwrap();
        let sys = DenseSystem::from_dump_json(&serde_json::to_string(&m.to_dump()).unwrap());
        for _ in 0..25 {
            let w = uniform_surface(&grid, &mut rng, -0.1, 0.7);
            let p = m.project(&w).unwrap();
            assert!(p.converged);
            let oracle = enumerate_projection(&sys, w.values());
            assert!(euclid(p.projected.values(), &oracle) <= 1e-8);
        }
    }
}

#[test]
fn projection_is_idempotent_and_feasible() {
    let grid = Arc::new(SurfaceGrid::preset(GridPreset::Default));
    let m = LawManifold::with_default_box(grid.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let w = noisy_surface(&grid, &mut rng, 0.01);
        let p = m.project(&w).unwrap();
        assert!(p.converged && p.kkt_residual <= TOL_OPT);
        assert!(m.is_feasible(&p.projected, TOL_FEAS).unwrap().feasible);
        assert!((p.penalty - 0.5 * p.distance * p.distance).abs() <= 1e-12 * p.penalty.max(1e-300));
        let pp = m.project(&p.projected).unwrap();
        assert!(euclid(pp.projected.values(), p.projected.values()) <= 2.0 * TOL_OPT);
    }
}

#[test]
fn projection_is_non_expansive() {
    let grid = Arc::new(SurfaceGrid::preset(GridPreset::Default));
    let m = LawManifold::with_default_box(grid.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..300 {
        let a = noisy_surface(&grid, &mut rng, 0.02);
        let b = noisy_surface(&grid, &mut rng, 0.02);
        let pa = m.project(&a).unwrap();
        let pb = m.project(&b).unwrap();
        let lhs = euclid(pa.projected.values(), pb.projected.values());
        assert!(lhs <= euclid(a.values(), b.values()) + 10.0 * TOL_OPT);
    }
}

#[test]
fn penalty_is_locally_lipschitz() {
    // |L(w1) − L(w2)| <= 2(2R + c0)‖w1 − w2‖ inside the ball of radius R.
    let grid = Arc::new(SurfaceGrid::preset(GridPreset::Default));
    let m = LawManifold::with_default_box(grid.clone()).unwrap();
    let zero = TotalVarianceSurface::constant(grid.clone(), 0.0);
    let c0 = m.project(&zero).unwrap().projected.values().iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..200 {
        let a = noisy_surface(&grid, &mut rng, 0.03);
        let b = noisy_surface(&grid, &mut rng, 0.03);
        let norm = |s: &TotalVarianceSurface| s.values().iter().map(|x| x * x).sum::<f64>().sqrt();
        let r = norm(&a).max(norm(&b));
        let la = m.law_penalty(&a).unwrap();
        let lb = m.law_penalty(&b).unwrap();
        assert!((la - lb).abs() <= 2.0 * (2.0 * r + c0) * euclid(a.values(), b.values()) + 1e-12);
    }
}

#[test]
fn surrogate_and_exact_penalties_agree_on_zero_set() {
    let grid = Arc::new(SurfaceGrid::preset(GridPreset::Default));
    let m = LawManifold::with_default_box(grid.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for step in 0..300 {
        let noise = if step % 2 == 0 { 0.0 } else { 0.01 };
        let raw = noisy_surface(&grid, &mut rng, noise);
        let w = if step % 3 == 0 { m.project(&raw).unwrap().projected } else { raw };
        let exact = m.law_penalty(&w).unwrap();
        let surrogate = m.surrogate_penalty(&w).unwrap();
        let report = m.is_feasible(&w, 0.0).unwrap();
        if report.feasible {
            assert_eq!(exact, 0.0);
            assert_eq!(surrogate, 0.0);
        }
        assert_eq!(surrogate <= 1e-15, exact <= 1e-15, "zero sets differ at step {step}");
        // max single-row distance <= surrogate <= (#violated) * exact
        let n_viol = m
            .rows()
            .iter()
            .filter(|r| r.eval(w.values()) - r.rhs > 0.0)
            .count()
            + w.values().iter().filter(|x| **x < m.w_min() || **x > m.w_max()).count();
        assert!(surrogate <= n_viol as f64 * exact * (1.0 + 1e-9) + 1e-15);
        // small exact penalty implies near-feasibility: row excess <= ‖a‖·dist
        if exact > 0.0 {
            let slack = (6.0f64 * 2.0 * exact).sqrt();
            assert!(m.is_feasible(&w, slack * (1.0 + 1e-9)).unwrap().feasible);
        }
    }
}
