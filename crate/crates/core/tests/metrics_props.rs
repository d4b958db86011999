use axiovol::env::{EpisodeRecord, StepRecord};
use axiovol::frontier::{pareto_frontier, Coords, FrontierPoint};
use axiovol::metrics::{compute_gfi, compute_metrics, var_cvar, GfiConfig, MetricsReport, PenaltyKind};
use axiovol::Regime;
use proptest::prelude::*;

/// Independent quantile oracle: lower order statistic by counting, tail mean by filtering.
fn oracle(values: &[f64], alpha: f64) -> (f64, f64) {
    let n = values.len();
    let rank = ((alpha * n as f64).ceil() as usize).max(1);
    let var = *values
        .iter()
        .find(|&&v| {
            let below = values.iter().filter(|&&x| x < v).count();
            let at_most = values.iter().filter(|&&x| x <= v).count();
            below < rank && rank <= at_most
        })
        .unwrap();
    let tail: Vec<f64> = values.iter().copied().filter(|&x| x <= var).collect();
    (var, tail.iter().sum::<f64>() / tail.len() as f64)
}

fn brute_force_dominated(points: &[[f64; 5]]) -> Vec<bool> {
    points
        .iter()
        .map(|p| {
            points.iter().any(|q| {
                let better = [q[0] <= p[0], q[1] <= p[1], q[2] >= p[2], q[3] >= p[3], q[4] >= p[4]];
                let strict = [q[0] < p[0], q[1] < p[1], q[2] > p[2], q[3] > p[3], q[4] > p[4]];
                better.iter().all(|&b| b) && strict.iter().any(|&s| s)
            })
        })
        .collect()
}

fn to_points(raw: &[[f64; 5]]) -> Vec<FrontierPoint> {
    raw.iter()
        .enumerate()
        .map(|(i, c)| {
            FrontierPoint::new(
                format!("p{i}"),
                None,
                Coords {
                    mean_law_pen: c[0],
                    gfi: c[1],
                    mean_pnl: c[2],
                    var5: c[3],
                    cvar5: c[4],
                },
            )
        })
        .collect()
}

fn step(pnl: f64, pen: f64) -> StepRecord {
    StepRecord {
        w_pred: None,
        action: vec![0.0],
        pnl,
        law_pen: pen,
        law_pen_exact: pen,
        reward: pnl,
        r_on_manifold: pnl,
        r_ghost: 0.0,
    }
}

fn episode(steps: Vec<StepRecord>) -> EpisodeRecord {
    EpisodeRecord {
        steps,
        init_window: vec![],
        seed: 0,
        regime: Regime::Baseline,
    }
}

/// Small coarse values so ties are frequent.
fn coarse() -> impl Strategy<Value = f64> {
    (-6i32..=6).prop_map(|k| k as f64 * 0.25)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn var_cvar_matches_oracle(values in prop::collection::vec(prop_oneof![coarse(), -1e3f64..1e3], 1..300)) {
        let (var, cvar) = var_cvar(&values, 0.05).unwrap();
        let (ov, oc) = oracle(&values, 0.05);
        prop_assert_eq!(var, ov);
        prop_assert!((cvar - oc).abs() <= 1e-12 * oc.abs().max(1.0));
        prop_assert!(cvar <= var);
    }

    #[test]
    fn frontier_matches_brute_force(raw in prop::collection::vec(prop::array::uniform5(coarse()), 1..25)) {
        let marked = pareto_frontier(&to_points(&raw)).unwrap();
        let expected = brute_force_dominated(&raw);
        prop_assert_eq!(marked.iter().map(|p| p.dominated).collect::<Vec<_>>(), expected);
    }

    #[test]
    fn frontier_ignores_monotone_rescaling(raw in prop::collection::vec(prop::array::uniform5(coarse()), 1..25)) {
        let warped: Vec<[f64; 5]> = raw
            .iter()
            .map(|c| [c[0].exp(), 3.0 * c[1] - 7.0, c[2].powi(3), c[3].atan(), (c[4] + 10.0).ln()])
            .collect();
        let a = pareto_frontier(&to_points(&raw)).unwrap();
        let b = pareto_frontier(&to_points(&warped)).unwrap();
        prop_assert_eq!(
            a.iter().map(|p| p.dominated).collect::<Vec<_>>(),
            b.iter().map(|p| p.dominated).collect::<Vec<_>>()
        );
    }

    #[test]
    fn metrics_are_permutation_invariant(
        eps in prop::collection::vec(prop::collection::vec((coarse(), 0.0f64..0.01), 4), 1..8),
        rot in 0usize..32,
    ) {
        let episodes: Vec<EpisodeRecord> = eps
            .iter()
            .map(|e| episode(e.iter().map(|&(p, q)| step(p, q)).collect()))
            .collect();
        // Reverse the steps inside every episode and rotate the episode order.
        let mut shuffled: Vec<EpisodeRecord> = eps
            .iter()
            .map(|e| episode(e.iter().rev().map(|&(p, q)| step(p, q)).collect()))
            .collect();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        let th = [0.003, 0.006];
        let a = compute_metrics("x", Regime::Baseline, &episodes, &th, PenaltyKind::Exact).unwrap();
        let b = compute_metrics("x", Regime::Baseline, &shuffled, &th, PenaltyKind::Exact).unwrap();
        prop_assert_eq!(a.var5, b.var5);
        prop_assert_eq!(&a.coverage, &b.coverage);
        for (x, y) in [
            (a.mean_pnl, b.mean_pnl),
            (a.std_pnl, b.std_pnl),
            (a.cvar5, b.cvar5),
            (a.mean_law_pen, b.mean_law_pen),
            (a.max_law_pen, b.max_law_pen),
        ] {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn reference_gfi_is_zero(pb in 0.0f64..0.1, ps in 0.0f64..0.1, intensity in 0.01f64..10.0) {
        let r = |regime, pen| -> MetricsReport {
            compute_metrics("ref", regime, &[episode(vec![step(0.01, pen)])], &[], PenaltyKind::Exact).unwrap()
        };
        let (base, shock) = (r(Regime::Baseline, pb), r(Regime::Shock, ps));
        let g = compute_gfi(&base, &shock, &base, &shock, intensity, &GfiConfig::default()).unwrap();
        prop_assert_eq!(g.gfi, 0.0);
    }
}
