mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::oracle::{hover_guess, inactive_instance, random_leader, tight};
use quadform::ocp::{TrajectoryPlan, Transcription};
use quadform::solver::{solve, SolverConfig, StepMetric};

#[test]
fn convex_leader_matches_dense_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for nodes in [41, 51, 61, 81, 101] {
        let (p, oracle) = inactive_instance(&mut rng, nodes);
        let report = solve(&p, &tight(), &hover_guess(&p)).unwrap();
        assert!(report.converged, "{nodes} nodes: {report:?}");
        let rel = (report.final_objective - oracle).abs() / oracle.abs();
        assert!(
            rel <= 1e-6,
            "{nodes} nodes: solver {} oracle {oracle} rel {rel:e}",
            report.final_objective
        );
    }
}

#[test]
fn both_metrics_reach_the_default_tolerances() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (p, oracle) = inactive_instance(&mut rng, 31);
    for step_metric in [StepMetric::Newton, StepMetric::Diagonal] {
        let cfg = SolverConfig {
            step_metric,
            ..SolverConfig::default()
        };
        let r = solve(&p, &cfg, &hover_guess(&p)).unwrap();
        assert!(r.converged, "{step_metric:?}");
        assert!(r.final_gradient_norm <= cfg.gradient_tolerance && r.max_defect <= cfg.defect_tolerance);
        assert!((r.final_objective - oracle).abs() / oracle < 1e-3, "{step_metric:?}");
    }
}

#[test]
fn defect_never_grows_across_penalty_rounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for nodes in [41, 71, 101] {
        let (p, _) = inactive_instance(&mut rng, nodes);
        for cfg in [SolverConfig::default(), tight()] {
            let report = solve(&p, &cfg, &hover_guess(&p)).unwrap();
            let h = &report.defect_history;
            assert!(h.windows(2).all(|w| w[1] <= w[0]), "{h:?}");
            assert_eq!(h.len(), report.penalty_rounds);
        }
    }
}

#[test]
fn accepted_steps_never_raise_the_merit() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let p = random_leader(&mut rng, 41);
    let tr = Transcription::new(&p).unwrap();
    let base = SolverConfig {
        max_penalty_rounds: 1,
        ..SolverConfig::default()
    };
    let rho = base.defect_penalty_initial;
    let merit = |plan: &TrajectoryPlan| {
        let z = plan.to_flat();
        tr.objective(&z) + rho * tr.defects(&z).iter().map(|c| c * c).sum::<f64>()
    };
    let mut previous = f64::INFINITY;
    for k in 1..60 {
        let cfg = SolverConfig {
            max_iterations: k,
            ..base.clone()
        };
        let r = solve(&p, &cfg, &hover_guess(&p)).unwrap();
        let v = merit(&r.plan);
        assert!(v <= previous, "iteration {k}: {v} after {previous}");
        previous = v;
    }
}
