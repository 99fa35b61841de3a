use contact_core::adaptive::{mark, run, spread, stop_newton, stop_regularization, AdaptiveConfig, StoppingMode};
use contact_core::estimators::{EstimatorReport, LocalEstimators};
use contact_core::problem::{constant_field, BenchmarkSpec, ProblemData};

fn single(l: LocalEstimators) -> EstimatorReport {
    EstimatorReport::from_locals(vec![l])
}

#[test]
fn newton_rule_compares_linearization_with_discretization() {
    let cfg = AdaptiveConfig::default();
    // osc + str + neu + cnt = 1, γ_lin = 0.08
    let base = LocalEstimators { osc: 0.1, str: 0.5, neu: 0.15, cnt: 0.25, ..Default::default() };
    assert!(!stop_newton(&single(LocalEstimators { lin1: 0.1, ..base }), &cfg));
    assert!(stop_newton(&single(LocalEstimators { lin1: 0.0, ..base }), &cfg));
    assert!(stop_newton(&single(LocalEstimators { lin1: 0.05, lin2: 0.02, ..base }), &cfg));
    assert!(!stop_newton(&single(LocalEstimators { lin1: 0.05, lin2: 0.04, ..base }), &cfg));
}

#[test]
fn regularization_rule_includes_linearization_on_the_right() {
    let cfg = AdaptiveConfig::default();
    let base = LocalEstimators { str: 1.0, ..Default::default() };
    assert!(!stop_regularization(&single(LocalEstimators { reg1: 0.05, ..base }), &cfg));
    assert!(stop_regularization(&single(LocalEstimators { reg1: 0.03, ..base }), &cfg));
    // η_lin enlarges the admissible regularization error: 0.05 ≤ 0.04 · 1.25
    assert!(stop_regularization(&single(LocalEstimators { reg1: 0.05, lin1: 0.25, ..base }), &cfg));
}

#[test]
fn local_mode_requires_every_element() {
    let cfg = AdaptiveConfig { mode: StoppingMode::Local { gamma_reg: 0.04, gamma_lin: 0.08 }, ..Default::default() };
    let good = LocalEstimators { str: 1.0, lin1: 0.01, reg1: 0.01, ..Default::default() };
    let bad = LocalEstimators { str: 0.01, lin1: 0.01, reg1: 0.01, ..Default::default() };
    let mut locals = vec![good; 20];
    assert!(stop_newton(&EstimatorReport::from_locals(locals.clone()), &cfg));
    assert!(stop_regularization(&EstimatorReport::from_locals(locals.clone()), &cfg));
    locals[7] = bad;
    let report = EstimatorReport::from_locals(locals);
    assert!(!stop_newton(&report, &cfg));
    assert!(!stop_regularization(&report, &cfg));
    // the global sums still pass
    assert!(stop_newton(&report, &AdaptiveConfig::default()));
}

#[test]
fn marking_takes_the_largest_fraction() {
    assert_eq!(mark(&[3.0, 1.0, 2.0], 1.0), vec![0, 1, 2]);
    let values: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
    let m = mark(&values, 0.06);
    assert_eq!(m.len(), 6);
    assert!(m.iter().all(|&i| values[i] >= 94.0));
    assert_eq!(mark(&[1.0; 10], 0.25), vec![0, 1, 2]);
    assert_eq!(mark(&[1.0, 5.0, 5.0, 5.0], 0.5), vec![1, 2]);
    assert_eq!(mark(&[1.0, 2.0], 0.01), vec![1]);
}

#[test]
fn spread_is_max_over_median() {
    assert_eq!(spread(&[1.0, 2.0, 6.0]), 3.0);
    assert_eq!(spread(&[1.0, 2.0, 4.0, 10.0]), 10.0 / 3.0);
    assert_eq!(spread(&[0.0, 0.0]), 1.0);
    assert_eq!(spread(&[0.0, 0.0, 1.0]), f64::INFINITY);
}

#[test]
fn config_validation_rejects_out_of_range_values() {
    assert!(AdaptiveConfig::default().validate().is_ok());
    for cfg in [
        AdaptiveConfig { gamma_reg: 1.0, ..Default::default() },
        AdaptiveConfig { gamma_lin: 0.0, ..Default::default() },
        AdaptiveConfig { marking_fraction: 0.0, ..Default::default() },
        AdaptiveConfig { delta_shrink: 1.0, ..Default::default() },
        AdaptiveConfig { delta_init: -1.0, ..Default::default() },
        AdaptiveConfig { evenness_ratio: Some(0.5), ..Default::default() },
        AdaptiveConfig { mode: StoppingMode::Local { gamma_reg: 2.0, gamma_lin: 0.1 }, ..Default::default() },
    ] {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
}

#[test]
fn zero_loads_stop_at_the_initial_mesh() {
    let spec = BenchmarkSpec::default();
    let coeff = spec.data().unwrap().coeff;
    let zero = constant_field([0.0, 0.0]);
    let data = ProblemData::new(coeff, zero.clone(), zero);
    let cfg = AdaptiveConfig { evenness_ratio: None, ..Default::default() };
    let log = run(spec.mesh().unwrap(), &data, &cfg, None, |_| {}).unwrap();
    assert_eq!(log.steps.len(), 1);
    let s = &log.steps[0];
    // The smoothed projection is nonzero at the origin, so only shrinking δ removes the
    // spurious contact force; the rounds continue until it reaches round-off.
    assert!(s.report.global.tot < 1e-12, "{:?}", s.report.global);
    assert!(s.solution.coeffs.iter().all(|c| c.abs() < 1e-12));
    assert!(s.marked.is_empty());
}

#[test]
fn delta_persists_across_meshes_and_rounds_are_observed() {
    let spec = BenchmarkSpec::default();
    let cfg = AdaptiveConfig { max_steps: 3, evenness_ratio: None, ..Default::default() };
    let mut seen = Vec::new();
    let log = run(spec.mesh().unwrap(), &spec.data().unwrap(), &cfg, None, |s| {
        seen.push((s.step, s.round, s.delta, s.newton_iterations))
    })
    .unwrap();
    assert_eq!(log.steps.len(), 4);
    let rounds: usize = log.steps.iter().map(|s| s.n_reg + 1).sum();
    assert_eq!(seen.len(), rounds);
    for w in log.steps.windows(2) {
        assert!(w[1].n_elements > w[0].n_elements);
        // the next mesh starts from the δ the previous one ended with
        let first = seen.iter().find(|s| s.0 == w[1].step).unwrap();
        assert_eq!(first.2, w[0].delta);
        assert!(w[1].delta <= w[0].delta);
    }
    for s in &log.steps {
        assert_eq!(s.n_lin, s.newton_per_round.iter().sum::<usize>());
        let deltas: Vec<f64> = seen.iter().filter(|r| r.0 == s.step).map(|r| r.2).collect();
        assert_eq!(*deltas.last().unwrap(), s.delta);
        for w in deltas.windows(2) {
            assert_eq!(w[1], 0.5 * w[0]);
        }
        assert!(s.bound >= s.report.global.tot);
        assert_eq!(s.marked.is_empty(), s.step == 3);
    }
    let csv = log.to_csv();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("step,"));
}

#[test]
fn evenness_rule_can_end_the_run_early() {
    let spec = BenchmarkSpec::default();
    let cfg = AdaptiveConfig { max_steps: 30, evenness_ratio: Some(1e6), ..Default::default() };
    let log = run(spec.mesh().unwrap(), &spec.data().unwrap(), &cfg, None, |_| {}).unwrap();
    assert_eq!(log.steps.len(), 1);
}

#[test]
fn refinement_concentrates_at_the_singular_points() {
    let spec = BenchmarkSpec::default();
    let cfg = AdaptiveConfig { max_steps: 11, evenness_ratio: None, ..Default::default() };
    let log = run(spec.mesh().unwrap(), &spec.data().unwrap(), &cfg, None, |_| {}).unwrap();
    let mesh = &log.steps.last().unwrap().mesh;
    let diam: Vec<f64> = (0..mesh.n_elements()).map(|t| mesh.diameter(t)).collect();
    let coarsest = diam.iter().copied().fold(0.0, f64::max);
    // the finest element sits at an end of the clamp, and both ends are strongly graded
    let finest = (0..mesh.n_elements()).min_by(|&a, &b| diam[a].total_cmp(&diam[b])).unwrap();
    let ends = [[-1.0, 0.0], [0.0, 0.0]];
    let c = mesh.centroid(finest);
    assert!(ends.iter().any(|p| (c[0] - p[0]).hypot(c[1] - p[1]) < 0.01), "finest at {c:?}");
    for p in ends {
        let local = (0..mesh.n_elements())
            .filter(|&t| mesh.triangle_points(t).contains(&p))
            .map(|t| diam[t])
            .fold(f64::INFINITY, f64::min);
        assert!(local < 0.1 * coarsest, "{p:?}: {local} vs {coarsest}");
    }
}
