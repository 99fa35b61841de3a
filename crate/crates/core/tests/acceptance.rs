//! End-to-end acceptance run on the clamped-rectangle contact benchmark. Prints one PASS/FAIL line
//! per criterion and fails if any hard criterion fails.

use std::sync::Arc;
use std::time::Instant;

use contact_core::adaptive::{run, AdaptiveConfig, RunLog};
use contact_core::estimators::guaranteed_upper_bound;
use contact_core::mesh::{build_rect_mesh, BoundaryTag, Rect};
use contact_core::problem::{constant_field, BenchmarkSpec, ProblemData};
use contact_core::verification::{
    contact_interval, convergence_rate, lift_residual, reference_solution, Enrichment, Reference, ReferenceConfig,
};

const INTERVAL: (f64, f64) = (0.279, 0.447);
const ADAPTIVE_RATES: (f64, f64) = (0.450, 0.449);
const UNIFORM_RATES: (f64, f64) = (0.309, 0.255);
const RATE_TOL: f64 = 0.08;
const INTERVAL_TOL: f64 = 0.03;
const RUNTIME_LIMIT_S: f64 = 30.0 * 60.0;

struct Verdicts {
    hard_failures: Vec<usize>,
}

impl Verdicts {
    fn report(&mut self, id: usize, ok: bool, soft: bool, detail: String) {
        let tag = match (ok, soft) {
            (true, _) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "FAIL (soft)",
        };
        println!("criterion {id}: {tag}: {detail}");
        if !ok && !soft {
            self.hard_failures.push(id);
        }
    }
}

fn rates(log: &RunLog) -> (f64, f64) {
    let dofs: Vec<usize> = log.steps.iter().map(|s| s.n_dofs).collect();
    let h1: Vec<f64> = log.steps.iter().map(|s| s.errors.unwrap().norms.h1).collect();
    let en: Vec<f64> = log.steps.iter().map(|s| s.errors.unwrap().norms.energy).collect();
    (convergence_rate(&dofs, &h1).unwrap(), convergence_rate(&dofs, &en).unwrap())
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

#[test]
fn acceptance() {
    let spec = BenchmarkSpec::default();
    let data = spec.data().unwrap();
    let adaptive_cfg = AdaptiveConfig { evenness_ratio: None, max_steps: 11, ..Default::default() };
    let uniform_cfg = AdaptiveConfig { evenness_ratio: None, marking_fraction: 1.0, max_steps: 3, ..Default::default() };
    let mut v = Verdicts { hard_failures: Vec::new() };

    // Criterion 3's timed pipeline runs on one thread: reference, both runs, interval and rates.
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let clock = Instant::now();
    let mut lifts: Vec<(usize, usize, f64, f64)> = Vec::new();
    let (reference, interval, adaptive, uniform) = serial.install(|| {
        let field = reference_solution(&spec, &ReferenceConfig { h: 0.02, ..Default::default() }).unwrap();
        let interval = contact_interval(&field, &data, 100.0);
        let reference = Reference::new(field);
        let adaptive = run(spec.mesh().unwrap(), &data, &adaptive_cfg, Some(&reference), |_| {}).unwrap();
        let uniform = run(spec.mesh().unwrap(), &data, &uniform_cfg, Some(&reference), |_| {}).unwrap();
        (reference, interval, adaptive, uniform)
    });
    let seconds = clock.elapsed().as_secs_f64();
    println!("reference: {} elements; pipeline {seconds:.1} s", reference.field.mesh().n_elements());

    // 1: the lifted residual stays below the guaranteed bound at every round-end state.
    let again = run(spec.mesh().unwrap(), &data, &adaptive_cfg, None, |s| {
        let z = lift_residual(s.solution, s.data, s.gamma0, Enrichment::UniformRefinement).unwrap().norm;
        lifts.push((s.step, s.round, z, guaranteed_upper_bound(s.report)));
    })
    .unwrap();
    assert_eq!(again.steps.len(), adaptive.steps.len());
    let worst = lifts.iter().map(|&(_, _, z, b)| z / b).fold(0.0, f64::max);
    v.report(
        1,
        lifts.iter().all(|&(_, _, z, b)| z <= b),
        false,
        format!("{} states, max lifted/bound = {worst:.4}", lifts.len()),
    );

    // 2: equilibration audits on the initial mesh and the first refined mesh.
    let audits: Vec<f64> = adaptive.steps[..2].iter().map(|s| s.audit.worst()).collect();
    v.report(2, audits.iter().all(|&a| a < 1e-9), false, format!("worst relative audit per mesh {:.2e} / {:.2e}", audits[0], audits[1]));

    // 3: reference contact interval, convergence rates, runtime.
    let (ar, ur) = (rates(&adaptive), rates(&uniform));
    let interval_ok = interval.is_some_and(|(a, b)| within(a, INTERVAL.0, INTERVAL_TOL) && within(b, INTERVAL.1, INTERVAL_TOL));
    let checks = [
        ("interval", interval_ok),
        ("adaptive H1", within(ar.0, ADAPTIVE_RATES.0, RATE_TOL)),
        ("adaptive energy", within(ar.1, ADAPTIVE_RATES.1, RATE_TOL)),
        ("uniform H1", within(ur.0, UNIFORM_RATES.0, RATE_TOL)),
        ("uniform energy", within(ur.1, UNIFORM_RATES.1, RATE_TOL)),
        ("runtime", seconds <= RUNTIME_LIMIT_S),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    v.report(
        3,
        failed.is_empty(),
        false,
        format!(
            "interval {interval:.4?}, adaptive rates ({:.3}, {:.3}), uniform rates ({:.3}, {:.3}), {seconds:.0} s; failing: {failed:?}",
            ar.0, ar.1, ur.0, ur.1
        ),
    );

    // 4: guaranteed effectivity indices on every step of both runs.
    let idx: Vec<(f64, f64)> = adaptive
        .steps
        .iter()
        .chain(&uniform.steps)
        .map(|s| {
            let d = s.errors.unwrap().diagnostics;
            (d.i_eff_low, d.i_eff_up)
        })
        .collect();
    let lo = idx.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let up = idx.iter().map(|p| p.1).fold(0.0, f64::max);
    v.report(4, lo > 1.0 && up < 1.0, false, format!("min I_eff_low = {lo:.3}, max I_eff_up = {up:.3}"));

    // 5: regularization and Newton counts.
    let first = &adaptive.steps[0];
    let later_zero = adaptive.steps[1..].iter().filter(|s| s.n_reg == 0).count();
    let ok5 = within(first.n_reg as f64, 7.0, 0.3 * 7.0) && within(first.n_lin as f64, 26.0, 0.3 * 26.0) && later_zero >= 8;
    v.report(
        5,
        ok5,
        true,
        format!(
            "initial N_reg = {}, N_lin = {} (rounds {:?}), N_reg = 0 on {later_zero} of {} later steps; \
             divergent knob: initial mesh and Newton start",
            first.n_reg,
            first.n_lin,
            first.newton_per_round,
            adaptive.steps.len() - 1
        ),
    );

    // 6: a linear displacement on a clamped square is reproduced exactly.
    let exact = |x: [f64; 2]| [0.01 * x[0] + 0.02 * x[1] + 0.003, -0.015 * x[0] + 0.005 * x[1]];
    let square = build_rect_mesh(4, 4, Rect::new(0.0, 1.0, 0.0, 1.0), |_| BoundaryTag::Dirichlet).unwrap();
    let lin_data = ProblemData::new(data.coeff, constant_field([0.0, 0.0]), constant_field([0.0, 0.0])).with_dirichlet(Arc::new(exact));
    let lin = run(square, &lin_data, &AdaptiveConfig { max_steps: 0, ..Default::default() }, None, |_| {}).unwrap();
    let s = &lin.steps[0];
    let est = s.report.global.values().into_iter().fold(0.0, f64::max);
    let lift = lift_residual(&s.solution, &lin_data, 100.0, Enrichment::UniformRefinement).unwrap().norm;
    v.report(6, est < 1e-9 && lift < 1e-9, false, format!("max estimator {est:.2e}, lifted norm {lift:.2e}"));

    // 7: local estimators even out under adaptivity and not under uniform refinement.
    let ratio = |log: &RunLog| log.steps.last().unwrap().spread / log.steps[0].spread;
    let (ra, ru) = (ratio(&adaptive), ratio(&uniform));
    v.report(
        7,
        ra <= 0.25 && ru >= 0.6,
        false,
        format!(
            "adaptive spread {:.2} -> {:.2} ({:.0}%), uniform {:.2} -> {:.2} ({:.0}%)",
            adaptive.steps[0].spread,
            adaptive.steps.last().unwrap().spread,
            100.0 * ra,
            uniform.steps[0].spread,
            uniform.steps.last().unwrap().spread,
            100.0 * ru
        ),
    );

    assert!(v.hard_failures.is_empty(), "failing criteria: {:?}", v.hard_failures);
}
