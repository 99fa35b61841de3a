use std::sync::Arc;

use contact_core::equilibration::{construct_sigma, ContactData, EquilibrationConfig, Equilibrator};
use contact_core::estimators::{
    compute_report, contact_estimator_by_projection, oscillation_by_projection, guaranteed_upper_bound, trace_constant,
    TraceConstants,
};
use contact_core::fem::{DisplacementField, LagrangeSpace};
use contact_core::mesh::{build_rect_mesh, BoundaryTag, Rect};
use contact_core::nitsche::ContactSolver;
use contact_core::problem::{constant_field, BenchmarkSpec, ProblemData};

// Exact generalized eigenvalue computed symbolically for the unit right triangle.
const C_HYPOTENUSE: f64 = 0.7778174593052023;
const C_LEG: f64 = 0.7216197823485977;

fn unit_triangle_faces(scale: f64) -> (contact_core::mesh::TriMesh, usize, usize, usize) {
    let mesh = build_rect_mesh(1, 1, Rect::new(0.0, scale, 0.0, scale), |_| BoundaryTag::Neumann).unwrap();
    let t = (0..2).find(|&t| mesh.triangle_points(t).contains(&[0.0, 0.0])).unwrap();
    let faces = mesh.element_faces(t);
    let leg = *faces.iter().find(|&&f| mesh.face(f).vertices.contains(&0) && mesh.face(f).normal[1] < -0.99).unwrap();
    let hyp = *faces.iter().find(|&&f| (mesh.face(f).length - scale * 2f64.sqrt()).abs() < 1e-12).unwrap();
    (mesh, t, leg, hyp)
}

#[test]
fn trace_constant_matches_symbolic_reference() {
    let (mesh, t, leg, hyp) = unit_triangle_faces(1.0);
    assert!((trace_constant(&mesh, t, hyp).unwrap() - C_HYPOTENUSE).abs() < 1e-8);
    assert!((trace_constant(&mesh, t, leg).unwrap() - C_LEG).abs() < 1e-8);
}

#[test]
fn trace_constant_is_dilation_invariant() {
    for scale in [1e-3, 0.37, 20.0] {
        let (mesh, t, leg, hyp) = unit_triangle_faces(scale);
        assert!((trace_constant(&mesh, t, hyp).unwrap() - C_HYPOTENUSE).abs() < 1e-7);
        assert!((trace_constant(&mesh, t, leg).unwrap() - C_LEG).abs() < 1e-7);
    }
}

#[test]
fn trace_constant_rejects_foreign_face() {
    let (mesh, t, _, _) = unit_triangle_faces(1.0);
    let other = (0..mesh.n_faces()).find(|f| !mesh.element_faces(t).contains(f)).unwrap();
    assert!(trace_constant(&mesh, t, other).is_err());
}

fn newton_state(degree: usize, data: ProblemData) -> (ContactSolver, DisplacementField, DisplacementField) {
    let mesh = BenchmarkSpec::default().mesh().unwrap();
    let space = Arc::new(LagrangeSpace::new(Arc::new(mesh), degree).unwrap());
    let solver = ContactSolver::new(space, data, 100.0).unwrap();
    let prev = solver.newton_step(&solver.initial_field(), 0.05).unwrap();
    let cur = solver.newton_step(&prev, 0.05).unwrap();
    (solver, cur, prev)
}

#[test]
fn contact_and_oscillation_match_projection_forms() {
    let mut data = BenchmarkSpec::default().data().unwrap();
    data.body_force = Arc::new(|x| [0.01 * x[0] * x[1], -0.01 - 0.02 * x[0] * x[0]]);
    for degree in [1, 2] {
        let (solver, cur, prev) = newton_state(degree, data.clone());
        let mesh = solver.space.mesh_arc().clone();
        let eq = Equilibrator::new(mesh.clone(), degree, EquilibrationConfig::default()).unwrap();
        let contact = ContactData::newton(&cur, &prev, 0.05, &solver.data, solver.gamma0);
        let (s, _) = eq.reconstruct(&cur, &solver.data, &contact).unwrap();
        let rep = compute_report(&cur, &s, &solver.data, &contact, &TraceConstants::compute(&mesh).unwrap());
        let cnt = contact_estimator_by_projection(&mesh, &contact, degree);
        let osc = oscillation_by_projection(&mesh, &solver.data, degree);
        for (t, l) in rep.local.iter().enumerate() {
            assert!((l.cnt - cnt[t]).abs() < 1e-10 * (1.0 + cnt[t]), "p={degree} t={t}: {} vs {}", l.cnt, cnt[t]);
            assert!((l.osc - osc[t]).abs() < 1e-10, "p={degree} t={t}: {} vs {}", l.osc, osc[t]);
            assert!(l.fric < 1e-12);
        }
        assert!(rep.global.osc > 0.0);
    }
}

#[test]
fn globals_aggregate_locals_and_bound_dominates_total() {
    let (solver, cur, prev) = newton_state(1, BenchmarkSpec::default().data().unwrap());
    let mesh = solver.space.mesh_arc().clone();
    let eq = Equilibrator::new(mesh.clone(), 1, EquilibrationConfig::default()).unwrap();
    let contact = ContactData::newton(&cur, &prev, 0.05, &solver.data, solver.gamma0);
    let (s, _) = eq.reconstruct(&cur, &solver.data, &contact).unwrap();
    let rep = compute_report(&cur, &s, &solver.data, &contact, &TraceConstants::uniform(1.0));
    let sq = |f: &dyn Fn(&contact_core::estimators::LocalEstimators) -> f64| rep.local.iter().map(|l| f(l).powi(2)).sum::<f64>().sqrt();
    assert!((rep.global.str - sq(&|l| l.str)).abs() < 1e-15);
    assert!((rep.global.reg - sq(&|l| l.reg1 + l.reg2)).abs() < 1e-15);
    assert!((rep.global.tot - sq(&|l| l.total())).abs() < 1e-15);
    assert!(rep.global.str > 0.0 && rep.global.cnt > 0.0 && rep.global.lin > 0.0 && rep.global.neu > 0.0);
    assert!(guaranteed_upper_bound(&rep) >= rep.global.tot * (1.0 - 1e-14));
    let csv = rep.to_csv(&mesh);
    assert_eq!(csv.lines().count(), mesh.n_elements() + 2);
}

#[test]
fn linear_displacement_gives_zero_estimators() {
    let mesh = build_rect_mesh(4, 4, Rect::new(0.0, 1.0, 0.0, 1.0), |_| BoundaryTag::Dirichlet).unwrap();
    let coeff = BenchmarkSpec::default().data().unwrap().coeff;
    let exact = |x: [f64; 2]| [0.01 * x[0] + 0.02 * x[1] + 0.003, -0.015 * x[0] + 0.005 * x[1]];
    let data = ProblemData::new(coeff, constant_field([0.0, 0.0]), constant_field([0.0, 0.0])).with_dirichlet(Arc::new(exact));
    let space = Arc::new(LagrangeSpace::new(Arc::new(mesh), 1).unwrap());
    let u = DisplacementField::new(space.clone(), space.interpolate(exact)).unwrap();
    let (s, contact) = construct_sigma(&u, &data, 100.0, EquilibrationConfig::default()).unwrap();
    let rep = compute_report(&u, &s, &data, &contact, &TraceConstants::compute(space.mesh()).unwrap());
    for v in rep.global.values() {
        assert!(v < 1e-9, "{:?}", rep.global);
    }
}
