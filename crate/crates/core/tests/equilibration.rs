use std::sync::Arc;

use contact_core::equilibration::{
    audit, construct_sigma, rigid_modes, BdmElement, ContactData, EquilibrationConfig, Equilibrator, FaceStatus,
    PatchMixedSpace,
};
use contact_core::fem::{DisplacementField, ElementGeometry, LagrangeSpace};
use contact_core::mesh::{build_rect_mesh, refine, BoundaryTag, Rect, TriMesh};
use contact_core::nitsche::{ContactSolver, NitscheConfig};
use contact_core::problem::{BenchmarkSpec, ProblemData};
use contact_core::quadrature::triangle_rule;

fn newton_pair(mesh: TriMesh, degree: usize, delta: f64, steps: usize) -> (ContactSolver, DisplacementField, DisplacementField) {
    let spec = BenchmarkSpec::default();
    let data = spec.data().unwrap();
    let space = Arc::new(LagrangeSpace::new(Arc::new(mesh), degree).unwrap());
    let solver = ContactSolver::new(space, data, 100.0).unwrap();
    let mut prev = solver.initial_field();
    let mut cur = solver.newton_step(&prev, delta).unwrap();
    for _ in 1..steps {
        prev = cur;
        cur = solver.newton_step(&prev, delta).unwrap();
    }
    (solver, cur, prev)
}

fn check_split(mesh: TriMesh, degree: usize) {
    let (solver, cur, prev) = newton_pair(mesh, degree, 0.05, 2);
    let eq = Equilibrator::new(solver.space.mesh_arc().clone(), degree, EquilibrationConfig::default()).unwrap();
    let contact = ContactData::newton(&cur, &prev, 0.05, &solver.data, solver.gamma0);
    let (s, diag) = eq.reconstruct(&cur, &solver.data, &contact).unwrap();
    let rep = audit(&s, &solver.data, &contact);
    println!("p={degree} {rep:?} rho={:.3e} K={:.3e}", diag.max_rigid_multiplier, diag.correction_norm);
    assert!(rep.worst() < 1e-9, "{rep:?}");
}

#[test]
fn split_reconstruction_passes_audits_p1() {
    let mesh = BenchmarkSpec::default().mesh().unwrap();
    check_split(mesh.clone(), 1);
    let r = refine(&mesh, &[0, 5, 9]).unwrap();
    check_split(r.mesh, 1);
}

#[test]
fn split_reconstruction_passes_audits_p2() {
    check_split(BenchmarkSpec::default().mesh().unwrap(), 2);
}

#[test]
fn patch_dimensions_lowest_order() {
    let mesh = BenchmarkSpec::default().mesh().unwrap();
    let bdm: Vec<BdmElement> = (0..mesh.n_elements()).map(|t| BdmElement::new(&mesh, t, 1).unwrap()).collect();
    assert_eq!(bdm[0].n_basis(), 6);
    assert_eq!(bdm[0].n_disp_monomials(), 1);
    // Interior vertex (0, 0.5): all outer faces fixed to zero, three rigid multipliers.
    let a = mesh.vertices().iter().position(|v| v[0].abs() < 1e-12 && (v[1] - 0.5).abs() < 1e-12).unwrap();
    let sp = PatchMixedSpace::new(&mesh, &bdm, a);
    assert_eq!(sp.n_rigid, 3);
    let ne = sp.patch.elements.len();
    assert_eq!(sp.n_disp, 2 * ne);
    assert_eq!(sp.n_skew, ne);
    for (st, (f, _)) in sp.statuses.iter().zip(&sp.patch.faces) {
        let inner = mesh.face(*f).vertices.contains(&a);
        assert_eq!(*st == FaceStatus::Interior, inner);
        if !inner {
            assert_eq!(*st, FaceStatus::Zero);
        }
    }
    // Dirichlet vertex (−0.5, 0): unconstrained displacement, free Dirichlet faces.
    let d = mesh.vertices().iter().position(|v| (v[0] + 0.5).abs() < 1e-12 && v[1].abs() < 1e-12).unwrap();
    let sp = PatchMixedSpace::new(&mesh, &bdm, d);
    assert_eq!(sp.n_rigid, 0);
    assert!(sp.statuses.contains(&FaceStatus::Free));
}

#[test]
fn rigid_modes_are_orthonormal_and_strain_free() {
    let mesh = BenchmarkSpec::default().mesh().unwrap();
    for a in [0, 7, 12] {
        let modes = rigid_modes(&mesh, a);
        let rule = triangle_rule(2);
        for i in 0..3 {
            assert!(modes[i].strain().iter().flatten().all(|v| v.abs() < 1e-15));
            for j in 0..3 {
                let mut g = 0.0;
                for &t in mesh.vertex_elements(a) {
                    let geo = ElementGeometry::of(&mesh, t);
                    for (l, w) in rule.points.iter().zip(&rule.weights) {
                        let x = geo.point(*l);
                        let (u, v) = (modes[i].eval(x), modes[j].eval(x));
                        g += w * geo.area * (u[0] * v[0] + u[1] * v[1]);
                    }
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((g - expect).abs() < 1e-12, "gram[{i}][{j}] = {g}");
            }
        }
    }
}

/// u linear on a clamped square reproduces a constant stress exactly.
#[test]
fn linear_displacement_is_reproduced() {
    let mesh = build_rect_mesh(4, 4, Rect::new(0.0, 1.0, 0.0, 1.0), |_| BoundaryTag::Dirichlet).unwrap();
    let spec = BenchmarkSpec::default();
    let coeff = spec.data().unwrap().coeff;
    let exact = |x: [f64; 2]| [0.01 * x[0] + 0.02 * x[1] + 0.003, -0.015 * x[0] + 0.005 * x[1]];
    let data = ProblemData::new(
        coeff,
        contact_core::problem::constant_field([0.0, 0.0]),
        contact_core::problem::constant_field([0.0, 0.0]),
    )
    .with_dirichlet(Arc::new(exact));
    let space = Arc::new(LagrangeSpace::new(Arc::new(mesh), 1).unwrap());
    let u = DisplacementField::new(space.clone(), space.interpolate(exact)).unwrap();
    let (s, contact) = construct_sigma(&u, &data, 100.0, EquilibrationConfig::default()).unwrap();
    let rep = audit(&s, &data, &contact);
    assert!(rep.worst() < 1e-9, "{rep:?}");
    let mesh = space.mesh();
    for t in 0..mesh.n_elements() {
        let geo = ElementGeometry::of(mesh, t);
        let sig = u.stress(&coeff, t, &geo, [1.0 / 3.0; 3]);
        for l in [[1.0, 0.0, 0.0], [0.2, 0.3, 0.5]] {
            let sh = s.dis.value(t, l);
            for r in 0..2 {
                for c in 0..2 {
                    assert!((sh[r][c] - sig[r][c]).abs() < 1e-12, "element {t}");
                }
            }
        }
        assert!(s.reg.norm2_element(t) == 0.0 && s.lin.norm2_element(t) == 0.0);
    }
}

#[test]
fn zero_data_gives_zero_stress() {
    let mesh = BenchmarkSpec::default().mesh().unwrap();
    let coeff = BenchmarkSpec::default().data().unwrap().coeff;
    let zero = contact_core::problem::constant_field([0.0, 0.0]);
    let data = ProblemData::new(coeff, zero.clone(), zero);
    let space = Arc::new(LagrangeSpace::new(Arc::new(mesh), 1).unwrap());
    let u = DisplacementField::zeros(space);
    let (s, _) = construct_sigma(&u, &data, 100.0, EquilibrationConfig::default()).unwrap();
    let total = s.total();
    for t in 0..total.coeffs.len() {
        assert_eq!(total.norm2_element(t), 0.0);
    }
    let _ = NitscheConfig::new(1.0, 1.0).unwrap();
}
