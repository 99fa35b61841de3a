use std::sync::Arc;

use contact_core::fem::{assemble_elastic_stiffness, DisplacementField, LagrangeSpace};
use contact_core::linalg::norm;
use contact_core::mesh::{build_rect_mesh, BoundaryTag, Rect};
use contact_core::nitsche::{p1gamma, proj_neg, reg_proj, ContactSolver, NitscheConfig};
use contact_core::problem::{constant_field, BenchmarkSpec, ProblemData};

fn solver(degree: usize) -> ContactSolver {
    let spec = BenchmarkSpec::default();
    let space = Arc::new(LagrangeSpace::new(Arc::new(spec.mesh().unwrap()), degree).unwrap());
    ContactSolver::new(space, spec.data().unwrap(), 100.0).unwrap()
}

#[test]
fn negative_part() {
    assert_eq!(proj_neg(-3.0), -3.0);
    assert_eq!(proj_neg(2.0), 0.0);
    assert_eq!(proj_neg(0.0), 0.0);
}

#[test]
fn regularized_projection_values() {
    let d = 0.01;
    assert_eq!(reg_proj(-d, d), (-d, 1.0));
    let (v, dv) = reg_proj(0.0, d);
    assert!((v + 0.0025).abs() < 1e-16 && (dv - 0.5).abs() < 1e-16);
    assert_eq!(reg_proj(d, d), (0.0, 0.0));
}

#[test]
fn regularized_projection_is_c1_and_agrees_outside_the_band() {
    for d in [1e-3, 0.1, 1.0] {
        for x in [-d, d] {
            let eps = 1e-9 * d;
            let (a, da) = reg_proj(x - eps, d);
            let (b, db) = reg_proj(x + eps, d);
            assert!((a - b).abs() < 3.0 * eps && (da - db).abs() < 1e-8, "δ={d}, x={x}");
        }
        for x in [-5.0 * d, -1.0001 * d, 1.0001 * d, 7.0 * d] {
            assert_eq!(reg_proj(x, d).0, proj_neg(x));
        }
        // monotone and below zero inside the band
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=100 {
            let x = -d + 2.0 * d * k as f64 / 100.0;
            let (v, dv) = reg_proj(x, d);
            assert!(v >= prev && v <= 0.0 && (0.0..=1.0).contains(&dv));
            prev = v;
        }
    }
}

#[test]
fn contact_functional_of_simple_fields() {
    let s = solver(1);
    let mesh = s.space.mesh_arc().clone();
    let zero = s.initial_field();
    let c = 0.004;
    let lift = DisplacementField::new(s.space.clone(), s.space.interpolate(|_| [0.0, c])).unwrap();
    for &f in s.contact_faces() {
        let h = mesh.diameter(mesh.face(f).owner);
        for x in [0.0, 0.4, 1.0] {
            assert_eq!(p1gamma(&zero, &s.data.coeff, 100.0, f, x).unwrap(), 0.0);
            // u·n = −c on the bottom edge, no stress
            let v = p1gamma(&lift, &s.data.coeff, 100.0, f, x).unwrap();
            assert!((v - 100.0 * c / h).abs() < 1e-12, "{v}");
        }
    }
    let dir = mesh.boundary_faces(BoundaryTag::Dirichlet).next().unwrap();
    assert!(p1gamma(&zero, &s.data.coeff, 100.0, dir, 0.5).is_err());
}

#[test]
fn penalty_scales_inversely_with_element_size() {
    let data = BenchmarkSpec::default().data().unwrap();
    let mut vals = Vec::new();
    for scale in [1.0, 2.0] {
        let mesh = build_rect_mesh(2, 1, Rect::new(-scale, scale, 0.0, scale), |x| {
            if x[1].abs() < 1e-12 && x[0] > 0.0 {
                BoundaryTag::Contact
            } else {
                BoundaryTag::Neumann
            }
        })
        .unwrap();
        let space = Arc::new(LagrangeSpace::new(Arc::new(mesh), 1).unwrap());
        let u = DisplacementField::new(space.clone(), space.interpolate(|_| [0.0, 0.01])).unwrap();
        let f = space.mesh().boundary_faces(BoundaryTag::Contact).next().unwrap();
        vals.push(p1gamma(&u, &data.coeff, 100.0, f, 0.5).unwrap());
    }
    assert!((vals[1] - 0.5 * vals[0]).abs() < 1e-13 * vals[0]);
}

#[test]
fn without_contact_faces_the_system_is_plain_elasticity() {
    let spec = BenchmarkSpec::default();
    let mesh = build_rect_mesh(4, 2, spec.rect, |x| if x[1].abs() < 1e-12 { BoundaryTag::Dirichlet } else { BoundaryTag::Neumann }).unwrap();
    let space = Arc::new(LagrangeSpace::new(Arc::new(mesh), 1).unwrap());
    let s = ContactSolver::new(space.clone(), spec.data().unwrap(), 100.0).unwrap();
    let (a, rhs) = s.newton_system(&s.initial_field(), 0.5);
    let mut k = assemble_elastic_stiffness(&space, &s.data.coeff);
    let mut load = s.load().to_vec();
    k.constrain(&mut load, s.constraints());
    for i in 0..a.dim() {
        for (j, v) in a.row(i) {
            assert!((v - k.get(i, j)).abs() < 1e-14);
        }
    }
    assert_eq!(rhs, load);
}

#[test]
fn newton_matrix_at_zero_uses_half_the_nitsche_term() {
    // Two regularizations large enough that every contact point has |P| < δ at u = 0, so the
    // derivative is 1/2 for both; the contact part is then independent of δ.
    let s = solver(1);
    let u0 = s.initial_field();
    let (a1, _) = s.newton_system(&u0, 1.0);
    let (a2, _) = s.newton_system(&u0, 10.0);
    let k = s.stiffness();
    let mut full = k.clone();
    let mut dummy = vec![0.0; k.dim()];
    full.constrain(&mut dummy, s.constraints());
    let mut changed = 0;
    for i in 0..a1.dim() {
        for (j, v) in a1.row(i) {
            assert!((v - a2.get(i, j)).abs() < 1e-12);
            if (v - full.get(i, j)).abs() > 1e-12 {
                changed += 1;
            }
        }
    }
    assert!(changed > 0);
}

#[test]
fn zero_loads_give_a_displacement_of_the_order_of_delta() {
    let spec = BenchmarkSpec::default();
    let coeff = spec.data().unwrap().coeff;
    let zero = constant_field([0.0, 0.0]);
    let space = Arc::new(LagrangeSpace::new(Arc::new(spec.mesh().unwrap()), 1).unwrap());
    let s = ContactSolver::new(space, ProblemData::new(coeff, zero.clone(), zero), 100.0).unwrap();
    // the smoothed projection is −δ/4 at zero, so the only force is of size δ
    for delta in [1e-4, 1e-8] {
        let cfg = NitscheConfig { gamma0: 100.0, delta, newton_tol: 1e-12, max_iters: 30 };
        let (u, _, _) = s.newton_solve(&s.initial_field(), &cfg, |_, _| false).unwrap();
        let max = u.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        assert!(max < 10.0 * delta, "δ={delta}: {max}");
    }
}

#[test]
fn converged_solution_satisfies_the_nonlinear_equation() {
    for degree in [1, 2] {
        let s = solver(degree);
        let delta = 1e-3;
        let cfg = NitscheConfig { gamma0: 100.0, delta, newton_tol: 1e-13, max_iters: 80 };
        let mut u = s.initial_field();
        for d in [1.0, 0.1, 0.01, delta] {
            u = s.newton_solve(&u, &NitscheConfig { delta: d, ..cfg }, |_, _| false).unwrap().0;
        }
        let (u, trace, _) = s.newton_solve(&u, &cfg, |_, _| false).unwrap();
        assert!(trace.converged);
        let r = norm(&s.residual(&u, Some(delta)));
        assert!(r < 1e-10 * norm(s.load()), "p={degree}: {r}");
        // the final iterations decrease the residual
        let res: Vec<f64> = trace.iterates.iter().map(|i| i.residual_norm).collect();
        for w in res.windows(2).rev().take(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-6) || w[1] < 1e-12, "{res:?}");
        }
        // part of the contact zone is active
        let active = s.active_points(&u, delta);
        assert!(active > 0);
    }
}

#[test]
fn far_end_of_the_contact_zone_lifts_off() {
    let s = solver(1);
    let cfg = NitscheConfig { gamma0: 100.0, delta: 1e-6, newton_tol: 1e-13, max_iters: 80 };
    let mut u = s.initial_field();
    for d in [1.0, 1e-2, 1e-4, 1e-6] {
        u = s.newton_solve(&u, &NitscheConfig { delta: d, ..cfg }, |_, _| false).unwrap().0;
    }
    let mesh = s.space.mesh();
    let far = s.contact_faces().iter().copied().find(|&f| mesh.face_point(f, 0.5)[0] > 0.7).unwrap();
    let t = mesh.face(far).owner;
    assert!(u.value(t, u.face_bary(t, far, 1.0))[1] > 0.0);
    // the body is pushed left and down: horizontal displacement at the top right is negative
    let top_right = (0..mesh.n_vertices()).find(|&v| mesh.vertex(v) == [1.0, 1.0]).unwrap();
    assert!(u.coeffs[2 * top_right] < 0.0);
}
