use std::sync::Arc;

use contact_core::fem::{
    assemble_elastic_stiffness, assemble_load, element_stiffness, project_face, DisplacementField, ElasticityCoefficients,
    ElementGeometry, LagrangeSpace,
};
use contact_core::mesh::{build_rect_mesh, BoundaryTag, Rect};
use contact_core::problem::{constant_field, BenchmarkSpec};
use contact_core::quadrature::triangle_rule;

fn coeff() -> ElasticityCoefficients {
    ElasticityCoefficients::plane_strain(1.0, 0.3).unwrap()
}

fn rigid(x: [f64; 2]) -> [f64; 2] {
    [0.3 - 0.7 * x[1], -0.2 + 0.7 * x[0]]
}

#[test]
fn lame_parameters_of_the_benchmark_material() {
    let c = coeff();
    assert!((c.mu - 0.385).abs() < 5e-4 && (c.lambda - 0.577).abs() < 5e-4);
    assert!(ElasticityCoefficients::plane_strain(1.0, 0.5).is_err());
    assert!(ElasticityCoefficients::plane_strain(-1.0, 0.3).is_err());
}

#[test]
fn reference_triangle_annihilates_rigid_motions() {
    let geo = ElementGeometry::new([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
    for degree in [1, 2] {
        let k = element_stiffness(degree, &geo, &coeff());
        let nd = (k.len() as f64).sqrt() as usize;
        let nodes: Vec<[f64; 2]> = match degree {
            1 => vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            _ => vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [0.0, 0.5], [0.5, 0.0]],
        };
        let v: Vec<f64> = nodes.iter().flat_map(|&p| rigid(p)).collect();
        for i in 0..nd {
            let r: f64 = (0..nd).map(|j| k[i * nd + j] * v[j]).sum();
            assert!(r.abs() < 1e-14, "degree {degree} row {i}: {r}");
        }
    }
}

#[test]
fn stiffness_kernel_is_exactly_the_rigid_motions() {
    let mesh = Arc::new(BenchmarkSpec::default().mesh().unwrap());
    let space = LagrangeSpace::new(mesh, 1).unwrap();
    let a = assemble_elastic_stiffness(&space, &coeff());
    for m in [|_: [f64; 2]| [1.0, 0.0], |_: [f64; 2]| [0.0, 1.0], |x: [f64; 2]| [-x[1], x[0]]] {
        let v = space.interpolate(m);
        assert!(a.mul_vec(&v).iter().all(|r| r.abs() < 1e-13));
    }
    // a non-rigid linear field has positive energy
    let v = space.interpolate(|x| [x[0], 0.0]);
    assert!(a.form(&v, &v) > 0.1);
}

#[test]
fn quadratic_form_matches_independent_quadrature() {
    let mesh = Arc::new(BenchmarkSpec { nx: 3, ny: 2, ..Default::default() }.mesh().unwrap());
    let c = coeff();
    for degree in [1, 2] {
        let space = Arc::new(LagrangeSpace::new(mesh.clone(), degree).unwrap());
        let a = assemble_elastic_stiffness(&space, &c);
        // deterministic pseudo-random coefficients
        let v: Vec<f64> = (0..space.n_dofs()).map(|i| ((i * 7919 % 211) as f64 / 105.0) - 1.0).collect();
        let field = DisplacementField::new(space.clone(), v.clone()).unwrap();
        let rule = triangle_rule(6);
        let mut direct = 0.0;
        for t in 0..mesh.n_elements() {
            let geo = ElementGeometry::of(&mesh, t);
            for (l, w) in rule.points.iter().zip(&rule.weights) {
                let g = field.grad(t, &geo, *l);
                let div = g[0][0] + g[1][1];
                let e01 = 0.5 * (g[0][1] + g[1][0]);
                let eps2 = g[0][0] * g[0][0] + g[1][1] * g[1][1] + 2.0 * e01 * e01;
                direct += w * geo.area * (c.lambda * div * div + 2.0 * c.mu * eps2);
            }
        }
        let assembled = a.form(&v, &v);
        assert!((assembled - direct).abs() < 1e-10 * direct, "p={degree}: {assembled} vs {direct}");
    }
}

#[test]
fn load_vector_reproduces_total_force() {
    let mesh = Arc::new(build_rect_mesh(3, 3, Rect::new(0.0, 1.0, 0.0, 1.0), |_| BoundaryTag::Neumann).unwrap());
    for degree in [1, 2] {
        let space = LagrangeSpace::new(mesh.clone(), degree).unwrap();
        let zero = assemble_load(&space, &constant_field([0.0, 0.0]), &constant_field([0.0, 0.0]));
        assert!(zero.iter().all(|&x| x == 0.0));
        let b = assemble_load(&space, &constant_field([0.3, -0.7]), &constant_field([0.0, 0.0]));
        let ones = space.interpolate(|_| [1.0, 1.0]);
        let total: f64 = b.iter().zip(&ones).map(|(x, y)| x * y).sum();
        assert!((total - (0.3 - 0.7)).abs() < 1e-14);
        let sx: f64 = b.iter().step_by(2).sum();
        assert!((sx - 0.3).abs() < 1e-14);
        // traction on the whole boundary of length 4
        let g = assemble_load(&space, &constant_field([0.0, 0.0]), &constant_field([-0.0275, 0.0]));
        assert!((g.iter().step_by(2).sum::<f64>() + 0.0275 * 4.0).abs() < 1e-14);
    }
}

#[test]
fn benchmark_load_has_the_expected_resultant() {
    let spec = BenchmarkSpec::default();
    let data = spec.data().unwrap();
    let space = LagrangeSpace::new(Arc::new(spec.mesh().unwrap()), 1).unwrap();
    let b = assemble_load(&space, &data.body_force, &data.traction);
    // body force over area 2 plus right-edge traction over length 1
    assert!((b.iter().step_by(2).sum::<f64>() + 0.0275).abs() < 1e-14);
    assert!((b.iter().skip(1).step_by(2).sum::<f64>() + 0.02).abs() < 1e-14);
}

#[test]
fn normal_stress_of_linear_fields() {
    let mesh = Arc::new(BenchmarkSpec::default().mesh().unwrap());
    let c = coeff();
    let space = Arc::new(LagrangeSpace::new(mesh.clone(), 1).unwrap());
    let dilation = DisplacementField::new(space.clone(), space.interpolate(|x| x)).unwrap();
    let moved = DisplacementField::new(space.clone(), space.interpolate(rigid)).unwrap();
    for f in mesh.boundary_faces(BoundaryTag::Contact) {
        for s in [0.0, 0.3, 1.0] {
            let (sn, st) = dilation.normal_stress_trace(&c, f, s).unwrap();
            assert!((sn - (2.0 * c.lambda + 2.0 * c.mu)).abs() < 1e-13);
            assert!(st[0].abs() + st[1].abs() < 1e-13);
            let (sn, _) = moved.normal_stress_trace(&c, f, s).unwrap();
            assert!(sn.abs() < 1e-13);
        }
    }
}

#[test]
fn p1_normal_stress_is_the_owner_element_stress() {
    let spec = BenchmarkSpec::default();
    let mesh = Arc::new(spec.mesh().unwrap());
    let c = coeff();
    let space = Arc::new(LagrangeSpace::new(mesh.clone(), 1).unwrap());
    let u = DisplacementField::new(space.clone(), space.interpolate(|x| [0.1 * x[0] * x[1], x[0] * x[0] - 0.3 * x[1]])).unwrap();
    for f in mesh.boundary_faces(BoundaryTag::Contact) {
        let t = mesh.face(f).owner;
        let geo = ElementGeometry::of(&mesh, t);
        let sigma = u.stress(&c, t, &geo, [1.0 / 3.0; 3]);
        let n = mesh.face(f).normal;
        let expected = n[0] * (sigma[0][0] * n[0] + sigma[0][1] * n[1]) + n[1] * (sigma[1][0] * n[0] + sigma[1][1] * n[1]);
        let poly = u.normal_stress_poly(&c, f).unwrap();
        for s in [0.0, 0.5, 1.0] {
            assert!((poly.eval(s) - expected).abs() < 1e-13);
        }
    }
}

#[test]
fn face_projection_properties() {
    // idempotent on polynomials of the target degree
    let p = project_face(|s| 1.0 - 2.0 * s + 3.0 * s * s, 2, &[], 6);
    for s in [0.0, 0.21, 0.5, 0.9] {
        assert!((p.eval(s) - (1.0 - 2.0 * s + 3.0 * s * s)).abs() < 1e-12);
    }
    // |x| on [−1, 1] projects to the constant 1/2 with no linear part
    let q = project_face(|s| (2.0 * s - 1.0).abs(), 1, &[0.5], 4);
    assert!((q.eval(0.0) - 0.5).abs() < 1e-14 && (q.eval(1.0) - 0.5).abs() < 1e-14);
    // the error is orthogonal to the target space
    let g = |s: f64| (3.0 * s).sin() + (s - 0.4).abs();
    let r = project_face(g, 2, &[0.4], 10);
    let rule = contact_core::quadrature::line_rule(12);
    for k in 0..3 {
        let mut m = 0.0;
        for (a, b) in [(0.0, 0.4), (0.4, 1.0)] {
            for (x, w) in rule.points.iter().zip(&rule.weights) {
                let s = a + (b - a) * x;
                m += w * (b - a) * (g(s) - r.eval(s)) * s.powi(k);
            }
        }
        assert!(m.abs() < 1e-12, "moment {k}: {m}");
    }
}
