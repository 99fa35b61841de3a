//! VTK legacy and CSV writers. Every number is printed with `{:.16e}` so runs can be diffed.

use std::fmt::Write as _;

use crate::adaptive::{RunLog, StepRecord};
use crate::estimators::ESTIMATOR_NAMES;
use crate::fem::{ElasticityCoefficients, ElementGeometry};

const CENTROID: [f64; 3] = [1.0 / 3.0; 3];

fn num(s: &mut String, x: f64) {
    let _ = write!(s, "{x:.16e}");
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v:.16e}"))
}

/// Mesh, vertex displacements and per-element stresses and estimators of one step, as a legacy
/// ASCII unstructured grid.
pub fn step_vtk(step: &StepRecord, coeff: &ElasticityCoefficients) -> String {
    let mesh = &*step.mesh;
    let u = &step.solution;
    let (nv, ne) = (mesh.n_vertices(), mesh.n_elements());
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0\nstep {}\nASCII\nDATASET UNSTRUCTURED_GRID", step.step);
    let _ = writeln!(s, "POINTS {nv} double");
    for p in mesh.vertices() {
        num(&mut s, p[0]);
        s.push(' ');
        num(&mut s, p[1]);
        s.push_str(" 0.0000000000000000e0\n");
    }
    let _ = writeln!(s, "CELLS {ne} {}", 4 * ne);
    for t in mesh.triangles() {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(s, "CELL_TYPES {ne}");
    for _ in 0..ne {
        s.push_str("5\n");
    }

    // Vertex values: each vertex is evaluated in the first element that contains it.
    let mut disp = vec![[0.0; 2]; nv];
    for t in (0..ne).rev() {
        for (k, &v) in mesh.triangle(t).iter().enumerate() {
            let mut l = [0.0; 3];
            l[k] = 1.0;
            disp[v] = u.value(t, l);
        }
    }
    let _ = writeln!(s, "POINT_DATA {nv}\nVECTORS displacement double");
    for d in &disp {
        num(&mut s, d[0]);
        s.push(' ');
        num(&mut s, d[1]);
        s.push_str(" 0.0000000000000000e0\n");
    }

    let _ = writeln!(s, "CELL_DATA {ne}");
    let total = step.stress.total();
    let tensors: [(&str, Vec<[[f64; 2]; 2]>); 2] = [
        ("stress_discrete", (0..ne).map(|t| u.stress(coeff, t, &ElementGeometry::of(mesh, t), CENTROID)).collect()),
        ("stress_equilibrated", (0..ne).map(|t| total.value(t, CENTROID)).collect()),
    ];
    for (name, vals) in &tensors {
        for (c, (i, j)) in ["xx", "xy", "yx", "yy"].iter().zip([(0, 0), (0, 1), (1, 0), (1, 1)]) {
            let _ = writeln!(s, "SCALARS {name}_{c} double 1\nLOOKUP_TABLE default");
            for v in vals {
                num(&mut s, v[i][j]);
                s.push('\n');
            }
        }
    }
    for (k, name) in ESTIMATOR_NAMES.iter().enumerate() {
        let _ = writeln!(s, "SCALARS eta_{name} double 1\nLOOKUP_TABLE default");
        for l in &step.report.local {
            num(&mut s, l.values()[k]);
            s.push('\n');
        }
    }
    let _ = writeln!(s, "SCALARS marked int 1\nLOOKUP_TABLE default");
    let mut marked = vec![0u8; ne];
    for &t in &step.marked {
        marked[t] = 1;
    }
    for m in marked {
        let _ = writeln!(s, "{m}");
    }
    s
}

/// One diagnostics line per step. The lifted dual norm is optional because it costs a solve; when
/// present, `bound_holds` records whether it stays below the guaranteed bound.
pub fn diagnostics_csv(log: &RunLog, lifted: &[Option<f64>]) -> String {
    let mut s = String::from("step,dofs,h1_error,energy_error,lower,upper,eta_tot,i_eff_low,i_eff_up,lifted_dual_norm,bound,bound_holds,equilibration_audit\n");
    for (k, r) in log.steps.iter().enumerate() {
        let e = r.errors.as_ref();
        let lift = lifted.get(k).copied().flatten();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:.16e},{},{},{},{:.16e},{},{:.16e}",
            r.step,
            r.n_dofs,
            opt(e.map(|e| e.norms.h1)),
            opt(e.map(|e| e.norms.energy)),
            opt(e.map(|e| e.diagnostics.lower)),
            opt(e.map(|e| e.diagnostics.upper)),
            r.report.global.tot,
            opt(e.map(|e| e.diagnostics.i_eff_low)),
            opt(e.map(|e| e.diagnostics.i_eff_up)),
            opt(lift),
            r.bound,
            lift.map_or(String::new(), |z| (z <= r.bound).to_string()),
            r.audit.worst(),
        );
    }
    s
}
