//! A posteriori estimators built from an equilibrated stress reconstruction.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::equilibration::{split_rule, ContactData, EquilibratedStress, StressField};
use crate::fem::{dot2, mat_vec, DisplacementField, ElementGeometry};
use crate::linalg::{generalized_max_eigenvalue, DenseMatrix, LinalgError};
use crate::mesh::{BoundaryTag, Point, TriMesh};
use crate::nitsche::KINK_QUAD_DEGREE;
use crate::problem::ProblemData;
use crate::quadrature::{line_rule, triangle_rule};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("face {face} is not a face of element {element}")]
    NotAFace { element: usize, face: usize },
    #[error("trace constant eigenproblem: {0}")]
    Eigen(#[from] LinalgError),
}

/// Safety factor applied to the computed trace-inequality constant.
pub const TRACE_SAFETY: f64 = 1.1;
const TRACE_DEGREE: usize = 6;

/// Constant C with ‖v − v̄_F‖_F ≤ C h_F^{1/2} ‖∇v‖_T, computed as the largest Rayleigh quotient
/// over non-constant polynomials of degree ≤ 6 times [`TRACE_SAFETY`].
pub fn trace_constant(mesh: &TriMesh, t: usize, f: usize) -> Result<f64, EstimatorError> {
    if !mesh.element_faces(t).contains(&f) {
        return Err(EstimatorError::NotAFace { element: t, face: f });
    }
    let geo = ElementGeometry::of(mesh, t);
    let xc = mesh.centroid(t);
    let h = mesh.diameter(t);
    let exps: Vec<(i32, i32)> =
        (0..=TRACE_DEGREE as i32).flat_map(|i| (0..=TRACE_DEGREE as i32 - i).map(move |j| (i, j))).filter(|(i, j)| i + j >= 1).collect();
    let n = exps.len();
    let val = |x: Point, (i, j): (i32, i32)| ((x[0] - xc[0]) / h).powi(i) * ((x[1] - xc[1]) / h).powi(j);
    let grad = |x: Point, (i, j): (i32, i32)| {
        let (u, v) = ((x[0] - xc[0]) / h, (x[1] - xc[1]) / h);
        let dx = if i > 0 { i as f64 * u.powi(i - 1) * v.powi(j) / h } else { 0.0 };
        let dy = if j > 0 { j as f64 * u.powi(i) * v.powi(j - 1) / h } else { 0.0 };
        [dx, dy]
    };
    let mut b = DenseMatrix::zeros(n);
    let trule = triangle_rule(2 * TRACE_DEGREE);
    for (l, w) in trule.points.iter().zip(&trule.weights) {
        let x = geo.point(*l);
        let g: Vec<Point> = exps.iter().map(|e| grad(x, *e)).collect();
        for i in 0..n {
            for j in 0..n {
                b.add(i, j, w * geo.area * dot2(g[i], g[j]));
            }
        }
    }
    let lrule = line_rule(2 * TRACE_DEGREE);
    let samples: Vec<Vec<f64>> =
        lrule.points.iter().map(|s| exps.iter().map(|e| val(mesh.face_point(f, *s), *e)).collect()).collect();
    let means: Vec<f64> = (0..n).map(|i| samples.iter().zip(&lrule.weights).map(|(v, w)| w * v[i]).sum()).collect();
    let mut a = DenseMatrix::zeros(n);
    for (v, w) in samples.iter().zip(&lrule.weights) {
        for i in 0..n {
            for j in 0..n {
                // (1/h_F) ∫_F = ∫_0^1 ds
                a.add(i, j, w * (v[i] - means[i]) * (v[j] - means[j]));
            }
        }
    }
    let lam = generalized_max_eigenvalue(&a, &b)?;
    Ok(TRACE_SAFETY * lam.max(0.0).sqrt())
}

/// Trace constants for every (owner, face) pair on the Neumann boundary.
#[derive(Clone, Debug, Default)]
pub struct TraceConstants {
    values: HashMap<usize, f64>,
    fixed: Option<f64>,
}

impl TraceConstants {
    pub fn compute(mesh: &TriMesh) -> Result<Self, EstimatorError> {
        let faces: Vec<usize> = mesh.boundary_faces(BoundaryTag::Neumann).collect();
        let vals: Vec<f64> =
            faces.par_iter().map(|&f| trace_constant(mesh, mesh.face(f).owner, f)).collect::<Result<_, _>>()?;
        Ok(TraceConstants { values: faces.into_iter().zip(vals).collect(), fixed: None })
    }

    /// A user-supplied constant used for every face.
    pub fn uniform(c: f64) -> Self {
        TraceConstants { values: HashMap::new(), fixed: Some(c) }
    }

    pub fn get(&self, f: usize) -> f64 {
        self.fixed.or_else(|| self.values.get(&f).copied()).unwrap_or(0.0)
    }
}

/// Local estimators of one element.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LocalEstimators {
    pub osc: f64,
    pub str: f64,
    pub neu: f64,
    pub cnt: f64,
    pub reg1: f64,
    pub reg2: f64,
    pub lin1: f64,
    pub lin2: f64,
    /// Tangential traction of the reconstruction on contact faces; zero up to round-off.
    pub fric: f64,
}

impl LocalEstimators {
    pub fn reg(&self) -> f64 {
        self.reg1 + self.reg2
    }

    pub fn lin(&self) -> f64 {
        self.lin1 + self.lin2
    }

    pub fn total(&self) -> f64 {
        ((self.osc + self.str + self.reg1 + self.lin1 + self.neu).powi(2) + (self.cnt + self.reg2 + self.lin2).powi(2)).sqrt()
    }

    /// Values in the order of `ESTIMATOR_NAMES`.
    pub fn values(&self) -> [f64; 12] {
        [
            self.osc,
            self.str,
            self.neu,
            self.cnt,
            self.reg1,
            self.reg2,
            self.lin1,
            self.lin2,
            self.reg(),
            self.lin(),
            self.fric,
            self.total(),
        ]
    }
}

pub const ESTIMATOR_NAMES: [&str; 12] = ["osc", "str", "neu", "cnt", "reg1", "reg2", "lin1", "lin2", "reg", "lin", "fric", "tot"];

/// Global estimators, each the ℓ² norm of its local values.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GlobalEstimators {
    pub osc: f64,
    pub str: f64,
    pub neu: f64,
    pub cnt: f64,
    pub reg1: f64,
    pub reg2: f64,
    pub lin1: f64,
    pub lin2: f64,
    pub reg: f64,
    pub lin: f64,
    pub fric: f64,
    pub tot: f64,
}

impl GlobalEstimators {
    pub fn from_locals(local: &[LocalEstimators]) -> Self {
        let mut s = [0.0; 12];
        for l in local {
            for (a, v) in s.iter_mut().zip(l.values()) {
                *a += v * v;
            }
        }
        let s = s.map(f64::sqrt);
        GlobalEstimators {
            osc: s[0],
            str: s[1],
            neu: s[2],
            cnt: s[3],
            reg1: s[4],
            reg2: s[5],
            lin1: s[6],
            lin2: s[7],
            reg: s[8],
            lin: s[9],
            fric: s[10],
            tot: s[11],
        }
    }

    pub fn values(&self) -> [f64; 12] {
        [
            self.osc, self.str, self.neu, self.cnt, self.reg1, self.reg2, self.lin1, self.lin2, self.reg, self.lin, self.fric,
            self.tot,
        ]
    }
}

#[derive(Clone, Debug, Default)]
pub struct EstimatorReport {
    pub local: Vec<LocalEstimators>,
    pub global: GlobalEstimators,
}

impl EstimatorReport {
    pub fn from_locals(local: Vec<LocalEstimators>) -> Self {
        let global = GlobalEstimators::from_locals(&local);
        EstimatorReport { local, global }
    }

    pub fn local_totals(&self) -> Vec<f64> {
        self.local.iter().map(LocalEstimators::total).collect()
    }

    /// One row per element, then one row per global value (element column "global").
    pub fn to_csv(&self, mesh: &TriMesh) -> String {
        let mut s = String::from("element,x,y,h");
        for n in ESTIMATOR_NAMES {
            let _ = write!(s, ",eta_{n}");
        }
        s.push('\n');
        for (t, l) in self.local.iter().enumerate() {
            let c = mesh.centroid(t);
            let _ = write!(s, "{t},{:.16e},{:.16e},{:.16e}", c[0], c[1], mesh.diameter(t));
            for v in l.values() {
                let _ = write!(s, ",{v:.16e}");
            }
            s.push('\n');
        }
        let _ = write!(s, "global,,,");
        for v in self.global.values() {
            let _ = write!(s, ",{v:.16e}");
        }
        s.push('\n');
        s
    }
}

/// [(η_osc + η_str + η_reg1 + η_lin1 + η_Neu)² + (η_cnt + η_reg2 + η_lin2)²]^{1/2} from the globals.
pub fn guaranteed_upper_bound(report: &EstimatorReport) -> f64 {
    let g = &report.global;
    ((g.osc + g.str + g.reg1 + g.lin1 + g.neu).powi(2) + (g.cnt + g.reg2 + g.lin2).powi(2)).sqrt()
}

fn l2_element(geo: &ElementGeometry, degree: usize, g: impl Fn([f64; 3]) -> f64) -> f64 {
    let rule = triangle_rule(degree);
    (rule.points.iter().zip(&rule.weights).map(|(l, w)| w * g(*l)).sum::<f64>() * geo.area).max(0.0).sqrt()
}

fn l2_face(length: f64, breaks: &[f64], degree: usize, g: impl Fn(f64) -> f64) -> f64 {
    (split_rule(breaks, degree).iter().map(|(s, w)| w * g(*s)).sum::<f64>() * length).max(0.0).sqrt()
}

fn frob2(a: [[f64; 2]; 2]) -> f64 {
    a[0][0] * a[0][0] + a[0][1] * a[0][1] + a[1][0] * a[1][0] + a[1][1] * a[1][1]
}

/// Local and global estimators of the state `u` with reconstruction `stress`.
pub fn compute_report(
    u: &DisplacementField,
    stress: &EquilibratedStress,
    data: &ProblemData,
    contact: &ContactData,
    constants: &TraceConstants,
) -> EstimatorReport {
    let mesh = &**stress.mesh();
    let q = stress.dis.degree;
    let total = stress.total();
    let vol = 2 * q + 4;
    let fdeg = KINK_QUAD_DEGREE.max(2 * q + 4);
    let comp_norm = |s: &StressField, t: usize, geo: &ElementGeometry| l2_element(geo, 2 * q, |l| frob2(s.value(t, l)));
    let local: Vec<LocalEstimators> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|t| {
            let geo = ElementGeometry::of(mesh, t);
            let mut e = LocalEstimators {
                osc: mesh.diameter(t) / std::f64::consts::PI
                    * l2_element(&geo, vol, |l| {
                        let d = total.divergence(t, &geo, l);
                        let f = (data.body_force)(geo.point(l));
                        (d[0] + f[0]).powi(2) + (d[1] + f[1]).powi(2)
                    }),
                str: l2_element(&geo, 2 * q.max(u.space.degree()), |l| {
                    let s = stress.dis.value(t, l);
                    let su = u.stress(&data.coeff, t, &geo, l);
                    frob2([[s[0][0] - su[0][0], s[0][1] - su[0][1]], [s[1][0] - su[1][0], s[1][1] - su[1][1]]])
                }),
                reg1: comp_norm(&stress.reg, t, &geo),
                lin1: comp_norm(&stress.lin, t, &geo),
                ..Default::default()
            };
            for f in mesh.element_faces(t) {
                let face = mesh.face(f);
                let hs = face.length.sqrt();
                let n = face.normal;
                match face.tag {
                    Some(BoundaryTag::Neumann) => {
                        e.neu += constants.get(f)
                            * hs
                            * l2_face(face.length, &[], fdeg, |s| {
                                let a = total.normal_trace(t, f, s);
                                let g = (data.traction)(mesh.face_point(f, s));
                                (g[0] - a[0]).powi(2) + (g[1] - a[1]).powi(2)
                            });
                    }
                    Some(BoundaryTag::Contact) => {
                        let br = contact.breaks(f);
                        let normal = |s: &StressField, x: f64| dot2(s.normal_trace(t, f, x), n);
                        e.cnt += hs
                            * l2_face(face.length, &br, fdeg, |s| (contact.components(f, s)[0] - normal(&stress.dis, s)).powi(2));
                        e.reg2 += hs * l2_face(face.length, &br, fdeg, |s| normal(&stress.reg, s).powi(2));
                        e.lin2 += hs * l2_face(face.length, &br, fdeg, |s| normal(&stress.lin, s).powi(2));
                        e.fric += hs
                            * l2_face(face.length, &[], fdeg, |s| {
                                let tr = mat_vec(total.value(t, crate::fem::face_bary(mesh, t, f, s)), n);
                                (-tr[0] * n[1] + tr[1] * n[0]).powi(2)
                            });
                    }
                    _ => {}
                }
            }
            e
        })
        .collect();
    EstimatorReport::from_locals(local)
}

/// Per-element alternative form of the contact estimator: h_F^{1/2}‖[P]_{R⁻} − Π_F^q [P]_{R⁻}‖_F
/// summed over contact faces.
pub fn contact_estimator_by_projection(mesh: &TriMesh, contact: &ContactData, degree: usize) -> Vec<f64> {
    let mut out = vec![0.0; mesh.n_elements()];
    for f in mesh.boundary_faces(BoundaryTag::Contact) {
        let face = mesh.face(f);
        let br = contact.breaks(f);
        let proj = crate::fem::project_face(|s| contact.components(f, s)[0], degree, &br, KINK_QUAD_DEGREE);
        out[face.owner] += face.length.sqrt()
            * l2_face(face.length, &br, KINK_QUAD_DEGREE, |s| (contact.components(f, s)[0] - proj.eval(s)).powi(2));
    }
    out
}

/// Per-element alternative form of the oscillation estimator: (h_T/π)‖f − Π_T^{q−1} f‖_T.
pub fn oscillation_by_projection(mesh: &TriMesh, data: &ProblemData, degree: usize) -> Vec<f64> {
    (0..mesh.n_elements())
        .map(|t| {
            let geo = ElementGeometry::of(mesh, t);
            let deg = degree - 1;
            let m = (deg + 1) * (deg + 2) / 2;
            let rule = triangle_rule(2 * deg + 8);
            let mono = |l: [f64; 3]| [1.0, l[1], l[2]];
            let mut mass = DenseMatrix::zeros(m);
            let mut mom = [vec![0.0; m], vec![0.0; m]];
            for (l, w) in rule.points.iter().zip(&rule.weights) {
                let mv = mono(*l);
                let f = (data.body_force)(geo.point(*l));
                for i in 0..m {
                    for j in 0..m {
                        mass.add(i, j, w * mv[i] * mv[j]);
                    }
                    mom[0][i] += w * mv[i] * f[0];
                    mom[1][i] += w * mv[i] * f[1];
                }
            }
            let coef = [0, 1].map(|c| crate::linalg::dense_solve(&mass, &mom[c]).unwrap_or_else(|_| vec![0.0; m]));
            mesh.diameter(t) / std::f64::consts::PI
                * l2_element(&geo, 2 * deg + 8, |l| {
                    let mv = mono(l);
                    let f = (data.body_force)(geo.point(l));
                    (0..2).map(|c| (f[c] - (0..m).map(|i| coef[c][i] * mv[i]).sum::<f64>()).powi(2)).sum()
                })
        })
        .collect()
}
