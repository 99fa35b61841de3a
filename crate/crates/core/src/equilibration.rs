//! Patchwise mixed reconstruction of a locally equilibrated, weakly symmetric stress.
//!
//! Every vertex patch solves a small saddle problem in BDM_q × P_{q−1} × skew P_{q−1}; the patch
//! stresses are summed into three components: discretization, regularization and linearization.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::fem::{legendre, mat_vec, DisplacementField, ElementGeometry, Tensor};
use crate::linalg::{dense_solve, DenseMatrix, LinalgError, SparseBuilder, SymmetricIndefinite};
use crate::mesh::{face_param_weight, vertex_patch, BoundaryTag, PatchFaceKind, Point, TriMesh, VertexKind, VertexPatch};
use crate::nitsche::{contact_traces, proj_neg, reg_proj, ContactTrace, KINK_QUAD_DEGREE};
use crate::problem::ProblemData;
use crate::quadrature::{line_rule, triangle_rule};

#[derive(Debug, Error)]
pub enum EquilibrationError {
    #[error("stress degree must be 1 or 2 (got {0})")]
    Degree(usize),
    #[error("BDM moment matrix of element {0} is singular")]
    Basis(usize),
    #[error("patch of vertex {vertex}: {source}")]
    Patch { vertex: usize, source: LinalgError },
    #[error("compatibility correction: {0}")]
    Compatibility(LinalgError),
    #[error("vertex {0} is off the Dirichlet boundary but belongs to a single element; the lowest-order patch problem cannot balance rotations there")]
    LonePatch(usize),
    #[error("displacement and reconstruction live on different meshes")]
    MeshMismatch,
}

pub const MAX_MONOMIALS: usize = 6;

/// Tensor polynomial on one element: `c[r][c][k]` multiplies monomial k in (λ1, λ2).
pub type TensorPoly = [[[f64; MAX_MONOMIALS]; 2]; 2];

pub fn monomial_count(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

/// 1, ξ, η, ξ², ξη, η² with ξ = λ1, η = λ2.
fn monomials(l: [f64; 3]) -> [f64; MAX_MONOMIALS] {
    let (x, y) = (l[1], l[2]);
    [1.0, x, y, x * x, x * y, y * y]
}

/// Physical gradients of the monomials.
fn monomial_grads(l: [f64; 3], gl: &[Point; 3]) -> [Point; MAX_MONOMIALS] {
    let (x, y) = (l[1], l[2]);
    let d: [[f64; 2]; MAX_MONOMIALS] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0 * x, 0.0], [y, x], [0.0, 2.0 * y]];
    d.map(|[dx, dy]| [dx * gl[1][0] + dy * gl[2][0], dx * gl[1][1] + dy * gl[2][1]])
}

pub fn tensor_value(p: &TensorPoly, l: [f64; 3]) -> Tensor {
    let m = monomials(l);
    let mut out = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] = (0..MAX_MONOMIALS).map(|k| p[r][c][k] * m[k]).sum();
        }
    }
    out
}

/// Row-wise divergence.
pub fn tensor_divergence(p: &TensorPoly, geo: &ElementGeometry, l: [f64; 3]) -> Point {
    let g = monomial_grads(l, &geo.grad_lambda);
    let mut out = [0.0; 2];
    for r in 0..2 {
        for c in 0..2 {
            out[r] += (0..MAX_MONOMIALS).map(|k| p[r][c][k] * g[k][c]).sum::<f64>();
        }
    }
    out
}

/// Quadrature points (s, weight) on [0, 1] split at `breaks`.
pub fn split_rule(breaks: &[f64], degree: usize) -> Vec<(f64, f64)> {
    let rule = line_rule(degree);
    let mut pts = vec![0.0];
    pts.extend(breaks.iter().copied().filter(|b| *b > 0.0 && *b < 1.0));
    pts.push(1.0);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = Vec::with_capacity(rule.len() * (pts.len() - 1));
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        for (x, wt) in rule.points.iter().zip(&rule.weights) {
            out.push((a + (b - a) * x, wt * (b - a)));
        }
    }
    out
}

/// Local BDM_q basis (rows of the stress) on one element, dual to face moments
/// ∫_F (φ·n_F) L_k against the global face normal plus, for q = 2, interior moments
/// against e_1, e_2 and the rotation field.
#[derive(Clone, Debug)]
pub struct BdmElement {
    pub degree: usize,
    pub geo: ElementGeometry,
    /// Face ids; entry i is opposite local vertex i.
    pub faces: [usize; 3],
    coef: Vec<[[f64; MAX_MONOMIALS]; 2]>,
    gram: Vec<f64>,
    div_moments: Vec<f64>,
    comp_moments: Vec<Point>,
    mono_integrals: [f64; 3],
}

impl BdmElement {
    pub fn new(mesh: &TriMesh, t: usize, degree: usize) -> Result<Self, EquilibrationError> {
        if !(1..=2).contains(&degree) {
            return Err(EquilibrationError::Degree(degree));
        }
        let geo = ElementGeometry::of(mesh, t);
        let faces = mesh.element_faces(t);
        let m = monomial_count(degree);
        let nb = 2 * m;
        let mut a = DenseMatrix::zeros(nb);
        let lrule = line_rule(2 * degree + 1);
        for (i, &f) in faces.iter().enumerate() {
            let face = mesh.face(f);
            for (s, w) in lrule.points.iter().zip(&lrule.weights) {
                let mv = monomials(crate::fem::face_bary(mesh, t, f, *s));
                for k in 0..=degree {
                    let lk = legendre(k, 2.0 * s - 1.0) * w * face.length;
                    for c in 0..2 {
                        for j in 0..m {
                            a.add(i * (degree + 1) + k, c * m + j, lk * mv[j] * face.normal[c]);
                        }
                    }
                }
            }
        }
        if degree == 2 {
            let xc = mesh.centroid(t);
            let rule = triangle_rule(4);
            for (l, w) in rule.points.iter().zip(&rule.weights) {
                let x = geo.point(*l);
                let mv = monomials(*l);
                let wa = w * geo.area;
                let rot = [-(x[1] - xc[1]), x[0] - xc[0]];
                for j in 0..m {
                    a.add(9, j, wa * mv[j]);
                    a.add(10, m + j, wa * mv[j]);
                    a.add(11, j, wa * mv[j] * rot[0]);
                    a.add(11, m + j, wa * mv[j] * rot[1]);
                }
            }
        }
        let mut coef = vec![[[0.0; MAX_MONOMIALS]; 2]; nb];
        for (l, cl) in coef.iter_mut().enumerate() {
            let mut e = vec![0.0; nb];
            e[l] = 1.0;
            let x = dense_solve(&a, &e).map_err(|_| EquilibrationError::Basis(t))?;
            for c in 0..2 {
                cl[c][..m].copy_from_slice(&x[c * m..(c + 1) * m]);
            }
        }
        let mut el = BdmElement {
            degree,
            geo,
            faces,
            coef,
            gram: vec![0.0; nb * nb],
            div_moments: Vec::new(),
            comp_moments: Vec::new(),
            mono_integrals: [0.0; 3],
        };
        let mu = el.n_disp_monomials();
        let mut div_moments = vec![0.0; mu * nb];
        let mut comp_moments = vec![[0.0; 2]; mu * nb];
        let rule = triangle_rule(2 * degree + 1);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let wa = w * geo.area;
            let mv = monomials(*l);
            let vals: Vec<Point> = (0..nb).map(|b| el.value(b, *l)).collect();
            let divs: Vec<f64> = (0..nb).map(|b| el.divergence(b, *l)).collect();
            for i in 0..nb {
                for j in 0..nb {
                    el.gram[i * nb + j] += wa * (vals[i][0] * vals[j][0] + vals[i][1] * vals[j][1]);
                }
            }
            for k in 0..mu {
                el.mono_integrals[k] += wa * mv[k];
                for b in 0..nb {
                    div_moments[k * nb + b] += wa * mv[k] * divs[b];
                    comp_moments[k * nb + b][0] += wa * mv[k] * vals[b][0];
                    comp_moments[k * nb + b][1] += wa * mv[k] * vals[b][1];
                }
            }
        }
        el.div_moments = div_moments;
        el.comp_moments = comp_moments;
        Ok(el)
    }

    pub fn n_basis(&self) -> usize {
        2 * monomial_count(self.degree)
    }

    /// Dimension of P_{q−1} on the element.
    pub fn n_disp_monomials(&self) -> usize {
        monomial_count(self.degree - 1)
    }

    pub fn n_interior(&self) -> usize {
        self.n_basis() - 3 * (self.degree + 1)
    }

    pub fn value(&self, b: usize, l: [f64; 3]) -> Point {
        let m = monomials(l);
        let c = &self.coef[b];
        [(0..MAX_MONOMIALS).map(|k| c[0][k] * m[k]).sum(), (0..MAX_MONOMIALS).map(|k| c[1][k] * m[k]).sum()]
    }

    pub fn divergence(&self, b: usize, l: [f64; 3]) -> f64 {
        let g = monomial_grads(l, &self.geo.grad_lambda);
        let c = &self.coef[b];
        (0..MAX_MONOMIALS).map(|k| c[0][k] * g[k][0] + c[1][k] * g[k][1]).sum()
    }

    fn gram(&self, i: usize, j: usize) -> f64 {
        self.gram[i * self.n_basis() + j]
    }

    fn div_moment(&self, k: usize, b: usize) -> f64 {
        self.div_moments[k * self.n_basis() + b]
    }

    /// (μ_k, τ) for τ with row r equal to φ_b and the skew multiplier μ_k = m_k [[0, 1], [−1, 0]].
    fn skew_moment(&self, k: usize, r: usize, b: usize) -> f64 {
        let cm = self.comp_moments[k * self.n_basis() + b];
        if r == 0 {
            cm[1]
        } else {
            -cm[0]
        }
    }

    fn accumulate(&self, p: &mut TensorPoly, r: usize, b: usize, v: f64) {
        for c in 0..2 {
            for k in 0..MAX_MONOMIALS {
                p[r][c][k] += v * self.coef[b][c][k];
            }
        }
    }
}

/// Piecewise polynomial tensor field.
#[derive(Clone, Debug)]
pub struct StressField {
    pub mesh: Arc<TriMesh>,
    pub degree: usize,
    pub coeffs: Vec<TensorPoly>,
}

impl StressField {
    pub fn zeros(mesh: Arc<TriMesh>, degree: usize) -> Self {
        let n = mesh.n_elements();
        StressField { mesh, degree, coeffs: vec![[[[0.0; MAX_MONOMIALS]; 2]; 2]; n] }
    }

    pub fn value(&self, t: usize, l: [f64; 3]) -> Tensor {
        tensor_value(&self.coeffs[t], l)
    }

    pub fn divergence(&self, t: usize, geo: &ElementGeometry, l: [f64; 3]) -> Point {
        tensor_divergence(&self.coeffs[t], geo, l)
    }

    /// σ n_F on face `f` seen from element `t`, at face parameter `s`.
    pub fn normal_trace(&self, t: usize, f: usize, s: f64) -> Point {
        let l = crate::fem::face_bary(&self.mesh, t, f, s);
        mat_vec(self.value(t, l), self.mesh.face(f).normal)
    }

    pub fn sum(parts: &[&StressField]) -> StressField {
        let mut out = StressField::zeros(parts[0].mesh.clone(), parts[0].degree);
        for p in parts {
            for (o, c) in out.coeffs.iter_mut().zip(&p.coeffs) {
                for r in 0..2 {
                    for cc in 0..2 {
                        for k in 0..MAX_MONOMIALS {
                            o[r][cc][k] += c[r][cc][k];
                        }
                    }
                }
            }
        }
        out
    }

    /// L²(T) norm squared.
    pub fn norm2_element(&self, t: usize) -> f64 {
        let geo = ElementGeometry::of(&self.mesh, t);
        let rule = triangle_rule(2 * self.degree);
        rule.points
            .iter()
            .zip(&rule.weights)
            .map(|(l, w)| {
                let s = self.value(t, *l);
                w * (s[0][0].powi(2) + s[0][1].powi(2) + s[1][0].powi(2) + s[1][1].powi(2))
            })
            .sum::<f64>()
            * geo.area
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Dis,
    Reg,
    Lin,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Dis, Component::Reg, Component::Lin];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Component::Dis => "dis",
            Component::Reg => "reg",
            Component::Lin => "lin",
        }
    }
}

/// The reconstructed stress split into discretization, regularization and linearization parts.
#[derive(Clone, Debug)]
pub struct EquilibratedStress {
    pub dis: StressField,
    pub reg: StressField,
    pub lin: StressField,
    /// Newton iterate that produced the reconstruction, when known.
    pub iterate: Option<usize>,
}

impl EquilibratedStress {
    pub fn component(&self, c: Component) -> &StressField {
        match c {
            Component::Dis => &self.dis,
            Component::Reg => &self.reg,
            Component::Lin => &self.lin,
        }
    }

    pub fn total(&self) -> StressField {
        StressField::sum(&[&self.dis, &self.reg, &self.lin])
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.dis.mesh
    }
}

/// Contact traces of the current iterate (and, for a Newton step, of the linearization point)
/// with the scalar boundary data of the three components.
#[derive(Clone, Debug)]
pub struct ContactData {
    current: Vec<Option<ContactTrace>>,
    previous: Option<Vec<Option<ContactTrace>>>,
    delta: Option<f64>,
}

fn traces_by_face(mesh: &TriMesh, traces: Vec<ContactTrace>) -> Vec<Option<ContactTrace>> {
    let mut out = vec![None; mesh.n_faces()];
    for tr in traces {
        let f = tr.face;
        out[f] = Some(tr);
    }
    out
}

impl ContactData {
    /// Data of the exact projection: everything goes to the discretization component.
    pub fn exact(u: &DisplacementField, data: &ProblemData, gamma0: f64) -> Self {
        let cur = traces_by_face(u.mesh(), contact_traces(u, &data.coeff, gamma0));
        ContactData { current: cur, previous: None, delta: None }
    }

    /// Data of the iterate `u` of the problem linearized at `u_prev` with regularization `delta`.
    pub fn newton(u: &DisplacementField, u_prev: &DisplacementField, delta: f64, data: &ProblemData, gamma0: f64) -> Self {
        let cur = traces_by_face(u.mesh(), contact_traces(u, &data.coeff, gamma0));
        let prev = traces_by_face(u_prev.mesh(), contact_traces(u_prev, &data.coeff, gamma0));
        ContactData { current: cur, previous: Some(prev), delta: Some(delta) }
    }

    pub fn delta(&self) -> Option<f64> {
        self.delta
    }

    pub fn trace(&self, f: usize) -> Option<&ContactTrace> {
        self.current.get(f).and_then(|t| t.as_ref())
    }

    /// Kinks of every integrand on face `f`.
    pub fn breaks(&self, f: usize) -> Vec<f64> {
        let mut out = self.trace(f).map(|t| t.kinks(self.delta)).unwrap_or_default();
        if let (Some(prev), Some(d)) = (&self.previous, self.delta) {
            if let Some(tr) = prev[f].as_ref() {
                out.extend(tr.crossings(&[d, -d]));
            }
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup();
        out
    }

    /// [P]_{R⁻}, [P]_reg − [P]_{R⁻} and P_lin − [P]_reg at parameter `s` on face `f`.
    pub fn components(&self, f: usize, s: f64) -> [f64; 3] {
        let Some(tr) = self.trace(f) else {
            return [0.0; 3];
        };
        let p = tr.eval(s);
        let dis = proj_neg(p);
        match (self.delta, &self.previous) {
            (Some(d), Some(prev)) => {
                let reg = reg_proj(p, d).0;
                let pp = prev[f].as_ref().map_or(0.0, |t| t.eval(s));
                let (rv, dv) = reg_proj(pp, d);
                let plin = rv + dv * (p - pp);
                [dis, reg - dis, plin - reg]
            }
            _ => [dis, 0.0, 0.0],
        }
    }

    /// Linearized contact force P_lin (or [P]_{R⁻} for exact data).
    pub fn total(&self, f: usize, s: f64) -> f64 {
        self.components(f, s).iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EquilibrationConfig {
    /// Add the minimal per-element constant that makes every patch compatible with rigid
    /// rotations; without it the lowest-order reconstruction is only equilibrated up to the
    /// rotational Galerkin defect.
    pub compatibility_correction: bool,
}

impl Default for EquilibrationConfig {
    fn default() -> Self {
        EquilibrationConfig { compatibility_correction: true }
    }
}

/// Treatment of one patch face in the patch stress space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceStatus {
    /// Shared by two patch elements; normal moments are unknowns.
    Interior,
    /// On the Dirichlet boundary of a Dirichlet patch; unknown.
    Free,
    /// Normal trace fixed to zero.
    Zero,
    /// Normal trace fixed to the projected boundary datum.
    Data,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    Unknown(usize),
    Fixed { face: usize, k: usize },
}

/// Rigid mode b + w·(−(y − c_y), x − c_x)/scale, coefficients `[b_x, b_y, w]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidMode {
    pub coeffs: [f64; 3],
    pub center: Point,
    pub scale: f64,
}

impl RigidMode {
    pub fn eval(&self, x: Point) -> Point {
        let [bx, by, w] = self.coeffs;
        let s = w / self.scale;
        [bx - s * (x[1] - self.center[1]), by + s * (x[0] - self.center[0])]
    }

    /// Symmetric gradient, identically zero.
    pub fn strain(&self) -> Tensor {
        let s = self.coeffs[2] / self.scale;
        let g = [[0.0, -s], [s, 0.0]];
        crate::fem::sym(g)
    }
}

fn unit_mode(j: usize, center: Point, scale: f64) -> RigidMode {
    let mut coeffs = [0.0; 3];
    coeffs[j] = 1.0;
    RigidMode { coeffs, center, scale }
}

/// L²(ω_a)-orthonormal basis of the rigid motions on the patch of vertex `a`.
pub fn rigid_modes(mesh: &TriMesh, a: usize) -> [RigidMode; 3] {
    let center = mesh.vertex(a);
    let elements = mesh.vertex_elements(a);
    let scale = elements.iter().map(|&t| mesh.diameter(t)).fold(0.0, f64::max);
    let rule = triangle_rule(2);
    let inner = |p: &RigidMode, q: &RigidMode| -> f64 {
        elements
            .iter()
            .map(|&t| {
                let geo = ElementGeometry::of(mesh, t);
                rule.points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(l, w)| {
                        let x = geo.point(*l);
                        let (u, v) = (p.eval(x), q.eval(x));
                        w * (u[0] * v[0] + u[1] * v[1])
                    })
                    .sum::<f64>()
                    * geo.area
            })
            .sum()
    };
    let mut out = [0, 1, 2].map(|j| unit_mode(j, center, scale));
    for j in 0..3 {
        for i in 0..j {
            let proj = inner(&out[j], &out[i]);
            let qi = out[i].coeffs;
            for c in 0..3 {
                out[j].coeffs[c] -= proj * qi[c];
            }
        }
        let n = inner(&out[j], &out[j]).sqrt();
        for c in 0..3 {
            out[j].coeffs[c] /= n;
        }
    }
    out
}

/// The mixed finite element space of one vertex patch.
#[derive(Clone, Debug)]
pub struct PatchMixedSpace {
    pub patch: VertexPatch,
    /// Aligned with `patch.faces`.
    pub statuses: Vec<FaceStatus>,
    slots: Vec<[Vec<Slot>; 2]>,
    pub n_stress: usize,
    pub n_disp: usize,
    pub n_skew: usize,
    /// Three rigid-mode multipliers unless the vertex touches the Dirichlet boundary.
    pub n_rigid: usize,
    disp_monomials: usize,
}

impl PatchMixedSpace {
    pub fn new(mesh: &TriMesh, bdm: &[BdmElement], a: usize) -> Self {
        let patch = vertex_patch(mesh, a);
        let on_d = patch.kind == VertexKind::Dirichlet;
        let statuses: Vec<FaceStatus> = patch
            .faces
            .iter()
            .map(|&(_, kind)| match kind {
                PatchFaceKind::Inner => FaceStatus::Interior,
                PatchFaceKind::OuterInterior => FaceStatus::Zero,
                PatchFaceKind::OuterBoundary(BoundaryTag::Dirichlet) => {
                    if on_d {
                        FaceStatus::Free
                    } else {
                        FaceStatus::Zero
                    }
                }
                PatchFaceKind::OuterBoundary(_) => {
                    if patch.kind == VertexKind::Interior {
                        FaceStatus::Zero
                    } else {
                        FaceStatus::Data
                    }
                }
            })
            .collect();
        let q = bdm[patch.elements[0]].degree;
        let per_face = 2 * (q + 1);
        let mut face_base = vec![usize::MAX; patch.faces.len()];
        let mut n = 0;
        for (i, st) in statuses.iter().enumerate() {
            if matches!(st, FaceStatus::Interior | FaceStatus::Free) {
                face_base[i] = n;
                n += per_face;
            }
        }
        let mut slots = Vec::with_capacity(patch.elements.len());
        for &t in &patch.elements {
            let el = &bdm[t];
            let ni = el.n_interior();
            let mut rows = [Vec::new(), Vec::new()];
            for (r, row) in rows.iter_mut().enumerate() {
                for (i, &f) in el.faces.iter().enumerate() {
                    let pf = patch.faces.iter().position(|&(g, _)| g == f).expect("face of patch element");
                    for k in 0..=q {
                        row.push(if face_base[pf] == usize::MAX {
                            Slot::Fixed { face: pf, k }
                        } else {
                            Slot::Unknown(face_base[pf] + r * (q + 1) + k)
                        });
                    }
                    let _ = i;
                }
                for j in 0..ni {
                    row.push(Slot::Unknown(n + r * ni + j));
                }
            }
            n += 2 * ni;
            slots.push(rows);
        }
        let mu = monomial_count(q - 1);
        let ne = patch.elements.len();
        PatchMixedSpace {
            statuses,
            slots,
            n_stress: n,
            n_disp: 2 * mu * ne,
            n_skew: mu * ne,
            n_rigid: if on_d { 0 } else { 3 },
            disp_monomials: mu,
            patch,
        }
    }

    pub fn dim(&self) -> usize {
        self.n_stress + self.n_disp + self.n_skew + self.n_rigid
    }

    fn disp_index(&self, e: usize, r: usize, k: usize) -> usize {
        self.n_stress + e * 2 * self.disp_monomials + r * self.disp_monomials + k
    }

    fn skew_index(&self, e: usize, k: usize) -> usize {
        self.n_stress + self.n_disp + e * self.disp_monomials + k
    }

    /// Dense saddle matrix and one right-hand side per component.
    pub fn assemble(&self, bdm: &[BdmElement], src: &PatchSources) -> PatchSystem {
        let n = self.dim();
        let mu = self.disp_monomials;
        let mut a = DenseMatrix::zeros(n);
        let mut rhs = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let r0 = self.n_stress + self.n_disp + self.n_skew;
        for (e, &t) in self.patch.elements.iter().enumerate() {
            let el = &bdm[t];
            let nb = el.n_basis();
            for r in 0..2 {
                for bi in 0..nb {
                    match self.slots[e][r][bi] {
                        Slot::Unknown(i) => {
                            for bj in 0..nb {
                                let g = el.gram(bi, bj);
                                match self.slots[e][r][bj] {
                                    Slot::Unknown(j) => a.add(i, j, g),
                                    Slot::Fixed { face, k } => {
                                        for (c, rc) in rhs.iter_mut().enumerate() {
                                            rc[i] -= g * src.face_data[c][face][r][k];
                                        }
                                    }
                                }
                            }
                            rhs[0][i] += src.tau[e][r * nb + bi];
                            for k in 0..mu {
                                let (u, l) = (self.disp_index(e, r, k), self.skew_index(e, k));
                                let d = el.div_moment(k, bi);
                                let s = el.skew_moment(k, r, bi);
                                a.add(i, u, d);
                                a.add(u, i, d);
                                a.add(i, l, s);
                                a.add(l, i, s);
                            }
                        }
                        Slot::Fixed { face, k: kf } => {
                            for (c, rc) in rhs.iter_mut().enumerate() {
                                let g = src.face_data[c][face][r][kf];
                                if g == 0.0 {
                                    continue;
                                }
                                for k in 0..mu {
                                    rc[self.disp_index(e, r, k)] -= el.div_moment(k, bi) * g;
                                    rc[self.skew_index(e, k)] -= el.skew_moment(k, r, bi) * g;
                                }
                            }
                        }
                    }
                }
                for k in 0..mu {
                    let u = self.disp_index(e, r, k);
                    for (c, rc) in rhs.iter_mut().enumerate() {
                        rc[u] += src.moments[c][e * 2 * mu + r * mu + k];
                    }
                    if self.n_rigid > 0 {
                        for j in 0..3 {
                            let v = src.rigid[e][j][r][k];
                            a.add(r0 + j, u, v);
                            a.add(u, r0 + j, v);
                        }
                    }
                }
            }
        }
        PatchSystem { matrix: a, rhs }
    }

    /// Solves the patch problem for all three components; returns per patch element the
    /// stress polynomials and the largest rigid multiplier.
    pub fn solve(&self, bdm: &[BdmElement], src: &PatchSources) -> Result<([Vec<TensorPoly>; 3], f64), LinalgError> {
        let sys = self.assemble(bdm, src);
        // A patch whose normal moments are all prescribed (a lone corner element) is fully
        // determined by its boundary data.
        let fac = (self.n_stress > 0).then(|| SymmetricIndefinite::new(&sys.matrix));
        let r0 = self.n_stress + self.n_disp + self.n_skew;
        let mut out: [Vec<TensorPoly>; 3] = Default::default();
        let mut rho: f64 = 0.0;
        for c in 0..3 {
            let all_zero = sys.rhs[c].iter().all(|v| *v == 0.0)
                && src.face_data[c].iter().all(|f| f.iter().flatten().all(|v| *v == 0.0));
            let x = match &fac {
                Some(fac) if !all_zero => fac.solve(&sys.rhs[c])?,
                _ => vec![0.0; self.dim()],
            };
            for j in r0..self.dim() {
                rho = rho.max(x[j].abs());
            }
            out[c] = self
                .patch
                .elements
                .iter()
                .enumerate()
                .map(|(e, &t)| {
                    let el = &bdm[t];
                    let mut p = [[[0.0; MAX_MONOMIALS]; 2]; 2];
                    for r in 0..2 {
                        for (b, slot) in self.slots[e][r].iter().enumerate() {
                            let v = match *slot {
                                Slot::Unknown(i) => x[i],
                                Slot::Fixed { face, k } => src.face_data[c][face][r][k],
                            };
                            if v != 0.0 {
                                el.accumulate(&mut p, r, b, v);
                            }
                        }
                    }
                    p
                })
                .collect();
        }
        Ok((out, rho))
    }
}

/// Dense patch system, kept for inspection.
#[derive(Clone, Debug)]
pub struct PatchSystem {
    pub matrix: DenseMatrix,
    pub rhs: [Vec<f64>; 3],
}

impl PatchSystem {
    /// Plain-text dump: dimension, matrix rows, then the three right-hand sides.
    pub fn to_text(&self) -> String {
        let n = self.matrix.n;
        let mut s = format!("{n}\n");
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| format!("{:.16e}", self.matrix.at(i, j))).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        for r in &self.rhs {
            let row: Vec<String> = r.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }
}

/// Right-hand side data of one patch.
#[derive(Clone, Debug)]
pub struct PatchSources {
    /// Per element: ∫ ψ_a σ(u)_r · φ_b, indexed r·nb + b.
    pub tau: Vec<Vec<f64>>,
    /// Per component: moments of the volume source against e_r m_k, indexed e·2μ + r·μ + k.
    pub moments: [Vec<f64>; 3],
    /// Per component and patch face: normal moments [r][k] of the boundary datum.
    pub face_data: [Vec<[[f64; 3]; 2]>; 3],
    /// Per element: ∫ m_k (z_j)_r, indexed [j][r][k].
    pub rigid: Vec<[[[f64; 3]; 2]; 3]>,
}

/// Rigid shifts of the discretization and regularization sources of one patch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RigidCompatibilityData {
    /// Coefficients of y in the unscaled rigid basis about the vertex (b_x, b_y, w/scale).
    pub y: [f64; 3],
    pub y_tilde: [f64; 3],
}

/// Per-patch quantities computed before the patch solve.
struct PatchPrep {
    sources: PatchSources,
    /// B_•(z_j): boundary data paired with the rigid modes.
    boundary_pairing: [[f64; 3]; 3],
    /// (v_0, Π z_j) for the uncorrected discretization source.
    source_pairing: [f64; 3],
    /// Gram matrix (z_i, Π z_j).
    gram: [[f64; 3]; 3],
    center: Point,
    scale: f64,
}

#[derive(Clone, Debug, Default)]
pub struct EquilibrationDiagnostics {
    pub shifts: Vec<RigidCompatibilityData>,
    /// Largest rigid multiplier over all patches; zero when every patch problem is compatible.
    pub max_rigid_multiplier: f64,
    /// L² norm of the compatibility correction.
    pub correction_norm: f64,
}

/// Reusable reconstruction machinery on one mesh.
pub struct Equilibrator {
    mesh: Arc<TriMesh>,
    degree: usize,
    bdm: Vec<BdmElement>,
    spaces: Vec<PatchMixedSpace>,
    pub config: EquilibrationConfig,
}

impl Equilibrator {
    pub fn new(mesh: Arc<TriMesh>, degree: usize, config: EquilibrationConfig) -> Result<Self, EquilibrationError> {
        let bdm: Vec<BdmElement> = (0..mesh.n_elements())
            .into_par_iter()
            .map(|t| BdmElement::new(&mesh, t, degree))
            .collect::<Result<_, _>>()?;
        let spaces: Vec<PatchMixedSpace> =
            (0..mesh.n_vertices()).into_par_iter().map(|a| PatchMixedSpace::new(&mesh, &bdm, a)).collect();
        if degree == 1 {
            if let Some(sp) = spaces.iter().find(|sp| sp.n_rigid > 0 && sp.patch.elements.len() == 1) {
                return Err(EquilibrationError::LonePatch(sp.patch.vertex));
            }
        }
        Ok(Equilibrator { mesh, degree, bdm, spaces, config })
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn element(&self, t: usize) -> &BdmElement {
        &self.bdm[t]
    }

    pub fn patch_space(&self, a: usize) -> &PatchMixedSpace {
        &self.spaces[a]
    }

    fn rigid_proj(&self, z: &RigidMode, x: Point, xt: Point) -> Point {
        if self.degree == 1 {
            z.eval(xt)
        } else {
            z.eval(x)
        }
    }

    fn prepare(&self, a: usize, u: &DisplacementField, data: &ProblemData, contact: &ContactData) -> PatchPrep {
        let mesh = &*self.mesh;
        let space = &self.spaces[a];
        let q = self.degree;
        let mu = monomial_count(q - 1);
        let center = mesh.vertex(a);
        let scale = space.patch.elements.iter().map(|&t| mesh.diameter(t)).fold(0.0, f64::max);
        let modes = [0, 1, 2].map(|j| unit_mode(j, center, scale));
        let ne = space.patch.elements.len();
        let mut tau = Vec::with_capacity(ne);
        let mut moments0 = vec![0.0; 2 * mu * ne];
        let mut rigid = vec![[[[0.0; 3]; 2]; 3]; ne];
        let mut source_pairing = [0.0; 3];
        let mut gram = [[0.0; 3]; 3];
        let trule = triangle_rule(q + 5);
        for (e, &t) in space.patch.elements.iter().enumerate() {
            let el = &self.bdm[t];
            let geo = &el.geo;
            let ia = mesh.triangle(t).iter().position(|&v| v == a).unwrap();
            let gpsi = geo.grad_lambda[ia];
            let xt = mesh.centroid(t);
            let nb = el.n_basis();
            let mut te = vec![0.0; 2 * nb];
            for (l, w) in trule.points.iter().zip(&trule.weights) {
                let wa = w * geo.area;
                let x = geo.point(*l);
                let psi = l[ia];
                let sig = u.stress(&data.coeff, t, geo, *l);
                let f = (data.body_force)(x);
                let src = [
                    -psi * f[0] + sig[0][0] * gpsi[0] + sig[0][1] * gpsi[1],
                    -psi * f[1] + sig[1][0] * gpsi[0] + sig[1][1] * gpsi[1],
                ];
                let mv = monomials(*l);
                let zp = modes.map(|z| self.rigid_proj(&z, x, xt));
                for j in 0..3 {
                    source_pairing[j] += wa * (src[0] * zp[j][0] + src[1] * zp[j][1]);
                    let zj = modes[j].eval(x);
                    for i in 0..3 {
                        gram[i][j] += wa * (modes[i].eval(x)[0] * zp[j][0] + modes[i].eval(x)[1] * zp[j][1]);
                    }
                    for r in 0..2 {
                        for k in 0..mu {
                            rigid[e][j][r][k] += wa * mv[k] * zj[r];
                        }
                    }
                }
                for r in 0..2 {
                    for k in 0..mu {
                        moments0[e * 2 * mu + r * mu + k] += wa * mv[k] * src[r];
                    }
                    for b in 0..nb {
                        let phi = el.value(b, *l);
                        te[r * nb + b] += wa * psi * (sig[r][0] * phi[0] + sig[r][1] * phi[1]);
                    }
                }
            }
            tau.push(te);
        }

        let nf = space.patch.faces.len();
        let mut face_data: [Vec<[[f64; 3]; 2]>; 3] = [vec![[[0.0; 3]; 2]; nf], vec![[[0.0; 3]; 2]; nf], vec![[[0.0; 3]; 2]; nf]];
        let mut boundary_pairing = [[0.0; 3]; 3];
        for (pf, &(f, _)) in space.patch.faces.iter().enumerate() {
            if space.statuses[pf] != FaceStatus::Data {
                continue;
            }
            let face = mesh.face(f);
            if !face.vertices.contains(&a) {
                continue;
            }
            let n = face.normal;
            let (pts, contact_face) = match face.tag {
                Some(BoundaryTag::Neumann) => (split_rule(&[], q + 7), false),
                Some(BoundaryTag::Contact) => (split_rule(&contact.breaks(f), KINK_QUAD_DEGREE), true),
                _ => continue,
            };
            for (s, w) in pts {
                let x = mesh.face_point(f, s);
                let psi = face_param_weight(face, a, s);
                let wl = w * face.length * psi;
                let vals: [Point; 3] = if contact_face {
                    contact.components(f, s).map(|c| [c * n[0], c * n[1]])
                } else {
                    [(data.traction)(x), [0.0; 2], [0.0; 2]]
                };
                let zs = modes.map(|z| z.eval(x));
                for c in 0..3 {
                    let g = vals[c];
                    if g == [0.0, 0.0] {
                        continue;
                    }
                    for k in 0..=q {
                        let lk = legendre(k, 2.0 * s - 1.0);
                        for r in 0..2 {
                            face_data[c][pf][r][k] += wl * g[r] * lk;
                        }
                    }
                    for j in 0..3 {
                        boundary_pairing[c][j] += wl * (g[0] * zs[j][0] + g[1] * zs[j][1]);
                    }
                }
            }
        }
        PatchPrep {
            sources: PatchSources {
                tau,
                moments: [moments0, vec![0.0; 2 * mu * ne], vec![0.0; 2 * mu * ne]],
                face_data,
                rigid,
            },
            boundary_pairing,
            source_pairing,
            gram,
            center,
            scale,
        }
    }

    /// Minimal-norm per-element constants K_T (in Σ_T |T| |K_T|²) such that adding K_T ∇ψ_a to
    /// every patch source makes all non-Dirichlet patches compatible with the rigid modes.
    fn compatibility_correction(&self, preps: &[PatchPrep]) -> Result<Vec<Tensor>, EquilibrationError> {
        let mesh = &*self.mesh;
        let nv = mesh.n_vertices();
        let mut index = vec![usize::MAX; nv];
        let mut n = 0;
        for a in 0..nv {
            if self.spaces[a].n_rigid > 0 {
                index[a] = n;
                n += 3;
            }
        }
        let mut out = vec![[[0.0; 2]; 2]; mesh.n_elements()];
        if n == 0 {
            return Ok(out);
        }
        let mode_at = |a: usize, j: usize, x: Point| unit_mode(j, preps[a].center, preps[a].scale).eval(x);
        let mut b = SparseBuilder::new(n);
        for t in 0..mesh.n_elements() {
            let tri = mesh.triangle(t);
            let geo = &self.bdm[t].geo;
            let xt = mesh.centroid(t);
            for (ia, &va) in tri.iter().enumerate() {
                if index[va] == usize::MAX {
                    continue;
                }
                for (ib, &vb) in tri.iter().enumerate() {
                    if index[vb] == usize::MAX {
                        continue;
                    }
                    let gg = crate::fem::dot2(geo.grad_lambda[ia], geo.grad_lambda[ib]) * geo.area;
                    for j in 0..3 {
                        let za = mode_at(va, j, xt);
                        for l in 0..3 {
                            let zb = mode_at(vb, l, xt);
                            b.add(index[va] + j, index[vb] + l, gg * crate::fem::dot2(za, zb));
                        }
                    }
                }
            }
        }
        let mut rhs = vec![0.0; n];
        for a in 0..nv {
            if index[a] == usize::MAX {
                continue;
            }
            let p = &preps[a];
            for j in 0..3 {
                let bt: f64 = (0..3).map(|c| p.boundary_pairing[c][j]).sum();
                rhs[index[a] + j] = bt - p.source_pairing[j];
            }
        }
        let m = b.build();
        // A tiny ridge keeps the system regular when the rigid constraints are dependent
        // (pure traction problems); compatible defects are unaffected to working precision.
        let diag_max = (0..n).map(|i| m.get(i, i)).fold(0.0, f64::max);
        let mut b = m.to_builder();
        for i in 0..n {
            b.add(i, i, 1e-13 * diag_max);
        }
        let lu = b.build().factor().map_err(EquilibrationError::Compatibility)?;
        let mut lam = lu.solve(&rhs).map_err(EquilibrationError::Compatibility)?;
        for _ in 0..2 {
            let mr = m.mul_vec(&lam);
            let res: Vec<f64> = rhs.iter().zip(&mr).map(|(a, b)| a - b).collect();
            let dl = lu.solve(&res).map_err(EquilibrationError::Compatibility)?;
            lam.iter_mut().zip(&dl).for_each(|(l, d)| *l += d);
        }
        for t in 0..mesh.n_elements() {
            let tri = mesh.triangle(t);
            let geo = &self.bdm[t].geo;
            let xt = mesh.centroid(t);
            let mut k = [[0.0; 2]; 2];
            for (ia, &va) in tri.iter().enumerate() {
                if index[va] == usize::MAX {
                    continue;
                }
                for j in 0..3 {
                    let z = mode_at(va, j, xt);
                    let c = lam[index[va] + j];
                    for r in 0..2 {
                        for cc in 0..2 {
                            k[r][cc] += c * z[r] * geo.grad_lambda[ia][cc];
                        }
                    }
                }
            }
            out[t] = k;
        }
        Ok(out)
    }

    /// Reconstruction from the displacement `u` and the contact data of its state.
    pub fn reconstruct(
        &self,
        u: &DisplacementField,
        data: &ProblemData,
        contact: &ContactData,
    ) -> Result<(EquilibratedStress, EquilibrationDiagnostics), EquilibrationError> {
        if !Arc::ptr_eq(u.space.mesh_arc(), &self.mesh) && u.mesh().n_elements() != self.mesh.n_elements() {
            return Err(EquilibrationError::MeshMismatch);
        }
        let mesh = &*self.mesh;
        let q = self.degree;
        let mu = monomial_count(q - 1);
        let nv = mesh.n_vertices();
        let mut preps: Vec<PatchPrep> = (0..nv).into_par_iter().map(|a| self.prepare(a, u, data, contact)).collect();

        let correction = if self.config.compatibility_correction {
            self.compatibility_correction(&preps)?
        } else {
            vec![[[0.0; 2]; 2]; mesh.n_elements()]
        };
        let correction_norm = correction
            .iter()
            .enumerate()
            .map(|(t, k)| mesh.area(t) * (k[0][0].powi(2) + k[0][1].powi(2) + k[1][0].powi(2) + k[1][1].powi(2)))
            .sum::<f64>()
            .sqrt();

        type PatchResult = Result<([Vec<TensorPoly>; 3], f64, RigidCompatibilityData), EquilibrationError>;
        let results: Vec<PatchResult> = preps
            .par_iter_mut()
            .enumerate()
            .map(|(a, prep)| {
                let space = &self.spaces[a];
                let modes = [0, 1, 2].map(|j| unit_mode(j, prep.center, prep.scale));
                let mut pairing = prep.source_pairing;
                for (e, &t) in space.patch.elements.iter().enumerate() {
                    let geo = &self.bdm[t].geo;
                    let ia = mesh.triangle(t).iter().position(|&v| v == a).unwrap();
                    let kg = mat_vec(correction[t], geo.grad_lambda[ia]);
                    let xt = mesh.centroid(t);
                    for j in 0..3 {
                        let z = modes[j].eval(xt);
                        pairing[j] += geo.area * (kg[0] * z[0] + kg[1] * z[1]);
                    }
                    for r in 0..2 {
                        for k in 0..mu {
                            prep.sources.moments[0][e * 2 * mu + r * mu + k] += kg[r] * self.bdm[t].mono_integrals[k];
                        }
                    }
                }
                let mut shift = RigidCompatibilityData::default();
                if space.patch.kind == VertexKind::Boundary {
                    let mut g = DenseMatrix::zeros(3);
                    for i in 0..3 {
                        for j in 0..3 {
                            *g.at_mut(i, j) = prep.gram[i][j];
                        }
                    }
                    let ry: Vec<f64> = (0..3).map(|j| pairing[j] - prep.boundary_pairing[0][j]).collect();
                    let rt: Vec<f64> = (0..3).map(|j| -prep.boundary_pairing[1][j]).collect();
                    let err = |e| EquilibrationError::Patch { vertex: a, source: e };
                    let y = dense_solve(&g, &ry).map_err(err)?;
                    let yt = dense_solve(&g, &rt).map_err(err)?;
                    shift.y.copy_from_slice(&y);
                    shift.y_tilde.copy_from_slice(&yt);
                }
                for (e, rig) in prep.sources.rigid.iter().enumerate() {
                    for r in 0..2 {
                        for k in 0..mu {
                            let i = e * 2 * mu + r * mu + k;
                            let ym: f64 = (0..3).map(|j| shift.y[j] * rig[j][r][k]).sum();
                            let ytm: f64 = (0..3).map(|j| shift.y_tilde[j] * rig[j][r][k]).sum();
                            prep.sources.moments[0][i] -= ym;
                            prep.sources.moments[1][i] = -ytm;
                            prep.sources.moments[2][i] = ym + ytm;
                        }
                    }
                }
                let (polys, rho) = space
                    .solve(&self.bdm, &prep.sources)
                    .map_err(|e| EquilibrationError::Patch { vertex: a, source: e })?;
                Ok((polys, rho, shift))
            })
            .collect();

        let mut fields = [
            StressField::zeros(self.mesh.clone(), q),
            StressField::zeros(self.mesh.clone(), q),
            StressField::zeros(self.mesh.clone(), q),
        ];
        let mut diag = EquilibrationDiagnostics { correction_norm, ..Default::default() };
        for (a, res) in results.into_iter().enumerate() {
            let (polys, rho, shift) = res?;
            diag.max_rigid_multiplier = diag.max_rigid_multiplier.max(rho);
            diag.shifts.push(shift);
            for c in 0..3 {
                for (e, &t) in self.spaces[a].patch.elements.iter().enumerate() {
                    let dst = &mut fields[c].coeffs[t];
                    let p = &polys[c][e];
                    for r in 0..2 {
                        for cc in 0..2 {
                            for k in 0..MAX_MONOMIALS {
                                dst[r][cc][k] += p[r][cc][k];
                            }
                        }
                    }
                }
            }
        }
        let [dis, reg, lin] = fields;
        Ok((EquilibratedStress { dis, reg, lin, iterate: None }, diag))
    }
}

/// Single-component reconstruction for a converged solution with the exact projection.
pub fn construct_sigma(
    u: &DisplacementField,
    data: &ProblemData,
    gamma0: f64,
    config: EquilibrationConfig,
) -> Result<(EquilibratedStress, ContactData), EquilibrationError> {
    let eq = Equilibrator::new(u.space.mesh_arc().clone(), u.space.degree(), config)?;
    let contact = ContactData::exact(u, data, gamma0);
    let (s, _) = eq.reconstruct(u, data, &contact)?;
    Ok((s, contact))
}

/// Reconstruction of a Newton iterate `u_k` (linearized at `u_prev`) split into components.
pub fn construct_sigma_split(
    u_k: &DisplacementField,
    u_prev: &DisplacementField,
    delta: f64,
    data: &ProblemData,
    gamma0: f64,
    config: EquilibrationConfig,
) -> Result<(EquilibratedStress, ContactData), EquilibrationError> {
    let eq = Equilibrator::new(u_k.space.mesh_arc().clone(), u_k.space.degree(), config)?;
    let contact = ContactData::newton(u_k, u_prev, delta, data, gamma0);
    let (s, _) = eq.reconstruct(u_k, data, &contact)?;
    Ok((s, contact))
}

/// Relative residuals of the properties the reconstruction must satisfy.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AuditReport {
    /// Normal-trace jumps across interior faces, over all components.
    pub hdiv_jump: f64,
    /// Moments of div σ + f against P_{q−1}.
    pub divergence: f64,
    /// Moments of σn − g_N on Neumann faces against P_q.
    pub neumann: f64,
    /// Moments of σ_• n − (datum_•) n on contact faces, per component.
    pub contact: [f64; 3],
    /// Moments of the skew part against P_{q−1}.
    pub weak_symmetry: f64,
    /// Tangential traction on contact faces at quadrature points.
    pub tangential: f64,
}

impl AuditReport {
    pub fn worst(&self) -> f64 {
        [self.hdiv_jump, self.divergence, self.neumann, self.weak_symmetry, self.tangential]
            .into_iter()
            .chain(self.contact)
            .fold(0.0, f64::max)
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// ‖Π_{P_{deg}(T)} g‖_T for a vector field g sampled by `g(l)`.
fn element_projection_norm(geo: &ElementGeometry, deg: usize, g: impl Fn([f64; 3]) -> Point) -> f64 {
    let m = monomial_count(deg);
    let rule = triangle_rule(2 * deg + 6);
    let mut mass = DenseMatrix::zeros(m);
    let mut mom = [vec![0.0; m], vec![0.0; m]];
    for (l, w) in rule.points.iter().zip(&rule.weights) {
        let wa = w * geo.area;
        let mv = monomials(*l);
        let v = g(*l);
        for i in 0..m {
            for j in 0..m {
                mass.add(i, j, wa * mv[i] * mv[j]);
            }
            mom[0][i] += wa * mv[i] * v[0];
            mom[1][i] += wa * mv[i] * v[1];
        }
    }
    let mut n2 = 0.0;
    for mo in &mom {
        if let Ok(x) = dense_solve(&mass, mo) {
            n2 += crate::linalg::dot(&x, mo);
        }
    }
    n2.max(0.0).sqrt()
}

/// ‖Π_{P_deg(F)} g‖_F for g sampled at face parameters.
fn face_projection_norm(length: f64, deg: usize, breaks: &[f64], g: impl Fn(f64) -> Point) -> f64 {
    let pts = split_rule(breaks, KINK_QUAD_DEGREE.max(2 * deg + 6));
    let mut n2 = 0.0;
    for k in 0..=deg {
        let mut m = [0.0; 2];
        for &(s, w) in &pts {
            let v = g(s);
            let lk = legendre(k, 2.0 * s - 1.0);
            m[0] += w * v[0] * lk;
            m[1] += w * v[1] * lk;
        }
        n2 += (2 * k + 1) as f64 * (m[0] * m[0] + m[1] * m[1]);
    }
    (n2 * length).sqrt()
}

/// Checks H(div) conformity, equilibrium, boundary moments, weak symmetry and the zero tangential
/// trace on the contact boundary.
pub fn audit(stress: &EquilibratedStress, data: &ProblemData, contact: &ContactData) -> AuditReport {
    let mesh = &**stress.mesh();
    let q = stress.dis.degree;
    let total = stress.total();
    let comps = [&stress.dis, &stress.reg, &stress.lin, &total];
    let lrule = line_rule(2 * q + 2);
    let mut rep = AuditReport::default();

    let mut scale: f64 = 0.0;
    let mut jump: f64 = 0.0;
    for (f, face) in mesh.faces().iter().enumerate() {
        for (s, _) in lrule.points.iter().zip(&lrule.weights) {
            for c in comps {
                let a = c.normal_trace(face.owner, f, *s);
                scale = scale.max(a[0].abs()).max(a[1].abs());
                if let Some(nb) = face.neighbor {
                    let b = c.normal_trace(nb, f, *s);
                    jump = jump.max((a[0] - b[0]).abs()).max((a[1] - b[1]).abs());
                }
            }
        }
    }
    rep.hdiv_jump = ratio(jump, scale);

    let mut div_num: f64 = 0.0;
    let (mut f2, mut d2, mut s2, mut skew_num) = (0.0, 0.0, 0.0, 0.0f64);
    for t in 0..mesh.n_elements() {
        let geo = ElementGeometry::of(mesh, t);
        let n = element_projection_norm(&geo, q - 1, |l| {
            let d = total.divergence(t, &geo, l);
            let f = (data.body_force)(geo.point(l));
            [d[0] + f[0], d[1] + f[1]]
        });
        div_num = div_num.max(n);
        let rule = triangle_rule(2 * q + 6);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let f = (data.body_force)(geo.point(*l));
            let d = total.divergence(t, &geo, *l);
            f2 += w * geo.area * (f[0] * f[0] + f[1] * f[1]);
            d2 += w * geo.area * (d[0] * d[0] + d[1] * d[1]);
        }
        for c in comps {
            s2 += c.norm2_element(t);
            let n = element_projection_norm(&geo, q - 1, |l| {
                let s = c.value(t, l);
                [s[0][1] - s[1][0], 0.0]
            });
            skew_num = skew_num.max(n);
        }
    }
    rep.divergence = ratio(div_num, f2.sqrt() + d2.sqrt() + (s2 / mesh.total_area()).sqrt());
    rep.weak_symmetry = ratio(skew_num, s2.sqrt());

    let (mut nnum, mut nden) = (0.0f64, 0.0f64);
    for f in mesh.boundary_faces(BoundaryTag::Neumann) {
        let face = mesh.face(f);
        let t = face.owner;
        let d = face_projection_norm(face.length, q, &[], |s| {
            let a = total.normal_trace(t, f, s);
            let g = (data.traction)(mesh.face_point(f, s));
            [a[0] - g[0], a[1] - g[1]]
        });
        nnum = nnum.max(d);
        nden += face_projection_norm(face.length, q, &[], |s| (data.traction)(mesh.face_point(f, s))).powi(2)
            + face_projection_norm(face.length, q, &[], |s| total.normal_trace(t, f, s)).powi(2);
    }
    rep.neumann = ratio(nnum, nden.sqrt());

    let mut cnum = [0.0f64; 3];
    let mut cden = [0.0f64; 3];
    let mut tang: f64 = 0.0;
    for f in mesh.boundary_faces(BoundaryTag::Contact) {
        let face = mesh.face(f);
        let (t, n) = (face.owner, face.normal);
        let br = contact.breaks(f);
        for (ci, c) in comps[..3].iter().enumerate() {
            let d = face_projection_norm(face.length, q, &br, |s| {
                let a = c.normal_trace(t, f, s);
                let g = contact.components(f, s)[ci];
                [a[0] - g * n[0], a[1] - g * n[1]]
            });
            cnum[ci] = cnum[ci].max(d);
            cden[ci] += face_projection_norm(face.length, q, &br, |s| {
                let g = contact.components(f, s)[ci];
                [g * n[0], g * n[1]]
            })
            .powi(2)
                + face_projection_norm(face.length, q, &br, |s| c.normal_trace(t, f, s)).powi(2);
            for s in &lrule.points {
                let a = c.normal_trace(t, f, *s);
                tang = tang.max((-a[0] * n[1] + a[1] * n[0]).abs());
            }
        }
    }
    for ci in 0..3 {
        rep.contact[ci] = ratio(cnum[ci], (cden[0] + cden[ci]).sqrt());
    }
    rep.tangential = ratio(tang, scale);
    rep
}
