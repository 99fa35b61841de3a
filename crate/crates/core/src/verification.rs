//! Independent checks of a computed state: residual lifting, fine reference solutions, error
//! norms against them, effectivity indices and convergence rates.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::equilibration::split_rule;
use crate::fem::{
    dot2, face_bary, mat_vec, shape_grads, shape_values, DisplacementField, ElementGeometry, FemError, LagrangeSpace, Tensor,
};
use crate::linalg::{dot, LinalgError, SparseBuilder};
use crate::mesh::{refine, uniform_refine, BoundaryTag, MeshError, Point, TriMesh};
use crate::nitsche::{contact_traces, proj_neg, ContactSolver, ContactTrace, NitscheConfig, NitscheError, KINK_QUAD_DEGREE};
use crate::problem::{BenchmarkSpec, ProblemData};
use crate::quadrature::{line_rule, triangle_rule};

#[derive(Debug, Error)]
pub enum VerificationError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Nitsche(#[from] NitscheError),
    #[error("error measure is zero, effectivity indices are undefined")]
    Degenerate,
    #[error("rate fit needs at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("point ({}, {}) lies outside the mesh", .0[0], .0[1])]
    Outside(Point),
    #[error("contact face {0} has no parent contact face")]
    ParentFace(usize),
}

/// Space in which the residual is lifted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Enrichment {
    /// Quadratic elements on the same mesh.
    #[default]
    HigherDegree,
    /// Quadratic elements on one uniform refinement; contact face sizes stay those of the coarse mesh.
    UniformRefinement,
}

#[derive(Clone, Debug)]
pub struct LiftingResult {
    pub z: DisplacementField,
    /// [‖∇z‖² + Σ_F h_F^{-1}‖z‖_F²]^{1/2}, a lower approximation of the residual dual norm.
    pub norm: f64,
}

fn grad_vec_inner(a: Tensor, b: Tensor) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

/// Parameter of the orthogonal projection of `x` onto face `f`.
fn face_param(mesh: &TriMesh, f: usize, x: Point) -> f64 {
    let (a, b) = (mesh.face_point(f, 0.0), mesh.face_point(f, 1.0));
    let d = [b[0] - a[0], b[1] - a[1]];
    dot2([x[0] - a[0], x[1] - a[1]], d) / dot2(d, d)
}

/// Contact face of `coarse` element `t` containing the contact face `f` of `fine`.
fn parent_contact_face(coarse: &TriMesh, t: usize, fine: &TriMesh, f: usize) -> Result<usize, VerificationError> {
    let m = fine.face_point(f, 0.5);
    coarse
        .element_tagged_faces(t, BoundaryTag::Contact)
        .find(|&g| {
            let s = face_param(coarse, g, m);
            let p = coarse.face_point(g, s);
            let d = ((p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2)).sqrt();
            (0.0..=1.0).contains(&s) && d <= 1e-9 * coarse.face(g).length
        })
        .ok_or(VerificationError::ParentFace(f))
}

/// Solves (∇z, ∇v) + Σ_{F∈F_C} h_F^{-1}(z, v)_F = ⟨R(u), v⟩ over the enriched space with homogeneous
/// Dirichlet conditions, where ⟨R(u), v⟩ = L(v) − a(u, v) + ([P(u)]_{R⁻}, v·n)_{Γ_C}.
pub fn lift_residual(
    u: &DisplacementField,
    data: &ProblemData,
    gamma0: f64,
    enrichment: Enrichment,
) -> Result<LiftingResult, VerificationError> {
    let coarse = u.space.mesh_arc().clone();
    let (mesh, parent) = match enrichment {
        Enrichment::HigherDegree => (coarse.clone(), (0..coarse.n_elements()).collect::<Vec<_>>()),
        Enrichment::UniformRefinement => {
            let (m, p) = uniform_refine(&coarse)?;
            (Arc::new(m), p)
        }
    };
    let space = Arc::new(LagrangeSpace::new(mesh.clone(), 2)?);
    let nl = space.n_local();
    let coeff = &data.coeff;

    let elems: Vec<(Vec<f64>, Vec<f64>)> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|t| {
            let geo = ElementGeometry::of(&mesh, t);
            let pt = parent[t];
            let pgeo = ElementGeometry::of(&coarse, pt);
            let mut k = vec![0.0; nl * nl];
            let mut r = vec![0.0; 2 * nl];
            let rule = triangle_rule(8);
            for (l, w) in rule.points.iter().zip(&rule.weights) {
                let wa = w * geo.area;
                let x = geo.point(*l);
                let dphi = shape_grads(2, *l, &geo.grad_lambda);
                let phi = shape_values(2, *l);
                let sig = u.stress(coeff, pt, &pgeo, pgeo.bary(x));
                let f = (data.body_force)(x);
                for i in 0..nl {
                    for j in 0..nl {
                        k[i * nl + j] += wa * dot2(dphi[i], dphi[j]);
                    }
                    for c in 0..2 {
                        r[2 * i + c] += wa * (f[c] * phi[i] - dot2(sig[c], dphi[i]));
                    }
                }
            }
            (k, r)
        })
        .collect();

    let mut b = SparseBuilder::with_capacity(space.n_dofs(), mesh.n_elements() * 4 * nl * nl);
    let mut rhs = vec![0.0; space.n_dofs()];
    for (t, (k, r)) in elems.iter().enumerate() {
        let nodes = space.local_nodes(t);
        for i in 0..nl {
            for c in 0..2 {
                rhs[2 * nodes[i] + c] += r[2 * i + c];
                for j in 0..nl {
                    b.add(2 * nodes[i] + c, 2 * nodes[j] + c, k[i * nl + j]);
                }
            }
        }
    }

    let lrule = line_rule(8);
    for f in mesh.boundary_faces(BoundaryTag::Neumann) {
        let face = mesh.face(f);
        let nodes = space.local_nodes(face.owner);
        for (s, w) in lrule.points.iter().zip(&lrule.weights) {
            let g = (data.traction)(mesh.face_point(f, *s));
            let phi = shape_values(2, face_bary(&mesh, face.owner, f, *s));
            for i in 0..nl {
                for c in 0..2 {
                    rhs[2 * nodes[i] + c] += w * face.length * g[c] * phi[i];
                }
            }
        }
    }

    let traces: Vec<ContactTrace> = contact_traces(u, coeff, gamma0);
    let mut by_face = vec![None; coarse.n_faces()];
    for tr in &traces {
        by_face[tr.face] = Some(tr);
    }
    for f in mesh.boundary_faces(BoundaryTag::Contact) {
        let face = mesh.face(f);
        let pf = parent_contact_face(&coarse, parent[face.owner], &mesh, f)?;
        let tr = by_face[pf].ok_or(VerificationError::ParentFace(f))?;
        let h_f = coarse.face(pf).length;
        let (s0, s1) = (face_param(&coarse, pf, mesh.face_point(f, 0.0)), face_param(&coarse, pf, mesh.face_point(f, 1.0)));
        let breaks: Vec<f64> = tr.kinks(None).iter().map(|s| (s - s0) / (s1 - s0)).collect();
        let nodes = space.local_nodes(face.owner);
        let n = face.normal;
        for (s, w) in split_rule(&breaks, KINK_QUAD_DEGREE) {
            let wl = w * face.length;
            let p = proj_neg(tr.eval(s0 + s * (s1 - s0)));
            let phi = shape_values(2, face_bary(&mesh, face.owner, f, s));
            for i in 0..nl {
                for c in 0..2 {
                    rhs[2 * nodes[i] + c] += wl * p * phi[i] * n[c];
                    for j in 0..nl {
                        b.add(2 * nodes[i] + c, 2 * nodes[j] + c, wl / h_f * phi[i] * phi[j]);
                    }
                }
            }
        }
    }

    let mut a = b.build();
    let constraints: Vec<(usize, f64)> = space.constrained_dofs().into_iter().map(|d| (d, 0.0)).collect();
    a.constrain(&mut rhs, &constraints);
    let z = a.solve(&rhs)?;
    let norm = dot(&rhs, &z).max(0.0).sqrt();
    Ok(LiftingResult { z: DisplacementField::new(space, z)?, norm })
}

/// Bucket grid for locating points in a triangulation.
pub struct PointLocator {
    mesh: Arc<TriMesh>,
    geo: Vec<ElementGeometry>,
    origin: Point,
    cell: f64,
    dims: [usize; 2],
    buckets: Vec<Vec<u32>>,
}

impl PointLocator {
    pub fn new(mesh: Arc<TriMesh>) -> Self {
        let geo: Vec<ElementGeometry> = (0..mesh.n_elements()).map(|t| ElementGeometry::of(&mesh, t)).collect();
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in mesh.vertices() {
            for c in 0..2 {
                lo[c] = lo[c].min(v[c]);
                hi[c] = hi[c].max(v[c]);
            }
        }
        let cell = (mesh.total_area() / mesh.n_elements() as f64).sqrt().max(1e-300);
        let dims = [0, 1].map(|c| (((hi[c] - lo[c]) / cell).ceil() as usize).max(1));
        let mut buckets = vec![Vec::new(); dims[0] * dims[1]];
        let index = |x: f64, c: usize| (((x - lo[c]) / cell).floor().max(0.0) as usize).min(dims[c] - 1);
        for (t, g) in geo.iter().enumerate() {
            let bx = [0, 1].map(|c| {
                let vals = g.points.map(|p| p[c]);
                (index(vals.iter().copied().fold(f64::INFINITY, f64::min), c), index(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max), c))
            });
            for i in bx[0].0..=bx[0].1 {
                for j in bx[1].0..=bx[1].1 {
                    buckets[j * dims[0] + i].push(t as u32);
                }
            }
        }
        PointLocator { mesh, geo, origin: lo, cell, dims, buckets }
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn geometry(&self, t: usize) -> &ElementGeometry {
        &self.geo[t]
    }

    /// Element containing `x` and its barycentric coordinates; among several candidates the one
    /// where `x` lies deepest inside.
    pub fn locate(&self, x: Point) -> Option<(usize, [f64; 3])> {
        let idx = [0, 1].map(|c| ((x[c] - self.origin[c]) / self.cell).floor());
        if idx.iter().zip(&self.dims).any(|(i, d)| *i < -1.0 || *i > *d as f64) {
            return None;
        }
        let idx = [0, 1].map(|c| (idx[c].max(0.0) as usize).min(self.dims[c] - 1));
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &t in &self.buckets[idx[1] * self.dims[0] + idx[0]] {
            let l = self.geo[t as usize].bary(x);
            let m = l[0].min(l[1]).min(l[2]);
            if best.is_none_or(|b| m > b.2) {
                best = Some((t as usize, l, m));
            }
        }
        best.filter(|b| b.2 >= -1e-9).map(|b| (b.0, b.1))
    }

    /// Elements whose bounding box may overlap the bounding box of `pts`, ascending.
    fn candidates(&self, pts: &[Point]) -> Vec<usize> {
        let range = |c: usize| {
            let lo = pts.iter().map(|p| p[c]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[c]).fold(f64::NEG_INFINITY, f64::max);
            let idx = |x: f64| ((((x - self.origin[c]) / self.cell).floor().max(0.0)) as usize).min(self.dims[c] - 1);
            (idx(lo), idx(hi))
        };
        let (rx, ry) = (range(0), range(1));
        let mut out: Vec<usize> = (ry.0..=ry.1)
            .flat_map(|j| (rx.0..=rx.1).map(move |i| (i, j)))
            .flat_map(|(i, j)| self.buckets[j * self.dims[0] + i].iter().map(|t| *t as usize))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Clips a convex polygon against the counter-clockwise triangle `tri`.
fn clip_to_triangle(poly: &[Point], tri: &[Point; 3]) -> Vec<Point> {
    let mut out = poly.to_vec();
    for k in 0..3 {
        let (a, b) = (tri[k], tri[(k + 1) % 3]);
        let side = |p: Point| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut out);
        for (i, &p) in input.iter().enumerate() {
            let q = input[(i + 1) % input.len()];
            let (sp, sq) = (side(p), side(q));
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
        if out.len() < 3 {
            return Vec::new();
        }
    }
    out
}

/// Integrand degree handled exactly by [`overlay_sum`].
const OVERLAY_QUAD_DEGREE: usize = 6;

/// Integrates `g(x, (t_a, λ_a), (t_b, λ_b))` over the domain covered by both meshes, exactly for
/// integrands that are polynomials of degree ≤ 6 on every intersection T_a ∩ T_b.
fn overlay_sum<const K: usize>(
    a: &PointLocator,
    b: &PointLocator,
    g: impl Fn(Point, (usize, [f64; 3]), (usize, [f64; 3])) -> [f64; K] + Sync,
) -> [f64; K] {
    let rule = triangle_rule(OVERLAY_QUAD_DEGREE);
    let parts: Vec<[f64; K]> = (0..a.mesh.n_elements())
        .into_par_iter()
        .map(|ta| {
            let ga = &a.geo[ta];
            let mut acc = [0.0; K];
            let tol = 1e-14 * ga.area;
            for tb in b.candidates(&ga.points) {
                let gb = &b.geo[tb];
                let poly = clip_to_triangle(&ga.points, &gb.points);
                for i in 1..poly.len().saturating_sub(1) {
                    let piece = ElementGeometry::new([poly[0], poly[i], poly[i + 1]]);
                    if piece.area <= tol {
                        continue;
                    }
                    for (l, w) in rule.points.iter().zip(&rule.weights) {
                        let x = piece.point(*l);
                        let v = g(x, (ta, ga.bary(x)), (tb, gb.bary(x)));
                        for k in 0..K {
                            acc[k] += w * piece.area * v[k];
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = [0.0; K];
    for p in parts {
        for k in 0..K {
            total[k] += p[k];
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorNorms {
    /// ‖ū − u‖_{1,Ω}
    pub h1: f64,
    /// a(ū − u, ū − u)^{1/2}
    pub energy: f64,
}

/// A reference solution with its point locator.
pub struct Reference {
    pub field: DisplacementField,
    pub locator: PointLocator,
}

impl Reference {
    pub fn new(field: DisplacementField) -> Self {
        let locator = PointLocator::new(field.space.mesh_arc().clone());
        Reference { field, locator }
    }

    pub fn grad_at(&self, x: Point) -> Result<Tensor, VerificationError> {
        let (t, l) = self.locator.locate(x).ok_or(VerificationError::Outside(x))?;
        Ok(self.field.grad(t, &self.locator.geo[t], l))
    }
}

/// H¹ and energy norms of ū − u, integrated on the overlay of both meshes.
pub fn error_norms(u: &DisplacementField, reference: &Reference, data: &ProblemData) -> Result<ErrorNorms, VerificationError> {
    let own = PointLocator::new(u.space.mesh_arc().clone());
    let coeff = &data.coeff;
    let rf = &reference.field;
    let rl = &reference.locator;
    let eval = |x: Point, (tu, lu): (usize, [f64; 3]), (tr, lr): (usize, [f64; 3])| {
        let _ = x;
        let du = u.value(tu, lu);
        let dr = rf.value(tr, lr);
        let gu = u.grad(tu, &own.geo[tu], lu);
        let gr = rf.grad(tr, &rl.geo[tr], lr);
        let e = [[gr[0][0] - gu[0][0], gr[0][1] - gu[0][1]], [gr[1][0] - gu[1][0], gr[1][1] - gu[1][1]]];
        let s = coeff.stress_from_grad(e);
        [
            (dr[0] - du[0]).powi(2) + (dr[1] - du[1]).powi(2),
            grad_vec_inner(e, e),
            grad_vec_inner(s, e),
        ]
    };
    let [l2, semi, en] = if own.mesh.n_elements() >= rl.mesh.n_elements() {
        overlay_sum(&own, rl, eval)
    } else {
        overlay_sum(rl, &own, |x, r, o| eval(x, o, r))
    };
    Ok(ErrorNorms { h1: (l2 + semi).max(0.0).sqrt(), energy: en.max(0.0).sqrt() })
}

/// Lower and upper error measures and the resulting effectivity indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticPair {
    /// μ^{1/2} a(ū − u, ū − u)^{1/2}
    pub lower: f64,
    /// (2λ + 4μ)^{1/2} a(ū − u, ū − u)^{1/2} + [Σ_{F∈F_C} h_F ‖σ^n(ū) − [P(u)]_{R⁻}‖_F²]^{1/2}
    pub upper: f64,
    pub i_eff_low: f64,
    pub i_eff_up: f64,
}

/// Σ_{F∈F_C} h_F ‖σ^n(ū) − [P(u)]_{R⁻}‖_F², splitting at the kinks of [P(u)]_{R⁻} and at the
/// reference mesh vertices.
pub fn contact_face_term(u: &DisplacementField, reference: &Reference, data: &ProblemData, gamma0: f64) -> Result<f64, VerificationError> {
    let mesh = u.mesh();
    let rmesh = reference.locator.mesh.clone();
    let rverts: Vec<Point> = rmesh.boundary_faces(BoundaryTag::Contact).flat_map(|f| rmesh.face(f).vertices).map(|v| rmesh.vertex(v)).collect();
    let mut total = 0.0;
    for tr in contact_traces(u, &data.coeff, gamma0) {
        let f = tr.face;
        let face = mesh.face(f);
        let n = face.normal;
        let mut breaks = tr.kinks(None);
        for x in &rverts {
            let s = face_param(mesh, f, *x);
            let p = mesh.face_point(f, s);
            if s > 0.0 && s < 1.0 && ((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2)).sqrt() <= 1e-9 * face.length {
                breaks.push(s);
            }
        }
        breaks.sort_by(f64::total_cmp);
        let mut acc = 0.0;
        for (s, w) in split_rule(&breaks, KINK_QUAD_DEGREE) {
            let x = mesh.face_point(f, s);
            // Nudge inside so the reference element is the one adjacent to the face.
            let inner = [x[0] - 1e-12 * n[0], x[1] - 1e-12 * n[1]];
            let g = reference.grad_at(inner).or_else(|_| reference.grad_at(x))?;
            let sn = dot2(mat_vec(data.coeff.stress_from_grad(g), n), n);
            acc += w * (sn - proj_neg(tr.eval(s))).powi(2);
        }
        total += face.length * face.length * acc;
    }
    Ok(total)
}

pub fn diagnostics(
    u: &DisplacementField,
    reference: &Reference,
    eta_tot: f64,
    data: &ProblemData,
    gamma0: f64,
) -> Result<(DiagnosticPair, ErrorNorms), VerificationError> {
    let norms = error_norms(u, reference, data)?;
    let (lambda, mu) = (data.coeff.lambda, data.coeff.mu);
    let lower = mu.sqrt() * norms.energy;
    let upper = (2.0 * lambda + 4.0 * mu).sqrt() * norms.energy + contact_face_term(u, reference, data, gamma0)?.sqrt();
    if lower <= 0.0 || upper <= 0.0 {
        return Err(VerificationError::Degenerate);
    }
    Ok((DiagnosticPair { lower, upper, i_eff_low: eta_tot / lower, i_eff_up: eta_tot / upper }, norms))
}

/// Settings for the fine reference computation.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceConfig {
    /// Target element diameter of the background mesh.
    pub h: f64,
    /// Elements within this distance of a singular point are refined once per level, the radius
    /// halving each level.
    pub grading_radius: f64,
    pub grading_levels: usize,
    pub gamma0: f64,
    pub delta_init: f64,
    pub delta_final: f64,
    /// δ is multiplied by this factor between continuation rounds.
    pub delta_factor: f64,
    pub newton_tol: f64,
    pub max_iters: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            h: 0.02,
            grading_radius: 0.1,
            grading_levels: 2,
            gamma0: 100.0,
            delta_init: 1.0,
            delta_final: 1e-4,
            delta_factor: 0.01,
            newton_tol: 1e-12,
            max_iters: 60,
        }
    }
}

/// Background mesh with element diameter at most `cfg.h`, locally refined around `singular` points.
pub fn reference_mesh(spec: &BenchmarkSpec, cfg: &ReferenceConfig, singular: &[Point]) -> Result<TriMesh, MeshError> {
    let cell = cfg.h / std::f64::consts::SQRT_2;
    let fine = BenchmarkSpec {
        nx: ((spec.rect.x1 - spec.rect.x0) / cell).ceil() as usize,
        ny: (spec.rect.height() / cell).ceil() as usize,
        ..spec.clone()
    };
    let mut mesh = fine.mesh()?;
    let mut radius = cfg.grading_radius;
    for _ in 0..cfg.grading_levels {
        let marked: Vec<usize> = (0..mesh.n_elements())
            .filter(|&t| {
                let c = mesh.centroid(t);
                singular.iter().any(|p| ((c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2)).sqrt() < radius)
            })
            .collect();
        mesh = refine(&mesh, &marked)?.mesh;
        radius /= 2.0;
    }
    Ok(mesh)
}

/// Quadratic solution on the reference mesh by δ-continuation with warm-started Newton.
pub fn reference_solution(spec: &BenchmarkSpec, cfg: &ReferenceConfig) -> Result<DisplacementField, VerificationError> {
    let mesh = reference_mesh(spec, cfg, &spec.dirichlet_endpoints())?;
    let space = Arc::new(LagrangeSpace::new(Arc::new(mesh), 2)?);
    let solver = ContactSolver::new(space, spec.data()?, cfg.gamma0)?;
    let mut u = solver.initial_field();
    let mut delta = cfg.delta_init;
    loop {
        let ncfg = NitscheConfig { gamma0: cfg.gamma0, delta, newton_tol: cfg.newton_tol, max_iters: cfg.max_iters };
        let (next, trace, _) = solver.newton_solve(&u, &ncfg, |_, _| false)?;
        log::info!("reference: δ = {delta:.3e}, {} Newton steps", trace.iterates.len());
        u = next;
        if delta <= cfg.delta_final * (1.0 + 1e-12) {
            break;
        }
        delta = (delta * cfg.delta_factor).max(cfg.delta_final);
    }
    Ok(u)
}

/// Maximal interval of the contact boundary where P(u) = σ^n(u) − γ u·n < 0, as abscissae.
pub fn contact_interval(u: &DisplacementField, data: &ProblemData, gamma0: f64) -> Option<(f64, f64)> {
    let mesh = u.mesh();
    let mut pieces: Vec<(f64, f64)> = Vec::new();
    for tr in contact_traces(u, &data.coeff, gamma0) {
        let mut pts = vec![0.0];
        pts.extend(tr.crossings(&[0.0]));
        pts.push(1.0);
        for w in pts.windows(2) {
            if tr.eval(0.5 * (w[0] + w[1])) < 0.0 {
                let (a, b) = (mesh.face_point(tr.face, w[0])[0], mesh.face_point(tr.face, w[1])[0]);
                pieces.push((a.min(b), a.max(b)));
            }
        }
    }
    pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for p in pieces {
        match merged.last_mut() {
            Some(last) if p.0 <= last.1 + 1e-12 => last.1 = last.1.max(p.1),
            _ => merged.push(p),
        }
    }
    merged.into_iter().max_by(|a, b| (a.1 - a.0).total_cmp(&(b.1 - b.0)))
}

/// Negated least-squares slope of log(error) against log(dofs) over the last ⌈n/2⌉ points.
pub fn convergence_rate(dofs: &[usize], errors: &[f64]) -> Result<f64, VerificationError> {
    let n = dofs.len().min(errors.len());
    if n < 4 {
        return Err(VerificationError::InsufficientData { needed: 4, got: n });
    }
    let k = n.div_ceil(2);
    let xs: Vec<f64> = dofs[n - k..n].iter().map(|d| (*d as f64).ln()).collect();
    let ys: Vec<f64> = errors[n - k..n].iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / k as f64, ys.iter().sum::<f64>() / k as f64);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(-sxy / sxx)
}
