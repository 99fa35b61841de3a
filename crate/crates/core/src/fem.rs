//! Lagrange spaces of degree 1 and 2, elasticity assembly and face polynomials.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{SparseBuilder, SparseMatrix};
use crate::mesh::{BoundaryTag, Point, TriMesh};
use crate::quadrature::{bary_to_point, line_rule, triangle_rule};

#[derive(Debug, Error)]
pub enum FemError {
    #[error("unsupported Lagrange degree {0} (1 or 2)")]
    Degree(usize),
    #[error("invalid material: E={young}, nu={poisson}")]
    Material { young: f64, poisson: f64 },
    #[error("invalid Lame pair: lambda={lambda}, mu={mu}")]
    Lame { lambda: f64, mu: f64 },
    #[error("face {0} is not a boundary face")]
    NotBoundary(usize),
    #[error("coefficient vector has length {got}, space has {expected} dofs")]
    Length { expected: usize, got: usize },
}

pub type Tensor = [[f64; 2]; 2];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElasticityCoefficients {
    pub lambda: f64,
    pub mu: f64,
}

impl ElasticityCoefficients {
    pub fn new(lambda: f64, mu: f64) -> Result<Self, FemError> {
        if !(mu > 0.0) || !(2.0 * lambda + 2.0 * mu > 0.0) || !lambda.is_finite() || !mu.is_finite() {
            return Err(FemError::Lame { lambda, mu });
        }
        Ok(ElasticityCoefficients { lambda, mu })
    }

    /// Plane-strain Lame parameters.
    pub fn plane_strain(young: f64, poisson: f64) -> Result<Self, FemError> {
        if !(young > 0.0) || !(poisson > -1.0 && poisson < 0.5) {
            return Err(FemError::Material { young, poisson });
        }
        let lambda = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson));
        let mu = young / (2.0 * (1.0 + poisson));
        ElasticityCoefficients::new(lambda, mu)
    }

    /// A τ = λ tr(τ) I + 2μ τ.
    pub fn apply(&self, eps: Tensor) -> Tensor {
        let tr = eps[0][0] + eps[1][1];
        [
            [self.lambda * tr + 2.0 * self.mu * eps[0][0], 2.0 * self.mu * eps[0][1]],
            [2.0 * self.mu * eps[1][0], self.lambda * tr + 2.0 * self.mu * eps[1][1]],
        ]
    }

    pub fn stress_from_grad(&self, g: Tensor) -> Tensor {
        self.apply(sym(g))
    }
}

pub fn sym(g: Tensor) -> Tensor {
    let off = 0.5 * (g[0][1] + g[1][0]);
    [[g[0][0], off], [off, g[1][1]]]
}

pub fn frob(a: Tensor, b: Tensor) -> f64 {
    a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1]
}

pub fn mat_vec(a: Tensor, v: Point) -> Point {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

pub fn dot2(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Affine data of one triangle.
#[derive(Clone, Copy, Debug)]
pub struct ElementGeometry {
    pub points: [Point; 3],
    pub area: f64,
    /// Gradients of the barycentric coordinates.
    pub grad_lambda: [Point; 3],
}

impl ElementGeometry {
    pub fn new(points: [Point; 3]) -> Self {
        let [p0, p1, p2] = points;
        let two_a = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]);
        let g = |a: Point, b: Point| [(a[1] - b[1]) / two_a, (b[0] - a[0]) / two_a];
        ElementGeometry { points, area: 0.5 * two_a, grad_lambda: [g(p1, p2), g(p2, p0), g(p0, p1)] }
    }

    pub fn of(mesh: &TriMesh, t: usize) -> Self {
        ElementGeometry::new(mesh.triangle_points(t))
    }

    pub fn point(&self, l: [f64; 3]) -> Point {
        bary_to_point(&self.points, l)
    }

    /// Barycentric coordinates of a physical point.
    pub fn bary(&self, x: Point) -> [f64; 3] {
        let p0 = self.points[0];
        let d = [x[0] - p0[0], x[1] - p0[1]];
        let l1 = dot2(self.grad_lambda[1], d);
        let l2 = dot2(self.grad_lambda[2], d);
        [1.0 - l1 - l2, l1, l2]
    }
}

pub fn local_count(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

/// Scalar shape functions at barycentric point `l`. P2 ordering: vertices, then the edge
/// opposite vertex 0, 1, 2.
pub fn shape_values(degree: usize, l: [f64; 3]) -> [f64; 6] {
    let mut out = [0.0; 6];
    match degree {
        1 => out[..3].copy_from_slice(&l),
        _ => {
            for i in 0..3 {
                out[i] = l[i] * (2.0 * l[i] - 1.0);
                out[3 + i] = 4.0 * l[(i + 1) % 3] * l[(i + 2) % 3];
            }
        }
    }
    out
}

pub fn shape_grads(degree: usize, l: [f64; 3], gl: &[Point; 3]) -> [Point; 6] {
    let mut out = [[0.0; 2]; 6];
    match degree {
        1 => out[..3].copy_from_slice(gl),
        _ => {
            for i in 0..3 {
                let s = 4.0 * l[i] - 1.0;
                out[i] = [s * gl[i][0], s * gl[i][1]];
                let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                out[3 + i] = [
                    4.0 * (l[j] * gl[k][0] + l[k] * gl[j][0]),
                    4.0 * (l[j] * gl[k][1] + l[k] * gl[j][1]),
                ];
            }
        }
    }
    out
}

/// Vector Lagrange space on a mesh with Dirichlet faces constrained.
#[derive(Debug)]
pub struct LagrangeSpace {
    mesh: Arc<TriMesh>,
    degree: usize,
    n_nodes: usize,
    dirichlet_nodes: Vec<bool>,
}

impl LagrangeSpace {
    pub fn new(mesh: Arc<TriMesh>, degree: usize) -> Result<Self, FemError> {
        if degree != 1 && degree != 2 {
            return Err(FemError::Degree(degree));
        }
        let n_nodes = if degree == 1 { mesh.n_vertices() } else { mesh.n_vertices() + mesh.n_faces() };
        let mut dirichlet_nodes = vec![false; n_nodes];
        for f in mesh.boundary_faces(BoundaryTag::Dirichlet) {
            for v in mesh.face(f).vertices {
                dirichlet_nodes[v] = true;
            }
            if degree == 2 {
                dirichlet_nodes[mesh.n_vertices() + f] = true;
            }
        }
        Ok(LagrangeSpace { mesh, degree, n_nodes, dirichlet_nodes })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.n_nodes
    }

    pub fn n_free_dofs(&self) -> usize {
        2 * self.dirichlet_nodes.iter().filter(|d| !**d).count()
    }

    pub fn local_nodes(&self, t: usize) -> [usize; 6] {
        let tri = self.mesh.triangle(t);
        let mut out = [0; 6];
        out[..3].copy_from_slice(&tri);
        if self.degree == 2 {
            let faces = self.mesh.element_faces(t);
            for i in 0..3 {
                out[3 + i] = self.mesh.n_vertices() + faces[i];
            }
        }
        out
    }

    pub fn n_local(&self) -> usize {
        local_count(self.degree)
    }

    pub fn node_point(&self, node: usize) -> Point {
        let nv = self.mesh.n_vertices();
        if node < nv {
            self.mesh.vertex(node)
        } else {
            let [a, b] = self.mesh.face(node - nv).vertices;
            let (pa, pb) = (self.mesh.vertex(a), self.mesh.vertex(b));
            [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0]
        }
    }

    pub fn is_constrained_node(&self, node: usize) -> bool {
        self.dirichlet_nodes[node]
    }

    /// Constrained dofs in ascending order.
    pub fn constrained_dofs(&self) -> Vec<usize> {
        (0..self.n_nodes).filter(|&n| self.dirichlet_nodes[n]).flat_map(|n| [2 * n, 2 * n + 1]).collect()
    }

    /// Nodal interpolant of a vector field.
    pub fn interpolate(&self, f: impl Fn(Point) -> [f64; 2]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs()];
        for n in 0..self.n_nodes {
            let v = f(self.node_point(n));
            out[2 * n] = v[0];
            out[2 * n + 1] = v[1];
        }
        out
    }

    /// Zeroes the constrained entries of `coeffs`.
    pub fn apply_homogeneous(&self, coeffs: &mut [f64]) {
        for d in self.constrained_dofs() {
            coeffs[d] = 0.0;
        }
    }
}

/// Coefficient vector over a Lagrange space.
#[derive(Clone, Debug)]
pub struct DisplacementField {
    pub space: Arc<LagrangeSpace>,
    pub coeffs: Vec<f64>,
}

impl DisplacementField {
    pub fn new(space: Arc<LagrangeSpace>, coeffs: Vec<f64>) -> Result<Self, FemError> {
        if coeffs.len() != space.n_dofs() {
            return Err(FemError::Length { expected: space.n_dofs(), got: coeffs.len() });
        }
        Ok(DisplacementField { space, coeffs })
    }

    pub fn zeros(space: Arc<LagrangeSpace>) -> Self {
        let n = space.n_dofs();
        DisplacementField { space, coeffs: vec![0.0; n] }
    }

    pub fn mesh(&self) -> &TriMesh {
        self.space.mesh()
    }

    pub fn value(&self, t: usize, l: [f64; 3]) -> Point {
        let nodes = self.space.local_nodes(t);
        let phi = shape_values(self.space.degree, l);
        let mut u = [0.0; 2];
        for i in 0..self.space.n_local() {
            u[0] += phi[i] * self.coeffs[2 * nodes[i]];
            u[1] += phi[i] * self.coeffs[2 * nodes[i] + 1];
        }
        u
    }

    /// Displacement gradient, `g[c][d] = ∂u_c/∂x_d`.
    pub fn grad(&self, t: usize, geo: &ElementGeometry, l: [f64; 3]) -> Tensor {
        let nodes = self.space.local_nodes(t);
        let dphi = shape_grads(self.space.degree, l, &geo.grad_lambda);
        let mut g = [[0.0; 2]; 2];
        for i in 0..self.space.n_local() {
            for c in 0..2 {
                let uc = self.coeffs[2 * nodes[i] + c];
                g[c][0] += uc * dphi[i][0];
                g[c][1] += uc * dphi[i][1];
            }
        }
        g
    }

    pub fn stress(&self, coeff: &ElasticityCoefficients, t: usize, geo: &ElementGeometry, l: [f64; 3]) -> Tensor {
        coeff.stress_from_grad(self.grad(t, geo, l))
    }

    /// Barycentric coordinates (in the owner element) of the point at parameter `s` on face `f`.
    pub fn face_bary(&self, t: usize, f: usize, s: f64) -> [f64; 3] {
        face_bary(self.mesh(), t, f, s)
    }

    /// σ^n = n·σ(u)n and the tangential traction σ(u)n − σ^n n on boundary face `f` at parameter `s`.
    pub fn normal_stress_trace(&self, coeff: &ElasticityCoefficients, f: usize, s: f64) -> Result<(f64, Point), FemError> {
        let mesh = self.mesh();
        let face = mesh.face(f);
        if !face.is_boundary() {
            return Err(FemError::NotBoundary(f));
        }
        let t = face.owner;
        let geo = ElementGeometry::of(mesh, t);
        let sigma = self.stress(coeff, t, &geo, face_bary(mesh, t, f, s));
        let n = face.normal;
        let traction = mat_vec(sigma, n);
        let sn = dot2(traction, n);
        Ok((sn, [traction[0] - sn * n[0], traction[1] - sn * n[1]]))
    }

    /// Normal stress trace on a boundary face as a polynomial of degree p − 1 in the face parameter.
    pub fn normal_stress_poly(&self, coeff: &ElasticityCoefficients, f: usize) -> Result<FacePoly, FemError> {
        self.normal_stress_trace(coeff, f, 0.5)?;
        let deg = self.space.degree - 1;
        Ok(project_face(|s| self.normal_stress_trace(coeff, f, s).map_or(0.0, |v| v.0), deg, &[], deg))
    }
}

/// Barycentric coordinates in element `t` of the point at parameter `s` ∈ [0, 1] on face `f`,
/// measured from the lower-index vertex.
pub fn face_bary(mesh: &TriMesh, t: usize, f: usize, s: f64) -> [f64; 3] {
    let [lo, hi] = mesh.face(f).vertices;
    let tri = mesh.triangle(t);
    let mut l = [0.0; 3];
    for i in 0..3 {
        if tri[i] == lo {
            l[i] = 1.0 - s;
        } else if tri[i] == hi {
            l[i] = s;
        }
    }
    l
}

/// Polynomial on a face in the Legendre basis of t = 2s − 1.
#[derive(Clone, Debug, PartialEq)]
pub struct FacePoly {
    pub coeffs: Vec<f64>,
}

pub fn legendre(k: usize, t: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => t,
        2 => 1.5 * t * t - 0.5,
        _ => {
            let (mut p0, mut p1) = (1.0, t);
            for j in 2..=k {
                let p2 = ((2 * j - 1) as f64 * t * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    }
}

impl FacePoly {
    pub fn zero(degree: usize) -> Self {
        FacePoly { coeffs: vec![0.0; degree + 1] }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, s: f64) -> f64 {
        let t = 2.0 * s - 1.0;
        self.coeffs.iter().enumerate().map(|(k, c)| c * legendre(k, t)).sum()
    }

    /// Squared L² norm on a face of unit length.
    pub fn norm2_unit(&self) -> f64 {
        self.coeffs.iter().enumerate().map(|(k, c)| c * c / (2 * k + 1) as f64).sum()
    }
}

/// Integrates `g` over [0, 1], splitting at `breaks` and using Gauss rules of `degree` on each piece.
pub fn integrate_unit(g: impl Fn(f64) -> f64, breaks: &[f64], degree: usize) -> f64 {
    let rule = line_rule(degree);
    let mut pts = Vec::with_capacity(breaks.len() + 2);
    pts.push(0.0);
    pts.extend(breaks.iter().copied().filter(|b| *b > 0.0 && *b < 1.0));
    pts.push(1.0);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a <= 0.0 {
            continue;
        }
        let mut piece = 0.0;
        for (x, wt) in rule.points.iter().zip(&rule.weights) {
            piece += wt * g(a + (b - a) * x);
        }
        total += (b - a) * piece;
    }
    total
}

/// L² projection of `g` onto polynomials of degree `degree` on a face parametrised by s ∈ [0, 1].
/// The projection is independent of the face length.
pub fn project_face(g: impl Fn(f64) -> f64, degree: usize, breaks: &[f64], quad_degree: usize) -> FacePoly {
    let coeffs = (0..=degree)
        .map(|k| {
            let m = integrate_unit(|s| g(s) * legendre(k, 2.0 * s - 1.0), breaks, quad_degree + k);
            (2 * k + 1) as f64 * m
        })
        .collect();
    FacePoly { coeffs }
}

/// Element stiffness for the vector Lagrange basis, ordered as dof `2*i + c`.
pub fn element_stiffness(degree: usize, geo: &ElementGeometry, coeff: &ElasticityCoefficients) -> Vec<f64> {
    let nl = local_count(degree);
    let nd = 2 * nl;
    let mut k = vec![0.0; nd * nd];
    let rule = triangle_rule(2 * degree - 2);
    for (l, w) in rule.points.iter().zip(&rule.weights) {
        let dphi = shape_grads(degree, *l, &geo.grad_lambda);
        let wa = w * geo.area;
        for i in 0..nl {
            for ci in 0..2 {
                let mut gi = [[0.0; 2]; 2];
                gi[ci] = dphi[i];
                let si = coeff.stress_from_grad(gi);
                for j in 0..nl {
                    for cj in 0..2 {
                        // ε(φ_j e_cj) : σ(φ_i e_ci) = σ_i[cj] · ∇φ_j
                        let v = si[cj][0] * dphi[j][0] + si[cj][1] * dphi[j][1];
                        k[(2 * i + ci) * nd + 2 * j + cj] += wa * v;
                    }
                }
            }
        }
    }
    k
}

pub fn assemble_elastic_stiffness(space: &LagrangeSpace, coeff: &ElasticityCoefficients) -> SparseMatrix {
    let mesh = space.mesh();
    let nl = space.n_local();
    let nd = 2 * nl;
    let locals: Vec<Vec<f64>> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|t| element_stiffness(space.degree(), &ElementGeometry::of(mesh, t), coeff))
        .collect();
    let mut b = SparseBuilder::with_capacity(space.n_dofs(), mesh.n_elements() * nd * nd);
    for (t, k) in locals.iter().enumerate() {
        let nodes = space.local_nodes(t);
        for i in 0..nd {
            let gi = 2 * nodes[i / 2] + i % 2;
            for j in 0..nd {
                b.add(gi, 2 * nodes[j / 2] + j % 2, k[i * nd + j]);
            }
        }
    }
    b.build()
}

/// Body force and traction data.
pub type VectorField = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

/// L(v) = (f, v) + (g_N, v)_{Γ_N}.
pub fn assemble_load(space: &LagrangeSpace, f: &VectorField, g_n: &VectorField) -> Vec<f64> {
    let mesh = space.mesh();
    let deg = space.degree();
    let nl = space.n_local();
    let mut out = vec![0.0; space.n_dofs()];
    let rule = triangle_rule(deg + 6);
    for t in 0..mesh.n_elements() {
        let geo = ElementGeometry::of(mesh, t);
        let nodes = space.local_nodes(t);
        for (l, w) in rule.points.iter().zip(&rule.weights) {
            let fv = f(geo.point(*l));
            let phi = shape_values(deg, *l);
            for i in 0..nl {
                out[2 * nodes[i]] += w * geo.area * fv[0] * phi[i];
                out[2 * nodes[i] + 1] += w * geo.area * fv[1] * phi[i];
            }
        }
    }
    let lrule = line_rule(deg + 8);
    for fid in mesh.boundary_faces(BoundaryTag::Neumann) {
        let face = mesh.face(fid);
        let t = face.owner;
        let nodes = space.local_nodes(t);
        for (s, w) in lrule.points.iter().zip(&lrule.weights) {
            let x = mesh.face_point(fid, *s);
            let g = g_n(x);
            let phi = shape_values(deg, face_bary(mesh, t, fid, *s));
            for i in 0..nl {
                out[2 * nodes[i]] += w * face.length * g[0] * phi[i];
                out[2 * nodes[i] + 1] += w * face.length * g[1] * phi[i];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_strain_values() {
        let c = ElasticityCoefficients::plane_strain(1.0, 0.3).unwrap();
        assert!((c.mu - 1.0 / 2.6).abs() < 1e-15);
        assert!((c.lambda - 0.3 / (1.3 * 0.4)).abs() < 1e-15);
    }

    #[test]
    fn legendre_projection_of_abs() {
        let p = project_face(|s| (2.0 * s - 1.0).abs(), 1, &[0.5], 4);
        assert!((p.coeffs[0] - 0.5).abs() < 1e-14);
        assert!(p.coeffs[1].abs() < 1e-14);
    }
}
