//! Nitsche treatment of unilateral contact and its regularized Newton linearization.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::fem::{
    assemble_elastic_stiffness, assemble_load, dot2, face_bary, mat_vec, shape_grads, shape_values, DisplacementField,
    ElasticityCoefficients, ElementGeometry, LagrangeSpace,
};
use crate::linalg::{norm, LinalgError, SparseMatrix};
use crate::mesh::BoundaryTag;
use crate::problem::ProblemData;
use crate::quadrature::line_rule;

#[derive(Debug, Error)]
pub enum NitscheError {
    #[error("Nitsche parameter must be positive (got {0})")]
    Gamma(f64),
    #[error("regularization width must be positive (got {0})")]
    Delta(f64),
    #[error("linear solve: {0}")]
    Linalg(#[from] LinalgError),
    #[error("face {0} is not a contact face")]
    NotContact(usize),
}

/// [x]_{R⁻} = min(x, 0).
pub fn proj_neg(x: f64) -> f64 {
    x.min(0.0)
}

/// C¹ regularization of [x]_{R⁻} on |x| < δ; returns value and derivative.
pub fn reg_proj(x: f64, delta: f64) -> (f64, f64) {
    if x <= -delta {
        (x, 1.0)
    } else if x < delta {
        (-x * x / (4.0 * delta) + 0.5 * x - 0.25 * delta, 0.5 - x / (2.0 * delta))
    } else {
        (0.0, 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NitscheConfig {
    pub gamma0: f64,
    pub delta: f64,
    pub newton_tol: f64,
    pub max_iters: usize,
}

impl NitscheConfig {
    pub fn new(gamma0: f64, delta: f64) -> Result<Self, NitscheError> {
        let cfg = NitscheConfig { gamma0, delta, newton_tol: 1e-10, max_iters: 50 };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), NitscheError> {
        if !(self.gamma0 > 0.0) || !self.gamma0.is_finite() {
            return Err(NitscheError::Gamma(self.gamma0));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(NitscheError::Delta(self.delta));
        }
        Ok(())
    }
}

/// Face quadrature used wherever a projection appears (applied per smooth piece).
pub const KINK_QUAD_DEGREE: usize = 10;

/// P^n_{1,γ}(u) = σ^n(u) − γ u·n on one contact face, as a polynomial in the face parameter s.
#[derive(Clone, Debug)]
pub struct ContactTrace {
    pub face: usize,
    pub owner: usize,
    pub gamma: f64,
    pub length: f64,
    /// Monomial coefficients in s ∈ [0, 1] (degree ≤ 2).
    pub poly: [f64; 3],
}

impl ContactTrace {
    pub fn eval(&self, s: f64) -> f64 {
        self.poly[0] + s * (self.poly[1] + s * self.poly[2])
    }

    /// Parameters in (0, 1) where P crosses any of the given levels, ascending.
    pub fn crossings(&self, levels: &[f64]) -> Vec<f64> {
        let [c0, c1, c2] = self.poly;
        let scale = c0.abs() + c1.abs() + c2.abs();
        let mut out = Vec::new();
        for &lv in levels {
            let a = c2;
            let b = c1;
            let c = c0 - lv;
            if a.abs() <= 1e-14 * scale {
                if b.abs() > 1e-14 * scale {
                    out.push(-c / b);
                }
            } else {
                let disc = b * b - 4.0 * a * c;
                if disc >= 0.0 {
                    let q = -0.5 * (b + b.signum() * disc.sqrt());
                    if q != 0.0 {
                        out.push(q / a);
                        out.push(c / q);
                    } else {
                        out.push(0.0);
                    }
                }
            }
        }
        out.retain(|s| *s > 0.0 && *s < 1.0);
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup();
        out
    }

    /// Breakpoints for integrands involving [P]_{R⁻} and [P]_{reg,δ}.
    pub fn kinks(&self, delta: Option<f64>) -> Vec<f64> {
        match delta {
            Some(d) => self.crossings(&[0.0, d, -d]),
            None => self.crossings(&[0.0]),
        }
    }
}

/// Values of P^n_{1,γ}(u) = σ^n(u) − (γ0/h_T) u·n at parameter `s` on the boundary face `f`.
pub fn p1gamma(u: &DisplacementField, coeff: &ElasticityCoefficients, gamma0: f64, f: usize, s: f64) -> Result<f64, NitscheError> {
    let mesh = u.mesh();
    let face = mesh.face(f);
    if face.tag != Some(BoundaryTag::Contact) {
        return Err(NitscheError::NotContact(f));
    }
    let t = face.owner;
    let geo = ElementGeometry::of(mesh, t);
    let l = face_bary(mesh, t, f, s);
    let sigma = u.stress(coeff, t, &geo, l);
    let n = face.normal;
    let sn = dot2(mat_vec(sigma, n), n);
    Ok(sn - gamma0 / mesh.diameter(t) * dot2(u.value(t, l), n))
}

/// Contact traces of `u` on every contact face, in face order.
pub fn contact_traces(u: &DisplacementField, coeff: &ElasticityCoefficients, gamma0: f64) -> Vec<ContactTrace> {
    let mesh = u.mesh();
    mesh.boundary_faces(BoundaryTag::Contact)
        .map(|f| {
            let vals = [0.0, 0.5, 1.0].map(|s| p1gamma(u, coeff, gamma0, f, s).expect("contact face"));
            // Exact quadratic through s = 0, 1/2, 1.
            let c0 = vals[0];
            let c2 = 2.0 * (vals[0] - 2.0 * vals[1] + vals[2]);
            let c1 = vals[2] - vals[0] - c2;
            let owner = mesh.face(f).owner;
            ContactTrace {
                face: f,
                owner,
                gamma: gamma0 / mesh.diameter(owner),
                length: mesh.face(f).length,
                poly: [c0, c1, c2],
            }
        })
        .collect()
}

/// Per-step state of a Newton iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct NewtonIterate {
    pub iteration: usize,
    pub increment_norm: f64,
    pub residual_norm: f64,
    /// Contact face quadrature points with P < δ.
    pub active_points: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NewtonTrace {
    pub iterates: Vec<NewtonIterate>,
    pub converged: bool,
}

/// Why a Newton loop stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NewtonExit {
    Callback,
    Increment,
    MaxIterations,
}

/// The discrete contact problem on one mesh: stiffness, load and contact faces.
pub struct ContactSolver {
    pub space: Arc<LagrangeSpace>,
    pub data: ProblemData,
    pub gamma0: f64,
    stiffness: SparseMatrix,
    load: Vec<f64>,
    contact_faces: Vec<usize>,
    constraints: Vec<(usize, f64)>,
}

impl ContactSolver {
    pub fn new(space: Arc<LagrangeSpace>, data: ProblemData, gamma0: f64) -> Result<Self, NitscheError> {
        if !(gamma0 > 0.0) {
            return Err(NitscheError::Gamma(gamma0));
        }
        let stiffness = assemble_elastic_stiffness(&space, &data.coeff);
        let load = assemble_load(&space, &data.body_force, &data.traction);
        let contact_faces = space.mesh().boundary_faces(BoundaryTag::Contact).collect();
        let g = space.interpolate(|x| (data.dirichlet)(x));
        let constraints = space.constrained_dofs().into_iter().map(|d| (d, g[d])).collect();
        Ok(ContactSolver { space, data, gamma0, stiffness, load, contact_faces, constraints })
    }

    pub fn stiffness(&self) -> &SparseMatrix {
        &self.stiffness
    }

    pub fn load(&self) -> &[f64] {
        &self.load
    }

    pub fn contact_faces(&self) -> &[usize] {
        &self.contact_faces
    }

    pub fn constraints(&self) -> &[(usize, f64)] {
        &self.constraints
    }

    /// Field with the Dirichlet values imposed and zero elsewhere.
    pub fn initial_field(&self) -> DisplacementField {
        let mut c = vec![0.0; self.space.n_dofs()];
        for &(d, v) in &self.constraints {
            c[d] = v;
        }
        DisplacementField { space: self.space.clone(), coeffs: c }
    }

    pub fn field(&self, coeffs: Vec<f64>) -> DisplacementField {
        DisplacementField { space: self.space.clone(), coeffs }
    }

    pub fn traces(&self, u: &DisplacementField) -> Vec<ContactTrace> {
        contact_traces(u, &self.data.coeff, self.gamma0)
    }

    /// Per contact face: local dof indices, and at each quadrature point the weight, the test
    /// normal traces φ_i·n and the values P(φ_j).
    fn face_loop(
        &self,
        trace: &ContactTrace,
        breaks: &[f64],
        mut visit: impl FnMut(&[usize; 12], f64, f64, &[f64; 12], &[f64; 12]),
    ) {
        let mesh = self.space.mesh();
        let deg = self.space.degree();
        let nl = self.space.n_local();
        let t = trace.owner;
        let f = trace.face;
        let geo = ElementGeometry::of(mesh, t);
        let n = mesh.face(f).normal;
        let nodes = self.space.local_nodes(t);
        let mut dofs = [0usize; 12];
        for i in 0..nl {
            dofs[2 * i] = 2 * nodes[i];
            dofs[2 * i + 1] = 2 * nodes[i] + 1;
        }
        let coeff = &self.data.coeff;
        let rule = line_rule(KINK_QUAD_DEGREE);
        let mut pts = vec![0.0];
        pts.extend_from_slice(breaks);
        pts.push(1.0);
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            for (x, wt) in rule.points.iter().zip(&rule.weights) {
                let s = a + (b - a) * x;
                let l = face_bary(mesh, t, f, s);
                let phi = shape_values(deg, l);
                let dphi = shape_grads(deg, l, &geo.grad_lambda);
                let mut test = [0.0; 12];
                let mut pvals = [0.0; 12];
                for i in 0..nl {
                    for c in 0..2 {
                        let k = 2 * i + c;
                        test[k] = phi[i] * n[c];
                        let mut g = [[0.0; 2]; 2];
                        g[c] = dphi[i];
                        let sig = coeff.stress_from_grad(g);
                        pvals[k] = dot2(mat_vec(sig, n), n) - trace.gamma * test[k];
                    }
                }
                visit(&dofs, s, wt * (b - a) * trace.length, &test, &pvals);
            }
        }
    }

    /// Newton matrix and right-hand side of the problem linearized at `u_prev`, with Dirichlet
    /// rows eliminated.
    pub fn newton_system(&self, u_prev: &DisplacementField, delta: f64) -> (SparseMatrix, Vec<f64>) {
        let traces = self.traces(u_prev);
        let nd = 2 * self.space.n_local();
        type Contribution = (Vec<(usize, usize, f64)>, Vec<(usize, f64)>);
        let parts: Vec<Contribution> = traces
            .par_iter()
            .map(|tr| {
                let mut mat = Vec::new();
                let mut vec = Vec::new();
                let breaks = tr.kinks(Some(delta));
                self.face_loop(tr, &breaks, |dofs, s, w, test, pvals| {
                    let p = tr.eval(s);
                    let (rv, d) = reg_proj(p, delta);
                    for i in 0..nd {
                        if test[i] == 0.0 {
                            continue;
                        }
                        vec.push((dofs[i], w * (rv - d * p) * test[i]));
                        if d != 0.0 {
                            for j in 0..nd {
                                mat.push((dofs[i], dofs[j], -w * d * pvals[j] * test[i]));
                            }
                        }
                    }
                });
                (mat, vec)
            })
            .collect();
        let mut b = self.stiffness.to_builder();
        let mut rhs = self.load.clone();
        for (mat, vec) in parts {
            for (i, j, v) in mat {
                b.add(i, j, v);
            }
            for (i, v) in vec {
                rhs[i] += v;
            }
        }
        let mut a = b.build();
        a.constrain(&mut rhs, &self.constraints);
        (a, rhs)
    }

    /// Residual L(v) − a(u, v) + ([P(u)]_•, v^n)_{Γ_C} over all dofs, with the projection exact
    /// (`delta = None`) or regularized. Constrained entries are zeroed.
    pub fn residual(&self, u: &DisplacementField, delta: Option<f64>) -> Vec<f64> {
        let au = self.stiffness.mul_vec(&u.coeffs);
        let mut r: Vec<f64> = self.load.iter().zip(&au).map(|(l, a)| l - a).collect();
        for tr in self.traces(u) {
            let breaks = tr.kinks(delta);
            self.face_loop(&tr, &breaks, |dofs, s, w, test, _| {
                let p = tr.eval(s);
                let proj = match delta {
                    Some(d) => reg_proj(p, d).0,
                    None => proj_neg(p),
                };
                for i in 0..dofs.len().min(2 * self.space.n_local()) {
                    r[dofs[i]] += w * proj * test[i];
                }
            });
        }
        for &(d, _) in &self.constraints {
            r[d] = 0.0;
        }
        r
    }

    /// One Newton step from `u_prev`.
    pub fn newton_step(&self, u_prev: &DisplacementField, delta: f64) -> Result<DisplacementField, NitscheError> {
        let (a, rhs) = self.newton_system(u_prev, delta);
        Ok(self.field(a.solve(&rhs)?))
    }

    pub fn active_points(&self, u: &DisplacementField, delta: f64) -> usize {
        let rule = line_rule(KINK_QUAD_DEGREE);
        self.traces(u)
            .iter()
            .map(|tr| {
                let breaks = tr.kinks(Some(delta));
                let mut pts = vec![0.0];
                pts.extend_from_slice(&breaks);
                pts.push(1.0);
                pts.windows(2)
                    .map(|w| rule.points.iter().filter(|x| tr.eval(w[0] + (w[1] - w[0]) * **x) < delta).count())
                    .sum::<usize>()
            })
            .sum()
    }

    /// Newton iteration on the δ-regularized problem. `stop(u_k, u_{k−1})` is consulted after every
    /// step; the relative increment tolerance and iteration cap act as safety nets.
    pub fn newton_solve(
        &self,
        u0: &DisplacementField,
        cfg: &NitscheConfig,
        mut stop: impl FnMut(&DisplacementField, &DisplacementField) -> bool,
    ) -> Result<(DisplacementField, NewtonTrace, NewtonExit), NitscheError> {
        cfg.validate()?;
        let mut trace = NewtonTrace::default();
        let mut prev = u0.clone();
        for &(d, v) in &self.constraints {
            prev.coeffs[d] = v;
        }
        let load_norm = norm(&self.load).max(f64::MIN_POSITIVE);
        for k in 1..=cfg.max_iters {
            let next = self.newton_step(&prev, cfg.delta)?;
            let inc: Vec<f64> = next.coeffs.iter().zip(&prev.coeffs).map(|(a, b)| a - b).collect();
            let inc_norm = norm(&inc);
            let rel = inc_norm / norm(&next.coeffs).max(f64::MIN_POSITIVE);
            let res = norm(&self.residual(&next, Some(cfg.delta))) / load_norm;
            trace.iterates.push(NewtonIterate {
                iteration: k,
                increment_norm: inc_norm,
                residual_norm: res,
                active_points: self.active_points(&next, cfg.delta),
            });
            let user = stop(&next, &prev);
            let small = rel <= cfg.newton_tol || inc_norm == 0.0;
            if user || small {
                trace.converged = small || res <= 1e-8;
                let exit = if user { NewtonExit::Callback } else { NewtonExit::Increment };
                return Ok((next, trace, exit));
            }
            prev = next;
        }
        log::warn!("Newton reached {} iterations without meeting a stopping rule", cfg.max_iters);
        Ok((prev, trace, NewtonExit::MaxIterations))
    }
}

/// Elastic solve without contact nonlinearity (used for zero-load shortcuts and tests).
pub fn solve_linear(a: &SparseMatrix, rhs: &[f64], constraints: &[(usize, f64)]) -> Result<Vec<f64>, LinalgError> {
    let mut a = a.clone();
    let mut rhs = rhs.to_vec();
    a.constrain(&mut rhs, constraints);
    a.solve(&rhs)
}
