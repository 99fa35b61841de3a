//! Problem data: material, loads and the rectangular contact benchmark.

use std::sync::Arc;

use crate::fem::{ElasticityCoefficients, FemError, VectorField};
use crate::mesh::{build_rect_mesh, BoundaryTag, MeshError, Point, Rect, TriMesh};

/// Loads and boundary data of a contact problem.
#[derive(Clone)]
pub struct ProblemData {
    pub coeff: ElasticityCoefficients,
    pub body_force: VectorField,
    /// Traction on Neumann faces, evaluated at face points.
    pub traction: VectorField,
    /// Prescribed displacement on Dirichlet faces.
    pub dirichlet: VectorField,
    /// Whether `dirichlet` is identically zero (lets the solvers skip interpolation).
    pub homogeneous_dirichlet: bool,
}

impl std::fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemData")
            .field("coeff", &self.coeff)
            .field("homogeneous_dirichlet", &self.homogeneous_dirichlet)
            .finish_non_exhaustive()
    }
}

pub fn constant_field(v: [f64; 2]) -> VectorField {
    Arc::new(move |_| v)
}

impl ProblemData {
    pub fn new(coeff: ElasticityCoefficients, body_force: VectorField, traction: VectorField) -> Self {
        ProblemData {
            coeff,
            body_force,
            traction,
            dirichlet: constant_field([0.0, 0.0]),
            homogeneous_dirichlet: true,
        }
    }

    pub fn with_dirichlet(mut self, g: VectorField) -> Self {
        self.dirichlet = g;
        self.homogeneous_dirichlet = false;
        self
    }
}

/// Rectangle resting on a rigid foundation: the bottom edge is clamped left of `split_x` and in
/// contact right of it, the right edge carries a uniform traction and the rest is traction free.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkSpec {
    pub rect: Rect,
    pub nx: usize,
    pub ny: usize,
    pub split_x: f64,
    pub young: f64,
    pub poisson: f64,
    pub body_force: [f64; 2],
    pub right_traction: [f64; 2],
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            rect: Rect::new(-1.0, 1.0, 0.0, 1.0),
            nx: 4,
            ny: 2,
            split_x: 0.0,
            young: 1.0,
            poisson: 0.3,
            body_force: [0.0, -0.01],
            right_traction: [-0.0275, 0.0],
        }
    }
}

impl BenchmarkSpec {
    fn tol(&self) -> f64 {
        1e-10 * (self.rect.x1 - self.rect.x0).max(self.rect.height())
    }

    pub fn tag(&self, x: Point) -> BoundaryTag {
        let tol = self.tol();
        if (x[1] - self.rect.y0).abs() < tol {
            if x[0] < self.split_x {
                BoundaryTag::Dirichlet
            } else {
                BoundaryTag::Contact
            }
        } else {
            BoundaryTag::Neumann
        }
    }

    pub fn mesh(&self) -> Result<TriMesh, MeshError> {
        build_rect_mesh(self.nx, self.ny, self.rect, |x| self.tag(x))
    }

    pub fn data(&self) -> Result<ProblemData, FemError> {
        let coeff = ElasticityCoefficients::plane_strain(self.young, self.poisson)?;
        let (x1, tol, g) = (self.rect.x1, self.tol(), self.right_traction);
        let traction: VectorField = Arc::new(move |x: Point| if (x[0] - x1).abs() < tol { g } else { [0.0, 0.0] });
        Ok(ProblemData::new(coeff, constant_field(self.body_force), traction))
    }

    /// Points where the clamped part meets the rest of the boundary.
    pub fn dirichlet_endpoints(&self) -> [Point; 2] {
        [[self.rect.x0, self.rect.y0], [self.split_x, self.rect.y0]]
    }
}
