//! Gauss rules on the unit interval and on triangles.

use std::sync::OnceLock;

/// Quadrature on a triangle in barycentric coordinates. Weights sum to one, so an integral is
/// `area * Σ w_i f(x_i)`.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

/// Gauss–Legendre rule on [0, 1] with weights summing to one.
#[derive(Clone, Debug)]
pub struct LineRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

impl LineRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Nodes and weights of the n-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "empty Gauss rule");
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn build_line(degree: usize) -> LineRule {
    let n = degree / 2 + 1;
    let (x, w) = gauss_legendre(n);
    LineRule {
        points: x.iter().map(|t| 0.5 * (t + 1.0)).collect(),
        weights: w.iter().map(|t| 0.5 * t).collect(),
        degree: 2 * n - 1,
    }
}

fn build_triangle(degree: usize) -> QuadratureRule {
    // Collapsed Gauss product: the Duffy Jacobian adds one degree in the first direction.
    let n = (degree + 2).div_ceil(2);
    let (x, w) = gauss_legendre(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for i in 0..n {
        let u = 0.5 * (x[i] + 1.0);
        for j in 0..n {
            let v = 0.5 * (x[j] + 1.0);
            let xi = u;
            let eta = v * (1.0 - u);
            points.push([1.0 - xi - eta, xi, eta]);
            // 0.25 from the interval maps, 2 normalises the reference area 1/2 to one.
            weights.push(0.5 * w[i] * w[j] * (1.0 - u));
        }
    }
    QuadratureRule { points, weights, degree }
}

const CACHED: usize = 40;

/// Triangle rule exact for polynomials of total degree `degree`.
pub fn triangle_rule(degree: usize) -> &'static QuadratureRule {
    static RULES: [OnceLock<QuadratureRule>; CACHED] = [const { OnceLock::new() }; CACHED];
    assert!(degree < CACHED, "triangle rule degree {degree} too high");
    RULES[degree].get_or_init(|| build_triangle(degree))
}

/// Interval rule on [0, 1] exact for polynomials of degree `degree`.
pub fn line_rule(degree: usize) -> &'static LineRule {
    static RULES: [OnceLock<LineRule>; CACHED] = [const { OnceLock::new() }; CACHED];
    assert!(degree < CACHED, "line rule degree {degree} too high");
    RULES[degree].get_or_init(|| build_line(degree))
}

/// Maps a barycentric point to physical coordinates.
pub fn bary_to_point(tri: &[[f64; 2]; 3], l: [f64; 3]) -> [f64; 2] {
    [
        l[0] * tri[0][0] + l[1] * tri[1][0] + l[2] * tri[2][0],
        l[0] * tri[0][1] + l[1] * tri[1][1] + l[2] * tri[2][1],
    ]
}
