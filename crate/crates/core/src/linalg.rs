//! Thin wrappers over faer for the sparse and small dense solves.

use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
    #[error("matrix is singular or the solve produced non-finite values")]
    Singular,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
}

/// Triplet collector; duplicate entries are summed.
#[derive(Clone, Debug)]
pub struct SparseBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseBuilder {
    pub fn new(n: usize) -> Self {
        SparseBuilder { n, entries: Vec::new() }
    }

    pub fn with_capacity(n: usize, cap: usize) -> Self {
        SparseBuilder { n, entries: Vec::with_capacity(cap) }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        self.entries.push((i, j, v));
    }

    pub fn extend(&mut self, other: SparseBuilder) {
        debug_assert_eq!(self.n, other.n);
        self.entries.extend(other.entries);
    }

    /// Compresses into row-major form, summing duplicates in insertion order.
    pub fn build(mut self) -> SparseMatrix {
        // A stable sort keeps duplicate summation order independent of thread scheduling.
        self.entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut cols = Vec::with_capacity(self.entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in self.entries {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix { n: self.n, row_ptr, cols, vals }
    }
}

/// Square sparse matrix in compressed row form.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_builder(&self) -> SparseBuilder {
        let mut b = SparseBuilder::with_capacity(self.n, self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                b.add(i, j, v);
            }
        }
        b
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }

    /// Bilinear form y^T A x.
    pub fn form(&self, y: &[f64], x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(y).map(|(a, b)| a * b).sum()
    }

    /// Imposes `x[dof] = value` by symmetric elimination: the column is moved to the right-hand
    /// side and the row and column are replaced by the identity.
    pub fn constrain(&mut self, rhs: &mut [f64], constraints: &[(usize, f64)]) {
        let mut value = vec![None; self.n];
        for &(d, v) in constraints {
            value[d] = Some(v);
        }
        for i in 0..self.n {
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            if value[i].is_some() {
                for k in r {
                    self.vals[k] = if self.cols[k] == i { 1.0 } else { 0.0 };
                }
                continue;
            }
            for k in r {
                if let Some(v) = value[self.cols[k]] {
                    rhs[i] -= self.vals[k] * v;
                    self.vals[k] = 0.0;
                }
            }
        }
        for &(d, v) in constraints {
            rhs[d] = v;
        }
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>, LinalgError> {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if v != 0.0 || i == j {
                    triplets.push(Triplet::new(i, j, v));
                }
            }
        }
        SparseColMat::try_new_from_triplets(self.n, self.n, &triplets)
            .map_err(|e| LinalgError::Factorization(format!("{e:?}")))
    }

    pub fn factor(&self) -> Result<SparseLu, LinalgError> {
        let a = self.to_faer()?;
        let lu = a.sp_lu().map_err(|e| LinalgError::Factorization(format!("{e:?}")))?;
        Ok(SparseLu { n: self.n, lu })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        self.factor()?.solve(b)
    }
}

pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl SparseLu {
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        use faer::prelude::*;
        if b.len() != self.n {
            return Err(LinalgError::Dimension { expected: self.n, got: b.len() });
        }
        let mut x = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_in_place(x.as_mut());
        let out: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(LinalgError::Singular)
        }
    }
}

/// Row-major dense square matrix helpers for the small local problems.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        DenseMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    fn to_faer(&self) -> Mat<f64> {
        Mat::from_fn(self.n, self.n, |i, j| self.at(i, j))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.at(i, j) * x[j]).sum()).collect()
    }
}

/// Bunch–Kaufman factorization of a symmetric (possibly indefinite) dense matrix.
pub struct SymmetricIndefinite {
    n: usize,
    a: DenseMatrix,
    f: faer::linalg::solvers::Lblt<f64>,
}

impl SymmetricIndefinite {
    pub fn new(a: &DenseMatrix) -> Self {
        let f = a.to_faer().lblt(Side::Lower);
        SymmetricIndefinite { n: a.n, a: a.clone(), f }
    }

    /// Solves and checks the residual, so a singular system is reported rather than returned.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        use faer::prelude::*;
        let rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.f.solve(rhs);
        let out: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        if !out.iter().all(|v| v.is_finite()) {
            return Err(LinalgError::Singular);
        }
        let r = self.a.mul_vec(&out);
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            + self.a.data.iter().fold(0.0f64, |m, v| m.max(v.abs())) * out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = r.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        if err > 1e-8 * scale.max(f64::MIN_POSITIVE) {
            return Err(LinalgError::Singular);
        }
        Ok(out)
    }
}

/// Dense solve of a general square system by partial-pivot LU.
pub fn dense_solve(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    use faer::prelude::*;
    let lu = a.to_faer().partial_piv_lu();
    let x = lu.solve(Mat::<f64>::from_fn(a.n, 1, |i, _| b[i]));
    let out: Vec<f64> = (0..a.n).map(|i| x[(i, 0)]).collect();
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(LinalgError::Singular)
    }
}

/// Largest eigenvalue of the symmetric-definite pencil `A x = λ B x`.
pub fn generalized_max_eigenvalue(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64, LinalgError> {
    let n = a.n;
    let llt = b.to_faer().llt(Side::Lower).map_err(|_| LinalgError::NotPositiveDefinite)?;
    let l = llt.L();
    // C = L^{-1} A L^{-T}, formed by two triangular solves.
    let mut c = a.to_faer();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, c.as_mut(), faer::Par::Seq);
    let mut ct = c.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, ct.as_mut(), faer::Par::Seq);
    let sym = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (ct[(i, j)] + ct[(j, i)]));
    let eig = sym.self_adjoint_eigenvalues(Side::Lower).map_err(|_| LinalgError::Singular)?;
    Ok(eig.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_sum() {
        let mut b = SparseBuilder::new(2);
        b.add(0, 0, 4.0);
        b.add(0, 1, 1.0);
        b.add(0, 1, 1.0);
        b.add(1, 0, 0.5);
        b.add(1, 1, 3.0);
        let m = b.build();
        assert_eq!(m.get(0, 1), 2.0);
        let x = m.solve(&[1.0, 2.0]).unwrap();
        assert!((x[0] + 1.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 7.5 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn pencil() {
        let mut a = DenseMatrix::zeros(2);
        *a.at_mut(0, 0) = 2.0;
        *a.at_mut(1, 1) = 3.0;
        let mut b = DenseMatrix::zeros(2);
        *b.at_mut(0, 0) = 1.0;
        *b.at_mut(1, 1) = 0.5;
        assert!((generalized_max_eigenvalue(&a, &b).unwrap() - 6.0).abs() < 1e-12);
    }
}
