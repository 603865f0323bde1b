//! Dense symmetric matrices.
//!
//! [`SymMatrix`] stores the full square so it can hand its buffer to the
//! eigensolver without copying, but every constructor and operation keeps the
//! two triangles bit-identical.

use std::ops::{Add, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Jitter added to the diagonal before the single eigensolver retry.
const EIGEN_RETRY_JITTER: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    inner: DMatrix<f64>,
}

/// Eigenvalues (ascending) and orthonormal eigenvectors stored as columns.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymMatrix {
    pub fn zeros(order: usize) -> Self {
        SymMatrix {
            inner: DMatrix::zeros(order, order),
        }
    }

    pub fn identity(order: usize) -> Self {
        SymMatrix {
            inner: DMatrix::identity(order, order),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, |i, j| if i == j { diag[i] } else { 0.0 })
    }

    /// Builds a matrix by evaluating `f(i, j)` on the upper triangle
    /// (`i <= j`) and mirroring.
    pub fn from_fn(order: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut inner = DMatrix::zeros(order, order);
        for i in 0..order {
            for j in i..order {
                let v = f(i, j);
                inner[(i, j)] = v;
                inner[(j, i)] = v;
            }
        }
        SymMatrix { inner }
    }

    /// Wraps a dense matrix, copying the upper triangle onto the lower one.
    pub fn from_upper(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "matrix must be square");
        Self::from_fn(m.nrows(), |i, j| m[(i, j)])
    }

    /// Wraps a dense matrix after averaging it with its transpose.
    pub fn symmetrize(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "matrix must be square");
        Self::from_fn(m.nrows(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
    }

    /// Validating constructor: square, finite, exactly symmetric.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            data.extend(row);
        }
        Self::from_row_major(n, data)
    }

    pub fn from_row_major(order: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != order * order {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {order}x{order} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry at ({}, {})",
                pos / order,
                pos % order
            )));
        }
        for i in 0..order {
            for j in (i + 1)..order {
                if data[i * order + j] != data[j * order + i] {
                    return Err(Error::InvalidInput(format!(
                        "entries ({i}, {j}) and ({j}, {i}) differ"
                    )));
                }
            }
        }
        // Symmetric, so row-major and column-major agree.
        Ok(SymMatrix {
            inner: DMatrix::from_vec(order, order, data),
        })
    }

    pub fn order(&self) -> usize {
        self.inner.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    /// Entries in row-major order (identical to column-major by symmetry).
    pub fn as_slice(&self) -> &[f64] {
        self.inner.as_slice()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        let n = self.order();
        (0..n)
            .map(|i| (0..n).map(|j| self.inner[(i, j)]).collect())
            .collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.order()).map(|i| self.inner[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.as_slice().iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Frobenius inner product.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        self.inner.dot(&other.inner)
    }

    pub fn distance(&self, other: &SymMatrix) -> f64 {
        (&self.inner - &other.inner).norm()
    }

    pub fn scale(&self, factor: f64) -> SymMatrix {
        SymMatrix {
            inner: &self.inner * factor,
        }
    }

    /// Applies `f` to every entry. The same function on mirrored entries gives
    /// mirrored results, so symmetry is preserved.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        SymMatrix {
            inner: self.inner.map(f),
        }
    }

    /// Applies `f` to the diagonal only.
    pub fn map_diagonal(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let mut inner = self.inner.clone();
        for i in 0..self.order() {
            inner[(i, i)] = f(inner[(i, i)]);
        }
        SymMatrix { inner }
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.order();
        (0..n).all(|i| ((i + 1)..n).all(|j| self.inner[(i, j)] == self.inner[(j, i)]))
    }

    /// Symmetric eigendecomposition. On non-convergence retries once with a
    /// `1e-12` diagonal jitter, then fails.
    pub fn spectrum(&self) -> Result<Spectrum> {
        let n = self.order();
        if n == 0 {
            return Ok(Spectrum {
                values: Vec::new(),
                vectors: DMatrix::zeros(0, 0),
            });
        }
        let max_niter = 1000 * n.max(8);
        let attempt = |m: DMatrix<f64>| SymmetricEigen::try_new(m, f64::EPSILON, max_niter);
        let eig = match attempt(self.inner.clone()) {
            Some(eig) => eig,
            None => {
                let jittered = &self.inner + DMatrix::identity(n, n) * EIGEN_RETRY_JITTER;
                attempt(jittered).ok_or(Error::EigenFailure { order: n })?
            }
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(n, n, |i, c| eig.eigenvectors[(i, order[c])]);
        Ok(Spectrum { values, vectors })
    }

    /// Reassembles `Σ λ_k u_k u_kᵀ`, skipping zero eigenvalues.
    pub fn from_spectrum(values: &[f64], vectors: &DMatrix<f64>) -> SymMatrix {
        let n = vectors.nrows();
        let kept: Vec<usize> = (0..values.len()).filter(|&k| values[k] != 0.0).collect();
        if kept.is_empty() {
            return SymMatrix::zeros(n);
        }
        let basis = DMatrix::from_fn(n, kept.len(), |i, c| vectors[(i, kept[c])]);
        let scaled = DMatrix::from_fn(n, kept.len(), |i, c| vectors[(i, kept[c])] * values[kept[c]]);
        let product = scaled * basis.transpose();
        SymMatrix::from_upper(&product)
    }

    pub fn spectral_norm(&self) -> Result<f64> {
        let s = self.spectrum()?;
        Ok(s.values.iter().fold(0.0, |acc: f64, v| acc.max(v.abs())))
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.spectrum()?.values.first().copied().unwrap_or(0.0))
    }

    pub fn max_eigenvalue(&self) -> Result<f64> {
        Ok(self.spectrum()?.values.last().copied().unwrap_or(0.0))
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;

    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix {
            inner: &self.inner + &rhs.inner,
        }
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;

    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix {
            inner: &self.inner - &rhs.inner,
        }
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.to_rows()
    }
}
