//! Small dense d x n matrices for macroscopic gradients Z and per-cell
//! tensor values, plus the two norms in play: the row-sum norm
//! |Z| = sum_i |Z_i| (Euclidean norm per row) used by the densities, and the
//! Frobenius norm used for Euclidean projections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    d: usize,
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(d: usize, n: usize) -> Self {
        Self {
            d,
            n,
            data: vec![0.0; d * n],
        }
    }

    /// Row-major entries, length d*n.
    pub fn from_vec(d: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != d * n {
            return Err(Error::InvalidArgument(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                d,
                n
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "matrix entries must be finite".into(),
            ));
        }
        Ok(Self { d, n, data })
    }

    /// 1x1 convenience.
    pub fn scalar(z: f64) -> Self {
        Self {
            d: 1,
            n: 1,
            data: vec![z],
        }
    }

    pub fn rows(&self) -> usize {
        self.d
    }

    pub fn cols(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.n + k]
    }

    pub fn set(&mut self, i: usize, k: usize, v: f64) {
        self.data[i * self.n + k] = v;
    }

    pub fn row_sum_norm(&self) -> f64 {
        row_sum_norm(&self.data, self.d, self.n)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, t: f64) -> Matrix {
        Matrix {
            d: self.d,
            n: self.n,
            data: self.data.iter().map(|v| v * t).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.d, other.d);
        debug_assert_eq!(self.n, other.n);
        Matrix {
            d: self.d,
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Unit Frobenius normalization; errors on the zero matrix.
    pub fn normalized(&self) -> Result<Matrix> {
        let f = self.frobenius();
        if f <= 1e-300 {
            return Err(Error::InvalidArgument(
                "cannot normalize the zero matrix".into(),
            ));
        }
        Ok(self.scaled(1.0 / f))
    }
}

/// Row-sum norm of a flat row-major d x n block.
pub fn row_sum_norm(w: &[f64], d: usize, n: usize) -> f64 {
    debug_assert_eq!(w.len(), d * n);
    let mut total = 0.0;
    for i in 0..d {
        let row = &w[i * n..(i + 1) * n];
        total += row.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    total
}

pub fn frobenius_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
