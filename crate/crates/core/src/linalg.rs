//! Row-major dense matrices and the handful of kernels the factorizer needs.

use rayon::prelude::*;

use crate::error::{KgError, Result};

/// Rows at or above this count are processed in parallel.
const PAR_ROWS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Dense {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(KgError::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Dense { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Dense { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn transpose(&self) -> Dense {
        Dense::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// `⟨self, other⟩ = Σ self_ij·other_ij`.
    pub fn dot(&self, other: &Dense) -> f64 {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// `selfᵀ·self`, a `cols × cols` Gram matrix.
    pub fn gram(&self) -> Dense {
        let k = self.cols;
        let mut g = Dense::zeros(k, k);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..k {
                let ra = r[a];
                if ra == 0.0 {
                    continue;
                }
                let grow = &mut g.data[a * k..(a + 1) * k];
                for (b, gv) in grow.iter_mut().enumerate() {
                    *gv += ra * r[b];
                }
            }
        }
        g
    }

    /// `self·other`.
    pub fn matmul(&self, other: &Dense) -> Result<Dense> {
        if self.cols != other.rows {
            return Err(KgError::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Dense::zeros(self.rows, other.cols);
        let n = other.cols;
        let kernel = |(i, orow): (usize, &mut [f64])| {
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in orow.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        };
        if n == 0 {
            return Ok(out);
        }
        if self.rows >= PAR_ROWS {
            out.data.par_chunks_mut(n).enumerate().for_each(kernel);
        } else {
            out.data.chunks_mut(n).enumerate().for_each(kernel);
        }
        Ok(out)
    }

    /// `selfᵀ·other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Dense) -> Result<Dense> {
        if self.rows != other.rows {
            return Err(KgError::Shape(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Dense::zeros(self.cols, other.cols);
        for i in 0..self.rows {
            let b = other.row(i);
            for (a_idx, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = out.row_mut(a_idx);
                for (o, &bv) in orow.iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        Ok(out)
    }

    /// Column-wise concatenation `[self | other]`.
    pub fn hcat(&self, other: &Dense) -> Result<Dense> {
        if self.rows != other.rows {
            return Err(KgError::Shape(format!(
                "cannot concatenate {} rows with {} rows",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Dense {
            rows: self.rows,
            cols,
            data,
        })
    }
}

#[inline]
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
