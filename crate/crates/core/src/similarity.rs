//! Dense item-item similarity parameters.

use rand::Rng;

use crate::error::{Error, Result};

/// M×M similarity matrix; row `i` holds item `i`'s neighbourhood weights.
///
/// Rows are updated independently during training, so the matrix is in
/// general asymmetric. The diagonal is never read by prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    dim: usize,
    values: Vec<f64>,
    scale: f64,
}

impl SimilarityMatrix {
    pub fn zeros(dim: usize) -> Self {
        SimilarityMatrix { dim, values: vec![0.0; dim * dim], scale: 1.0 }
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                values.push(f(i, j));
            }
        }
        SimilarityMatrix { dim, values, scale: 1.0 }
    }

    pub fn from_row_major(dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != dim * dim {
            return Err(Error::config(format!(
                "expected {} values for a {dim}x{dim} matrix, got {}",
                dim * dim,
                values.len()
            )));
        }
        Ok(SimilarityMatrix { dim, values, scale: 1.0 })
    }

    /// Off-diagonal entries drawn from `Uniform(low, high)`; zero diagonal.
    pub fn uniform<R: Rng + ?Sized>(dim: usize, low: f64, high: f64, rng: &mut R) -> Self {
        Self::from_fn(dim, |i, j| if i == j { 0.0 } else { rng.random_range(low..high) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Rescale factor β applied at initialization (1 when never rescaled).
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Multiply every entry by `beta` and record it as the matrix scale.
    pub fn rescale(&mut self, beta: f64) {
        self.values.iter_mut().for_each(|v| *v *= beta);
        self.scale *= beta;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.values[i * self.dim + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// (S + Sᵀ)/2.
    pub fn symmetrized(&self) -> SimilarityMatrix {
        let mut out = self.clone();
        for i in 0..self.dim {
            for j in 0..self.dim {
                out.values[i * self.dim + j] = 0.5 * (self.get(i, j) + self.get(j, i));
            }
        }
        out
    }

    /// Indices of the `n` largest-|s_ij| off-diagonal entries of row `i`,
    /// ties broken by smaller `j`, returned in ascending `j`.
    pub fn top_neighbors(&self, i: usize, n: usize) -> Vec<usize> {
        let row = self.row(i);
        let mut js: Vec<usize> = (0..self.dim).filter(|&j| j != i).collect();
        if n < js.len() {
            js.select_nth_unstable_by(n, |&a, &b| by_magnitude(row[a], a, row[b], b));
            js.truncate(n);
        }
        js.sort_unstable();
        js
    }
}

/// Order by descending |s|, then ascending index.
pub(crate) fn by_magnitude(sa: f64, a: usize, sb: f64, b: usize) -> std::cmp::Ordering {
    sb.abs().total_cmp(&sa.abs()).then(a.cmp(&b))
}
