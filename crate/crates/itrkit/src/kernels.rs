//! Gaussian kernel evaluation, Gram matrices, analytic kernel gradients, and
//! median-heuristic bandwidth selection.
//!
//! All modules share the convention `K(a, b) = exp(-||a - b||^2 / (2 sigma^2))`,
//! so `sigma` is expressed in the same length units as the input space.

use ndarray::parallel::prelude::*;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Above this sample size the median heuristic works on a uniformly
/// subsampled subset of `MEDIAN_SUBSAMPLE` points (exact below it).
const MEDIAN_EXACT_LIMIT: usize = 4000;
const MEDIAN_SUBSAMPLE: usize = 2000;

/// Kernel bandwidth, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    sigma: f64,
}

impl Bandwidth {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "bandwidth sigma must be positive and finite, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Gram matrix of Gaussian kernel evaluations between two point sets.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    values: Array2<f64>,
    bandwidth: Bandwidth,
}

impl GramMatrix {
    /// Wrap precomputed kernel values (used when slicing an existing Gram).
    pub fn from_parts(values: Array2<f64>, bandwidth: Bandwidth) -> Self {
        Self { values, bandwidth }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn bandwidth(&self) -> Bandwidth {
        self.bandwidth
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// Gram sub-matrix for the given row and column indices.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Array2<f64> {
        let tmp = self.values.select(Axis(0), rows);
        tmp.select(Axis(1), cols)
    }
}

#[inline]
fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Single kernel evaluation.
#[inline]
pub fn kernel(a: ArrayView1<f64>, b: ArrayView1<f64>, bw: Bandwidth) -> f64 {
    let s2 = bw.sigma() * bw.sigma();
    (-squared_distance(a, b) / (2.0 * s2)).exp()
}

/// Gram matrix with entries `exp(-||a_i - b_j||^2 / (2 sigma^2))`.
///
/// Rows are computed independently (parallel but deterministic).
pub fn gram(a: ArrayView2<f64>, b: ArrayView2<f64>, bw: Bandwidth) -> Result<GramMatrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch {
            left: a.ncols(),
            right: b.ncols(),
            context: "gram point dimensions",
        });
    }
    let s2 = bw.sigma() * bw.sigma();
    let mut values = Array2::<f64>::zeros((a.nrows(), b.nrows()));
    Zip::from(values.axis_iter_mut(Axis(0)))
        .and(a.axis_iter(Axis(0)))
        .par_for_each(|mut row, ai| {
            for (j, bj) in b.axis_iter(Axis(0)).enumerate() {
                row[j] = (-squared_distance(ai, bj) / (2.0 * s2)).exp();
            }
        });
    Ok(GramMatrix {
        values,
        bandwidth: bw,
    })
}

/// Matrix of kernel gradients with respect to the second argument:
/// entry `(i, m)` is `dK(X_i, x)/dx^(m) = ((X_i^(m) - x^(m)) / sigma^2) K(X_i, x)`.
pub fn gram_gradient(
    points: ArrayView2<f64>,
    x: ArrayView1<f64>,
    bw: Bandwidth,
) -> Result<Array2<f64>> {
    if points.ncols() != x.len() {
        return Err(Error::DimensionMismatch {
            left: points.ncols(),
            right: x.len(),
            context: "gram_gradient point dimensions",
        });
    }
    let s2 = bw.sigma() * bw.sigma();
    let mut out = Array2::<f64>::zeros((points.nrows(), points.ncols()));
    for (i, xi) in points.axis_iter(Axis(0)).enumerate() {
        let k = (-squared_distance(xi, x) / (2.0 * s2)).exp();
        for m in 0..points.ncols() {
            out[[i, m]] = (xi[m] - x[m]) / s2 * k;
        }
    }
    Ok(out)
}

/// Median-heuristic bandwidth: the lower median of the `n(n-1)/2` pairwise
/// Euclidean distances. For `n > 4000` the median is estimated from a
/// uniformly subsampled 2000-point subset (deterministic subsample).
pub fn median_heuristic(points: ArrayView2<f64>) -> Result<Bandwidth> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "median heuristic needs at least two points, got {n}"
        )));
    }
    let subset: Vec<usize> = if n > MEDIAN_EXACT_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6d65_6469_616e); // fixed: keeps this a pure function
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx.truncate(MEDIAN_SUBSAMPLE);
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let m = subset.len();
    let mut dists: Vec<f64> = Vec::with_capacity(m * (m - 1) / 2);
    let rows: Vec<ArrayView1<f64>> = subset.iter().map(|&i| points.row(i)).collect();
    let chunks: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut local = Vec::with_capacity(m - i - 1);
            for j in (i + 1)..m {
                local.push(squared_distance(rows[i], rows[j]).sqrt());
            }
            local
        })
        .collect();
    for c in chunks {
        dists.extend(c);
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
    let median = dists[(dists.len() - 1) / 2];
    if median <= 0.0 {
        return Err(Error::DegenerateBandwidth);
    }
    Bandwidth::new(median)
}

/// Column-wise mean and standard deviation of a point set. Columns with
/// near-zero spread get scale 1 so the transform stays invertible.
pub fn column_moments(points: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let n = points.nrows().max(1) as f64;
    let mean = points.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(points.ncols()));
    let mut sd = Array1::<f64>::zeros(points.ncols());
    for j in 0..points.ncols() {
        let col = points.column(j);
        let mu = mean[j];
        let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        sd[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    }
    (mean, sd)
}

/// Apply `(x - mean) / sd` column-wise.
pub fn standardize(points: ArrayView2<f64>, mean: &Array1<f64>, sd: &Array1<f64>) -> Array2<f64> {
    let mut out = points.to_owned();
    for j in 0..out.ncols() {
        let (mu, s) = (mean[j], sd[j]);
        out.column_mut(j).mapv_inplace(|v| (v - mu) / s);
    }
    out
}
