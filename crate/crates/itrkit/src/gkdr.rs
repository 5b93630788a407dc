//! Gradient-based kernel dimension reduction: the averaged outer-product
//! matrix of regularized conditional-mean gradients and its leading
//! eigenvectors.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{gram, Bandwidth};
use crate::linalg::{eigh_descending, SpdSolver};
use crate::pseudo::PseudoOutcomes;

/// Eigenvalue gap below which the returned basis is flagged as degenerate.
const DEGENERACY_GAP: f64 = 1e-12;

/// Averaged gradient outer-product matrix.
#[derive(Debug, Clone)]
pub struct GkdrMatrix {
    pub w: Array2<f64>,
    pub epsilon: f64,
    pub bandwidth: Bandwidth,
}

/// Orthonormal basis of the estimated interaction subspace with the
/// eigenvalue spectrum it was read off from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubspaceBasis {
    #[serde(with = "crate::io::array2_serde")]
    pub b: Array2<f64>,
    #[serde(with = "crate::io::array1_serde")]
    pub eigenvalues: Array1<f64>,
    /// Set when the eigengap at the cut is below 1e-12 (selection is then
    /// by sorted order with stable index tie-breaking).
    #[serde(default)]
    pub degenerate: bool,
}

impl SubspaceBasis {
    pub fn p(&self) -> usize {
        self.b.nrows()
    }

    pub fn u(&self) -> usize {
        self.b.ncols()
    }

    /// Identity embedding: keeps the covariates as they are.
    pub fn identity(p: usize) -> Self {
        Self {
            b: Array2::eye(p),
            eigenvalues: Array1::ones(p),
            degenerate: false,
        }
    }
}

/// Compute the averaged gradient outer-product matrix over all sample points.
///
/// For an evaluation point x, the gradient estimate is
/// `b(x) = (1/n) D(x)' (G/n + eps I)^{-1} z` with `D(x)` the matrix of kernel
/// gradients at x. One factorization of `(G/n + eps I)` serves every point:
/// since the matrix is symmetric, `b(x) = (1/n) D(x)' zeta` with
/// `zeta = (G/n + eps I)^{-1} z` solved once, which evaluates the same
/// per-column solves batched across all points and columns.
pub fn gkdr_matrix(
    dataset: &Dataset,
    z: &PseudoOutcomes,
    bw: Bandwidth,
    epsilon: f64,
) -> Result<GkdrMatrix> {
    let idx: Vec<usize> = (0..dataset.n()).collect();
    gkdr_matrix_at(dataset, z, bw, epsilon, &idx)
}

/// `gkdr_matrix` with the evaluation-point average capped at `cap` points
/// (deterministic subsample; the regression part still uses all n points).
pub fn gkdr_matrix_with_cap(
    dataset: &Dataset,
    z: &PseudoOutcomes,
    bw: Bandwidth,
    epsilon: f64,
    cap: usize,
    seed: u64,
) -> Result<GkdrMatrix> {
    let n = dataset.n();
    if cap >= n {
        return gkdr_matrix(dataset, z, bw, epsilon);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx.truncate(cap);
    idx.sort_unstable();
    gkdr_matrix_at(dataset, z, bw, epsilon, &idx)
}

fn gkdr_matrix_at(
    dataset: &Dataset,
    z: &PseudoOutcomes,
    bw: Bandwidth,
    epsilon: f64,
    eval_points: &[usize],
) -> Result<GkdrMatrix> {
    if epsilon <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let n = dataset.n();
    let p = dataset.p();
    if z.z.len() != n {
        return Err(Error::DimensionMismatch {
            left: z.z.len(),
            right: n,
            context: "gkdr pseudo-outcome length",
        });
    }
    if n < p {
        log::warn!("gkdr: n = {n} < p = {p}; the gradient estimates may be unstable");
    }
    let g = gram(dataset.x.view(), dataset.x.view(), bw)?;
    let mut system = g.values() / n as f64;
    for i in 0..n {
        system[[i, i]] += epsilon;
    }
    let solver = SpdSolver::new(&system).map_err(|_| {
        Error::Numerical(format!(
            "gkdr covariance system failed to factorize (epsilon = {epsilon:.3e})"
        ))
    })?;
    let zeta = solver.solve(&z.z)?;

    let s2 = bw.sigma() * bw.sigma();
    let nf = n as f64;
    // b(X_k) for every evaluation point; parallel fill, ordered reduction.
    let grads: Vec<Array1<f64>> = eval_points
        .par_iter()
        .map(|&k| {
            let col = g.values().column(k);
            let xk = dataset.x.row(k);
            let mut acc = Array1::<f64>::zeros(p);
            let mut scale = 0.0;
            for i in 0..n {
                let c = zeta[i] * col[i];
                scale += c;
                acc.scaled_add(c, &dataset.x.row(i));
            }
            acc.scaled_add(-scale, &xk);
            acc.mapv_inplace(|v| v / (nf * s2));
            acc
        })
        .collect();
    let mut w = Array2::<f64>::zeros((p, p));
    for b in &grads {
        for a in 0..p {
            let ba = b[a];
            if ba == 0.0 {
                continue;
            }
            for c in 0..p {
                w[[a, c]] += ba * b[c];
            }
        }
    }
    w.mapv_inplace(|v| v / eval_points.len() as f64);
    Ok(GkdrMatrix {
        w,
        epsilon,
        bandwidth: bw,
    })
}

/// Leading-u eigenvectors of the gradient outer-product matrix, orthonormal,
/// eigenvalues in non-increasing order. Each column is oriented so its entry
/// of largest absolute value is positive (first such index on ties).
pub fn top_eigenvectors(w: &GkdrMatrix, u: usize) -> Result<SubspaceBasis> {
    let p = w.w.nrows();
    if u == 0 || u > p {
        return Err(Error::InvalidParameter(format!(
            "requested dimension u = {u} outside 1..={p}"
        )));
    }
    let (vals, vecs) = eigh_descending(w.w.view())?;
    let mut b = vecs.slice(ndarray::s![.., 0..u]).to_owned();
    for mut col in b.axis_iter_mut(Axis(1)) {
        let mut best = 0;
        let mut best_abs = -1.0;
        for (i, &v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    let degenerate = u < p && (vals[u - 1] - vals[u]).abs() < DEGENERACY_GAP;
    Ok(SubspaceBasis {
        b,
        eigenvalues: vals.slice(ndarray::s![0..u]).to_owned(),
        degenerate,
    })
}

/// Row-wise projection onto the basis: `V = X B`.
pub fn project(x: ArrayView2<f64>, basis: &SubspaceBasis) -> Result<Array2<f64>> {
    if x.ncols() != basis.p() {
        return Err(Error::DimensionMismatch {
            left: x.ncols(),
            right: basis.p(),
            context: "project covariate dimension",
        });
    }
    Ok(x.dot(&basis.b))
}

/// One grid cell scored by the downstream fitter.
#[derive(Debug, Clone, Copy)]
pub struct ReductionCell {
    pub epsilon: f64,
    pub u: usize,
}

/// Select the Tikhonov parameter and subspace dimension by cross-validation:
/// for each (epsilon, u) cell the basis is re-estimated on each training
/// fold and the supplied fitter scores the held-out fold (larger is better);
/// a cell whose fitter errors scores negative infinity. Ties break toward
/// smaller u, then larger epsilon. Returns the basis refit on all data at
/// the winning cell together with the winning fold-fitter payload.
#[allow(clippy::too_many_arguments)]
pub fn select_reduction<P, F>(
    dataset: &Dataset,
    z: &PseudoOutcomes,
    bw: Bandwidth,
    epsilon_grid: &[f64],
    u_grid: &[usize],
    cv_folds: usize,
    seed: u64,
    mut fitter: F,
) -> Result<(SubspaceBasis, f64, usize, P)>
where
    F: FnMut(&SubspaceBasis, &[usize], &[usize]) -> Result<(f64, P)>,
{
    if epsilon_grid.is_empty() || u_grid.is_empty() {
        return Err(Error::InvalidParameter("empty reduction grid".into()));
    }
    if cv_folds < 2 {
        return Err(Error::InvalidParameter(
            "cross-validation needs at least 2 folds".into(),
        ));
    }
    let n = dataset.n();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let folds: Vec<Vec<usize>> = (0..cv_folds)
        .map(|f| {
            order
                .iter()
                .copied()
                .enumerate()
                .filter(|(pos, _)| pos % cv_folds == f)
                .map(|(_, i)| i)
                .collect()
        })
        .collect();

    let mut best: Option<(f64, usize, f64, P)> = None; // (score, u, eps, payload)
    for &epsilon in epsilon_grid {
        for &u in u_grid {
            let mut score_sum = 0.0;
            let mut payload: Option<P> = None;
            let mut failed = false;
            for held in 0..cv_folds {
                let valid_idx = &folds[held];
                let train_idx: Vec<usize> = (0..cv_folds)
                    .filter(|&f| f != held)
                    .flat_map(|f| folds[f].iter().copied())
                    .collect();
                let train = dataset.subset(&train_idx);
                let z_train = PseudoOutcomes {
                    z: Array1::from_iter(train_idx.iter().map(|&i| z.z[i])),
                };
                let cell = (|| -> Result<(f64, P)> {
                    let w = gkdr_matrix(&train, &z_train, bw, epsilon)?;
                    let basis = top_eigenvectors(&w, u.min(train.p()))?;
                    fitter(&basis, &train_idx, valid_idx)
                })();
                match cell {
                    Ok((s, pl)) if s.is_finite() => {
                        score_sum += s;
                        payload = Some(pl);
                    }
                    _ => {
                        failed = true;
                        break;
                    }
                }
            }
            let score = if failed {
                f64::NEG_INFINITY
            } else {
                score_sum / cv_folds as f64
            };
            let replace = match &best {
                None => true,
                Some((bs, bu, beps, _)) => {
                    score > *bs
                        || (score == *bs && (u < *bu || (u == *bu && epsilon > *beps)))
                }
            };
            if replace {
                if let Some(pl) = payload {
                    best = Some((score, u, epsilon, pl));
                } else if best.is_none() {
                    // every cell failed so far; remember the cell anyway so a
                    // fully failed grid still reports something meaningful
                    continue;
                }
            }
        }
    }
    let (score, u, epsilon, payload) =
        best.ok_or_else(|| Error::Numerical("every reduction cell failed".into()))?;
    if score == f64::NEG_INFINITY {
        return Err(Error::Numerical("every reduction cell failed".into()));
    }
    let w = gkdr_matrix(dataset, z, bw, epsilon)?;
    let basis = top_eigenvectors(&w, u)?;
    Ok((basis, epsilon, u, payload))
}
