//! Covariate-balancing weights.
//!
//! The kernel balancing weights for one treatment group solve
//!
//! ```text
//! min_{w >= 1}  1/2 || sum_{i in S} w_i K(., X_i) - sum_{i in [n]} K(., X_i) ||_H^2
//!               + lambda2/2 sum_{i in S} w_i^2   (- lambda1n/2)
//! ```
//!
//! through its Fenchel-Rockafellar dual in f = sum_j beta_j K(., X_j):
//!
//! ```text
//! d(f) = 1/(2 lambda2) sum_{i in S} f(X_i)^2 + 1/2 ||f||_H^2 + sum_{i in [n]} f(X_i)
//!        - 1/(2 lambda2) sum_{i in S} max{lambda2 + f(X_i), 0}^2 + lambda1n/2
//! ```
//!
//! with weight recovery `w_i = max{1, -f(X_i)/lambda2}`. The objective is a
//! convex, C^1, piecewise-quadratic function of beta; the solver takes exact
//! minimizers of the current quadratic piece as search directions (an
//! active-set Newton scheme) with a backtracking line search, and terminates
//! on the gradient norm.
//!
//! A logistic-regression IPW baseline and a kernel-section balance diagnostic
//! live here as well.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{gram, median_heuristic, Bandwidth, GramMatrix};
use crate::linalg::{row_sums_over, SpdSolver};

/// Weight cap constant: weights are clipped at `M_W * n^(1/3)`.
pub const M_W: f64 = 20.0;

/// Default dual solver tolerance on the gradient norm.
pub const DEFAULT_TOL: f64 = 1e-7;

/// Default iteration cap for the dual solver.
pub const DEFAULT_MAX_ITERS: usize = 5000;

/// Default ratio lambda1 = 1/n.
pub fn default_lambda1(n: usize) -> f64 {
    1.0 / n as f64
}

/// Candidate lambda2 values for the held-out balance selection rule.
pub fn default_lambda2_grid() -> Vec<f64> {
    vec![1e-3, 1e-2, 1e-1, 1.0, 10.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightsMethod {
    Kcb,
    IpwLogistic,
    Oracle,
}

impl std::fmt::Display for WeightsMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightsMethod::Kcb => write!(f, "kcb"),
            WeightsMethod::IpwLogistic => write!(f, "ipw-logistic"),
            WeightsMethod::Oracle => write!(f, "oracle"),
        }
    }
}

/// Per-unit balancing weights over the full sample.
#[derive(Debug, Clone)]
pub struct BalancingWeights {
    pub w: Array1<f64>,
    pub method: WeightsMethod,
    pub lambda1: f64,
    pub lambda2: f64,
    pub solver_iters: usize,
    pub final_objective: f64,
}

/// Dual solution for one treatment group.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub beta: Array1<f64>,
    pub group: f64,
    pub objective_value: f64,
    pub gradient_norm: f64,
    pub iters: usize,
}

/// Weights for the units of a single treatment group, in dataset index order.
#[derive(Debug, Clone)]
pub struct GroupWeights {
    pub indices: Vec<usize>,
    pub w: Array1<f64>,
    pub dual: DualSolution,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Dual objective d(f) evaluated at the expansion coefficients `beta`.
pub fn kcb_dual_objective(
    beta: &Array1<f64>,
    group: f64,
    dataset: &Dataset,
    g: &GramMatrix,
    lambda1n: f64,
    lambda2: f64,
) -> Result<f64> {
    if lambda2 <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "lambda2 must be positive, got {lambda2}"
        )));
    }
    if beta.len() != dataset.n() || g.n_rows() != dataset.n() || g.n_cols() != dataset.n() {
        return Err(Error::DimensionMismatch {
            left: beta.len(),
            right: dataset.n(),
            context: "kcb dual dimensions",
        });
    }
    let f = g.values().dot(beta);
    let mut quad = 0.0;
    let mut hinge = 0.0;
    for (i, &ai) in dataset.a.iter().enumerate() {
        if ai == group {
            quad += f[i] * f[i];
            let h = (lambda2 + f[i]).max(0.0);
            hinge += h * h;
        }
    }
    let norm_sq = beta.dot(&f);
    let linear: f64 = f.sum();
    Ok(quad / (2.0 * lambda2) + 0.5 * norm_sq + linear - hinge / (2.0 * lambda2) + lambda1n / 2.0)
}

/// Gradient of the dual objective with respect to beta: `G (v + beta)` where
/// `v_i = 1 + h'(f_i) 1[i in S]` and `h` is the per-point piecewise term.
fn kcb_dual_gradient(
    beta: &Array1<f64>,
    f: &Array1<f64>,
    group: f64,
    dataset: &Dataset,
    g: &GramMatrix,
    lambda2: f64,
) -> Array1<f64> {
    let n = dataset.n();
    let mut inner = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut v = 1.0;
        if dataset.a[i] == group {
            if f[i] < -lambda2 {
                v += f[i] / lambda2;
            } else {
                v -= 1.0;
            }
        }
        inner[i] = v + beta[i];
    }
    g.values().dot(&inner)
}

/// Solve the dual for one treatment group and recover that group's weights.
///
/// `init` overrides the starting point (zeros by default); the minimizer's
/// sample evaluations are unique, so the recovered weights do not depend on
/// it beyond solver tolerance.
pub fn kcb_weights_with_init(
    dataset: &Dataset,
    group: f64,
    lambda1: f64,
    lambda2: f64,
    bw: Bandwidth,
    tol: f64,
    max_iters: usize,
    init: Option<&Array1<f64>>,
) -> Result<GroupWeights> {
    if lambda2 <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "lambda2 must be positive, got {lambda2}"
        )));
    }
    if lambda1 < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "lambda1 must be nonnegative, got {lambda1}"
        )));
    }
    let indices = dataset.group_indices(group);
    if indices.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "treatment group {group} is empty"
        )));
    }
    let n = dataset.n();
    let lambda1n = (n as f64) * (n as f64) * lambda1;
    let g = gram(dataset.x.view(), dataset.x.view(), bw)?;
    let complement: Vec<usize> = (0..n).filter(|i| dataset.a[*i] != group).collect();
    // G rows summed over out-of-group columns; constant across iterations.
    let comp_row_sums = row_sums_over(g.values(), &complement);

    let mut beta = match init {
        Some(b) if b.len() == n => b.clone(),
        Some(b) => {
            return Err(Error::DimensionMismatch {
                left: b.len(),
                right: n,
                context: "kcb initial beta",
            })
        }
        None => Array1::zeros(n),
    };
    let mut obj = kcb_dual_objective(&beta, group, dataset, &g, lambda1n, lambda2)?;
    let mut grad_norm = f64::INFINITY;
    let mut iters = 0;

    for it in 0..max_iters {
        iters = it + 1;
        let f = g.values().dot(&beta);
        // Piece minimizer for the current active set {i in S : f_i < -lambda2}.
        let active: Vec<usize> = indices
            .iter()
            .copied()
            .filter(|&i| f[i] < -lambda2)
            .collect();
        let mut target = Array1::<f64>::zeros(n);
        for &i in &complement {
            target[i] = -1.0;
        }
        if !active.is_empty() {
            let gaa = g.select(&active, &active);
            let mut m = gaa;
            for d in 0..active.len() {
                m[[d, d]] += lambda2;
            }
            let rhs = Array1::from_iter(
                active.iter().map(|&i| -lambda2 + comp_row_sums[i]),
            );
            let solver = SpdSolver::new(&m).map_err(|_| {
                Error::Numerical(format!(
                    "kcb piece system failed to factorize (lambda2 = {lambda2:.3e})"
                ))
            })?;
            let mut beta_a = solver.solve(&rhs)?;
            // one step of iterative refinement: the achievable gradient norm
            // is limited by this solve's residual
            let resid = &rhs - &m.dot(&beta_a);
            beta_a = beta_a + solver.solve(&resid)?;
            for (d, &i) in active.iter().enumerate() {
                target[i] = beta_a[d];
            }
        }
        let direction = &target - &beta;
        // Backtracking on the objective along the piece-minimizer direction.
        let mut t = 1.0;
        let mut accepted = obj;
        let mut stalled = true;
        for _ in 0..60 {
            let cand = &beta + &(&direction * t);
            let cand_obj = kcb_dual_objective(&cand, group, dataset, &g, lambda1n, lambda2)?;
            if cand_obj <= obj {
                beta = cand;
                accepted = cand_obj;
                stalled = cand_obj == obj;
                break;
            }
            t *= 0.5;
        }
        obj = accepted;
        let f_new = g.values().dot(&beta);
        let grad = kcb_dual_gradient(&beta, &f_new, group, dataset, &g, lambda2);
        grad_norm = grad.dot(&grad).sqrt();
        if grad_norm <= tol {
            break;
        }
        if stalled {
            // No further descent available along piece minimizers.
            break;
        }
    }

    if grad_norm > tol {
        return Err(Error::SolverDidNotConverge {
            what: "kcb dual",
            residual: grad_norm,
            iters,
        });
    }

    let f = g.values().dot(&beta);
    let clip = M_W * (n as f64).powf(1.0 / 3.0);
    let w = Array1::from_iter(
        indices
            .iter()
            .map(|&i| (-f[i] / lambda2).max(1.0).min(clip)),
    );
    Ok(GroupWeights {
        indices,
        w,
        dual: DualSolution {
            beta,
            group,
            objective_value: obj,
            gradient_norm: grad_norm,
            iters,
        },
        lambda1,
        lambda2,
    })
}

/// Group weights from the zero starting point.
pub fn kcb_weights(
    dataset: &Dataset,
    group: f64,
    lambda1: f64,
    lambda2: f64,
    bw: Bandwidth,
    tol: f64,
) -> Result<GroupWeights> {
    kcb_weights_with_init(
        dataset,
        group,
        lambda1,
        lambda2,
        bw,
        tol,
        DEFAULT_MAX_ITERS,
        None,
    )
}

/// Merge the two groups' partial weights into a full n-vector. The two index
/// sets must be disjoint and cover the sample.
pub fn combine_group_weights(
    w_plus: &GroupWeights,
    w_minus: &GroupWeights,
    dataset: &Dataset,
) -> Result<BalancingWeights> {
    let n = dataset.n();
    let mut w = Array1::from_elem(n, f64::NAN);
    let mut seen = vec![false; n];
    for part in [w_plus, w_minus] {
        for (k, &i) in part.indices.iter().enumerate() {
            if i >= n {
                return Err(Error::IndexCoverage(format!("index {i} out of range")));
            }
            if seen[i] {
                return Err(Error::IndexCoverage(format!(
                    "index {i} covered by both groups"
                )));
            }
            seen[i] = true;
            w[i] = part.w[k];
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::IndexCoverage(format!(
            "index {missing} not covered by either group"
        )));
    }
    Ok(BalancingWeights {
        w,
        method: WeightsMethod::Kcb,
        lambda1: w_plus.lambda1,
        lambda2: w_plus.lambda2,
        solver_iters: w_plus.dual.iters + w_minus.dual.iters,
        final_objective: w_plus.dual.objective_value + w_minus.dual.objective_value,
    })
}

/// KCB weights for both treatment groups at one (lambda1, lambda2).
pub fn kcb_weights_all(
    dataset: &Dataset,
    lambda1: f64,
    lambda2: f64,
    bw: Bandwidth,
    tol: f64,
) -> Result<BalancingWeights> {
    let plus = kcb_weights(dataset, 1.0, lambda1, lambda2, bw, tol)?;
    let minus = kcb_weights(dataset, -1.0, lambda1, lambda2, bw, tol)?;
    combine_group_weights(&plus, &minus, dataset)
}

/// Select lambda2 from a grid by two-fold cross-validation: weights are fit
/// on one half and scored by the kernel-section balance diagnostic evaluated
/// at the held-out half's points. Near-ties (within 5% of the best score)
/// resolve to the largest lambda2.
pub fn select_lambda2(
    dataset: &Dataset,
    bw: Bandwidth,
    grid: &[f64],
    tol: f64,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty lambda2 grid".into()));
    }
    let n = dataset.n();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let (half1, half2) = idx.split_at(n / 2);
    let folds = [
        (half1.to_vec(), half2.to_vec()),
        (half2.to_vec(), half1.to_vec()),
    ];
    let mut scores = Vec::with_capacity(grid.len());
    for &lambda2 in grid {
        let mut total = 0.0;
        let mut count = 0;
        for (fit_idx, held_idx) in &folds {
            let sub = dataset.subset(fit_idx);
            let held_points = dataset.x.select(Axis(0), held_idx);
            match kcb_weights_all(&sub, default_lambda1(sub.n()), lambda2, bw, tol) {
                Ok(weights) => {
                    total += balance_diagnostic(&weights.w, &sub, held_points.view(), bw)?;
                    count += 1;
                }
                Err(_) => {
                    total += f64::INFINITY;
                    count += 1;
                }
            }
        }
        scores.push(total / count as f64);
    }
    let best = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut chosen = grid[0];
    for (k, &lambda2) in grid.iter().enumerate() {
        if scores[k] <= best * 1.05 && lambda2 > chosen {
            chosen = lambda2;
        }
    }
    Ok((chosen, scores))
}

/// KCB weights with lambda2 chosen by `select_lambda2` and lambda1 = 1/n.
pub fn kcb_weights_auto(
    dataset: &Dataset,
    bw: Option<Bandwidth>,
    tol: f64,
    seed: u64,
) -> Result<BalancingWeights> {
    let bw = match bw {
        Some(b) => b,
        None => median_heuristic(dataset.x.view())?,
    };
    let (lambda2, _) = select_lambda2(dataset, bw, &default_lambda2_grid(), tol, seed)?;
    kcb_weights_all(dataset, default_lambda1(dataset.n()), lambda2, bw, tol)
}

/// Logistic-regression inverse-propensity weights, fit by Newton-Raphson on
/// the log-likelihood with an intercept. The Hessian carries a 1e-6 ridge;
/// a diverging coefficient norm is reported as separation.
pub fn logistic_ipw(dataset: &Dataset, max_iters: usize, tol: f64) -> Result<BalancingWeights> {
    let (coef, iters) = logistic_fit(dataset, max_iters, tol)?;
    let n = dataset.n();
    let mut w = Array1::zeros(n);
    let mut loglik = 0.0;
    for i in 0..n {
        let eta = coef[0]
            + dataset
                .x
                .row(i)
                .iter()
                .zip(coef.iter().skip(1))
                .map(|(x, b)| x * b)
                .sum::<f64>();
        let p_plus = 1.0 / (1.0 + (-eta).exp());
        let p_a = if dataset.a[i] > 0.0 {
            p_plus
        } else {
            1.0 - p_plus
        };
        w[i] = 1.0 / p_a.max(1e-12);
        loglik += p_a.max(1e-12).ln();
    }
    Ok(BalancingWeights {
        w,
        method: WeightsMethod::IpwLogistic,
        lambda1: 0.0,
        lambda2: 0.0,
        solver_iters: iters,
        final_objective: -loglik,
    })
}

/// Newton-Raphson fit of Pr(A = +1 | x) = logistic(b0 + b'x). Returns the
/// coefficient vector (intercept first).
pub fn logistic_fit(dataset: &Dataset, max_iters: usize, tol: f64) -> Result<(Array1<f64>, usize)> {
    const HESSIAN_RIDGE: f64 = 1e-6;
    let n = dataset.n();
    let p = dataset.p();
    let mut coef = Array1::<f64>::zeros(p + 1);
    let mut design = Array2::<f64>::ones((n, p + 1));
    design.slice_mut(ndarray::s![.., 1..]).assign(&dataset.x);
    let target = Array1::from_iter(dataset.a.iter().map(|&a| if a > 0.0 { 1.0 } else { 0.0 }));
    let mut iters = 0;
    for it in 0..max_iters {
        iters = it + 1;
        let eta = design.dot(&coef);
        let probs = eta.mapv(|e| 1.0 / (1.0 + (-e).exp()));
        let resid = &target - &probs;
        let grad = design.t().dot(&resid);
        let grad_norm = grad.dot(&grad).sqrt();
        if grad_norm <= tol {
            break;
        }
        let wdiag = probs.mapv(|pi| (pi * (1.0 - pi)).max(1e-12));
        let mut hess = Array2::<f64>::zeros((p + 1, p + 1));
        for i in 0..n {
            let row = design.row(i);
            let wi = wdiag[i];
            for a in 0..=p {
                let ra = row[a] * wi;
                for b in a..=p {
                    hess[[a, b]] += ra * row[b];
                }
            }
        }
        for a in 0..=p {
            for b in 0..a {
                hess[[a, b]] = hess[[b, a]];
            }
            hess[[a, a]] += HESSIAN_RIDGE;
        }
        let solver = SpdSolver::new(&hess)?;
        let step = solver.solve(&grad)?;
        coef = &coef + &step;
        let norm = coef.dot(&coef).sqrt();
        if norm > 1e3 {
            return Err(Error::Separation { norm });
        }
    }
    Ok((coef, iters))
}

/// Kernel-section balance diagnostic: the maximum over test points of the
/// absolute discrepancy between the weighted group mean and the full-sample
/// mean of the kernel section, taken over both treatment groups.
pub fn balance_diagnostic(
    w: &Array1<f64>,
    dataset: &Dataset,
    test_points: ArrayView2<f64>,
    bw: Bandwidth,
) -> Result<f64> {
    if test_points.nrows() == 0 {
        return Err(Error::InvalidParameter("no test points".into()));
    }
    if w.len() != dataset.n() {
        return Err(Error::DimensionMismatch {
            left: w.len(),
            right: dataset.n(),
            context: "balance diagnostic weights",
        });
    }
    let n = dataset.n() as f64;
    let k = gram(dataset.x.view(), test_points, bw)?;
    let mut worst = 0.0_f64;
    for t in 0..test_points.nrows() {
        let col = k.values().column(t);
        let full: f64 = col.sum() / n;
        for group in [1.0, -1.0] {
            let weighted: f64 = dataset
                .a
                .iter()
                .zip(col.iter())
                .zip(w.iter())
                .filter(|((a, _), _)| **a == group)
                .map(|((_, kv), wi)| wi * kv)
                .sum::<f64>()
                / n;
            worst = worst.max((weighted - full).abs());
        }
    }
    Ok(worst)
}
