//! Weighted hinge-loss decision rules on reduced covariates.
//!
//! The empirical objective is
//!
//! ```text
//! Q(f) = (1/n) sum_i c_i max(0, 1 - l_i f(V_i)) + lambda_n alpha' G alpha
//! ```
//!
//! with labels `l_i = A_i sign(Y_i - g(X_i))`, sample weights
//! `c_i = w_i |Y_i - g(X_i)|`, `f(v) = sum_j alpha_j K(V_j, v) + alpha_0`,
//! and the intercept unpenalized. Rescaling by `1/(2 lambda_n n)` puts this
//! in standard SVM form with per-sample costs `C_i = c_i / (2 n lambda_n)`,
//! whose dual
//!
//! ```text
//! min_d  1/2 sum_ij d_i d_j l_i l_j K_ij - sum_i d_i
//! s.t.   0 <= d_i <= C_i,   sum_i d_i l_i = 0
//! ```
//!
//! is solved by maximal-violating-pair coordinate ascent; the free intercept
//! is exactly the source of the equality constraint. Expansion coefficients
//! recover as `alpha_i = d_i l_i`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::balancing::BalancingWeights;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gkdr::{project, SubspaceBasis};
use crate::kernels::{gram, kernel, median_heuristic, Bandwidth, GramMatrix};
use crate::pseudo::GEstimate;

/// Hard cap on SMO pair updates; weakly regularized problems that cannot
/// converge within it surface as solver errors (cross-validation treats
/// those cells as failed).
fn max_smo_iters(n: usize) -> usize {
    (200 * n).max(100_000)
}

/// Curvature floor for a pair update.
const TAU: f64 = 1e-12;

/// Default grid of penalty multipliers; the working grid is this divided
/// by the sample size.
pub fn default_lambda_grid(n: usize) -> Vec<f64> {
    let lo = 1e-4_f64.ln();
    let hi = 10.0_f64.ln();
    (0..8)
        .map(|k| (lo + (hi - lo) * k as f64 / 7.0).exp() / n as f64)
        .collect()
}

/// sign with ties sent to +1.
#[inline]
pub fn sign_plus(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// The weighted classification problem in the reduced space.
#[derive(Debug, Clone)]
pub struct WsvmProblem {
    pub labels: Array1<f64>,
    pub sample_weights: Array1<f64>,
    pub gram: GramMatrix,
    pub reduced: Array2<f64>,
    pub basis: SubspaceBasis,
    pub bandwidth: Bandwidth,
}

/// Fitted decision rule: kernel expansion on the reduced training points
/// plus the embedded basis that maps new covariates into the reduced space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionRule {
    #[serde(with = "crate::io::array1_serde")]
    pub alphas: Array1<f64>,
    pub intercept: f64,
    #[serde(with = "crate::io::array2_serde")]
    pub train_points_reduced: Array2<f64>,
    pub bandwidth: Bandwidth,
    pub basis: SubspaceBasis,
    pub lambda_n: f64,
    pub kkt_violation: f64,
    pub solver_iters: usize,
    pub objective: f64,
}

/// Assemble labels, sample weights, and the reduced-space Gram matrix.
/// When no bandwidth is supplied the median heuristic is recomputed on the
/// projected points.
pub fn build_problem(
    dataset: &Dataset,
    weights: &BalancingWeights,
    g: &GEstimate,
    basis: &SubspaceBasis,
    bw: Option<Bandwidth>,
) -> Result<WsvmProblem> {
    let g_values = g.evaluate_all(&dataset.x);
    build_problem_from_values(dataset, weights, &g_values, basis, bw)
}

/// `build_problem` with externally supplied per-row g values (oracle mode).
pub fn build_problem_from_values(
    dataset: &Dataset,
    weights: &BalancingWeights,
    g_values: &Array1<f64>,
    basis: &SubspaceBasis,
    bw: Option<Bandwidth>,
) -> Result<WsvmProblem> {
    let n = dataset.n();
    if weights.w.len() != n || g_values.len() != n {
        return Err(Error::DimensionMismatch {
            left: weights.w.len().min(g_values.len()),
            right: n,
            context: "build_problem lengths",
        });
    }
    let reduced = project(dataset.x.view(), basis)?;
    let mut labels = Array1::zeros(n);
    let mut sample_weights = Array1::zeros(n);
    for i in 0..n {
        let resid = dataset.y[i] - g_values[i];
        labels[i] = dataset.a[i] * sign_plus(resid);
        sample_weights[i] = weights.w[i] * resid.abs();
    }
    let bandwidth = match bw {
        Some(b) => b,
        None => median_heuristic(reduced.view())?,
    };
    let gram = gram(reduced.view(), reduced.view(), bandwidth)?;
    Ok(WsvmProblem {
        labels,
        sample_weights,
        gram,
        reduced,
        basis: basis.clone(),
        bandwidth,
    })
}

/// Row subset of a problem (used by cross-validation).
pub fn subset_problem(problem: &WsvmProblem, idx: &[usize]) -> WsvmProblem {
    WsvmProblem {
        labels: Array1::from_iter(idx.iter().map(|&i| problem.labels[i])),
        sample_weights: Array1::from_iter(idx.iter().map(|&i| problem.sample_weights[i])),
        gram: GramMatrix::from_parts(problem.gram.select(idx, idx), problem.bandwidth),
        reduced: problem.reduced.select(ndarray::Axis(0), idx),
        basis: problem.basis.clone(),
        bandwidth: problem.bandwidth,
    }
}

/// Fit the weighted SVM at one penalty value by SMO-style dual coordinate
/// ascent. Terminates when the maximal KKT violation drops to `tol`.
pub fn fit_wsvm(problem: &WsvmProblem, lambda_n: f64, tol: f64) -> Result<DecisionRule> {
    if lambda_n <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "lambda_n must be positive, got {lambda_n}"
        )));
    }
    let n = problem.labels.len();
    let k = problem.gram.values();
    let y = &problem.labels;
    let cost: Array1<f64> = problem
        .sample_weights
        .mapv(|c| c / (2.0 * n as f64 * lambda_n));

    let make_rule = |alphas: Array1<f64>, intercept: f64, kkt: f64, iters: usize| {
        let mut rule = DecisionRule {
            alphas,
            intercept,
            train_points_reduced: problem.reduced.clone(),
            bandwidth: problem.bandwidth,
            basis: problem.basis.clone(),
            lambda_n,
            kkt_violation: kkt,
            solver_iters: iters,
            objective: 0.0,
        };
        rule.objective = primal_objective(problem, &rule, lambda_n);
        rule
    };

    let live: Vec<usize> = (0..n).filter(|&i| cost[i] > 0.0).collect();
    if live.is_empty() {
        log::warn!("all sample weights are zero; returning the degenerate zero rule");
        return Ok(make_rule(Array1::zeros(n), 0.0, 0.0, 0));
    }
    let has_plus = live.iter().any(|&i| y[i] > 0.0);
    let has_minus = live.iter().any(|&i| y[i] < 0.0);
    if !(has_plus && has_minus) {
        // one-sided problem: the best rule is the constant at the only label
        let label = if has_plus { 1.0 } else { -1.0 };
        return Ok(make_rule(Array1::zeros(n), label, 0.0, 0));
    }

    let mut delta = Array1::<f64>::zeros(n);
    let mut h = Array1::<f64>::zeros(n); // sum_j delta_j y_j K_ij
    let mut iters = 0;
    let mut violation = f64::INFINITY;
    let iter_cap = max_smo_iters(n);
    while iters < iter_cap {
        // maximal violating pair over candidate sets
        let mut m_val = f64::NEG_INFINITY;
        let mut m_idx = None;
        let mut mm_val = f64::INFINITY;
        let mut mm_idx = None;
        for &i in &live {
            let score = -y[i] * (y[i] * h[i] - 1.0);
            let up = (y[i] > 0.0 && delta[i] < cost[i]) || (y[i] < 0.0 && delta[i] > 0.0);
            let low = (y[i] < 0.0 && delta[i] < cost[i]) || (y[i] > 0.0 && delta[i] > 0.0);
            if up && score > m_val {
                m_val = score;
                m_idx = Some(i);
            }
            if low && score < mm_val {
                mm_val = score;
                mm_idx = Some(i);
            }
        }
        let (i, j) = match (m_idx, mm_idx) {
            (Some(i), Some(j)) => (i, j),
            _ => {
                // one candidate set emptied out; the intercept absorbs the rest
                violation = 0.0;
                break;
            }
        };
        violation = m_val - mm_val;
        if violation <= tol {
            break;
        }
        let quad = (k[[i, i]] + k[[j, j]] - 2.0 * k[[i, j]]).max(TAU);
        let mut t = violation / quad;
        // box limits on the common step
        let upper_i = if y[i] > 0.0 {
            cost[i] - delta[i]
        } else {
            delta[i]
        };
        let upper_j = if y[j] > 0.0 {
            delta[j]
        } else {
            cost[j] - delta[j]
        };
        t = t.min(upper_i).min(upper_j);
        if t <= 0.0 {
            break;
        }
        delta[i] += y[i] * t;
        delta[j] -= y[j] * t;
        for kk in 0..n {
            h[kk] += t * (k[[i, kk]] - k[[j, kk]]);
        }
        iters += 1;
    }
    if violation > tol {
        return Err(Error::SolverDidNotConverge {
            what: "weighted svm dual",
            residual: violation,
            iters,
        });
    }

    // intercept: exact minimizer of the weighted hinge given the expansion
    // (the KKT conditions pin it only within an interval when no support
    // vector is free)
    let intercept = optimal_intercept(y, &cost, &h);
    let alphas = Array1::from_iter((0..n).map(|i| delta[i] * y[i]));
    Ok(make_rule(alphas, intercept, violation.max(0.0), iters))
}

/// Exact minimizer over the intercept of `sum_i c_i max(0, 1 - l_i (h_i + b))`:
/// a convex piecewise-linear function whose slope increases by `c_i` at each
/// breakpoint `b = l_i - h_i`, starting from `-sum_{l_i = +1} c_i`.
fn optimal_intercept(labels: &Array1<f64>, costs: &Array1<f64>, h: &Array1<f64>) -> f64 {
    let mut breaks: Vec<(f64, f64)> = Vec::new(); // (breakpoint, cost)
    let mut slope: f64 = 0.0;
    for i in 0..labels.len() {
        if costs[i] > 0.0 {
            breaks.push((labels[i] - h[i], costs[i]));
            if labels[i] > 0.0 {
                slope -= costs[i];
            }
        }
    }
    if breaks.is_empty() {
        return 0.0;
    }
    breaks.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite breakpoints"));
    for (k, &(b, c)) in breaks.iter().enumerate() {
        let next = slope + c;
        if next > 0.0 {
            return b;
        }
        if next == 0.0 {
            // flat optimal segment up to the next breakpoint
            return match breaks.get(k + 1) {
                Some(&(b2, _)) => 0.5 * (b + b2),
                None => b,
            };
        }
        slope = next;
    }
    breaks.last().expect("nonempty").0
}

/// The empirical objective Q at a fitted rule.
pub fn primal_objective(problem: &WsvmProblem, rule: &DecisionRule, lambda_n: f64) -> f64 {
    let n = problem.labels.len();
    let k = problem.gram.values();
    let f = k.dot(&rule.alphas) + rule.intercept;
    let mut hinge = 0.0;
    for i in 0..n {
        hinge += problem.sample_weights[i] * (1.0 - problem.labels[i] * f[i]).max(0.0);
    }
    let penalty = rule.alphas.dot(&k.dot(&rule.alphas));
    hinge / n as f64 + lambda_n * penalty
}

/// Decision function at a single covariate vector.
pub fn decision_function(rule: &DecisionRule, x: ArrayView1<f64>) -> Result<f64> {
    if x.len() != rule.basis.p() {
        return Err(Error::DimensionMismatch {
            left: x.len(),
            right: rule.basis.p(),
            context: "decision_function input dimension",
        });
    }
    let v = rule.basis.b.t().dot(&x);
    let mut out = rule.intercept;
    for (alpha, vi) in rule
        .alphas
        .iter()
        .zip(rule.train_points_reduced.axis_iter(ndarray::Axis(0)))
    {
        if *alpha != 0.0 {
            out += alpha * kernel(vi, v.view(), rule.bandwidth);
        }
    }
    Ok(out)
}

/// Decision values for a batch of covariate rows.
pub fn decision_values(rule: &DecisionRule, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    if x.ncols() != rule.basis.p() {
        return Err(Error::DimensionMismatch {
            left: x.ncols(),
            right: rule.basis.p(),
            context: "decision_values input dimension",
        });
    }
    let v = x.dot(&rule.basis.b);
    let k = gram(v.view(), rule.train_points_reduced.view(), rule.bandwidth)?;
    Ok(k.values().dot(&rule.alphas) + rule.intercept)
}

/// Treatment recommendation: sign of the decision function, ties to +1.
pub fn predict_treatment(rule: &DecisionRule, x: ArrayView1<f64>) -> Result<f64> {
    Ok(sign_plus(decision_function(rule, x)?))
}

/// Batch treatment recommendations.
pub fn predict_treatments(rule: &DecisionRule, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    Ok(decision_values(rule, x)?.mapv(sign_plus))
}

/// Inverse-propensity-weighted value of predicted assignments on held-out
/// rows, using the balancing weights as inverse propensities.
fn holdout_value(
    decisions: &Array1<f64>,
    idx: &[usize],
    dataset: &Dataset,
    weights: &BalancingWeights,
) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (pos, &i) in idx.iter().enumerate() {
        if dataset.a[i] == decisions[pos] {
            num += dataset.y[i] * weights.w[i];
            den += weights.w[i];
        }
    }
    if den > 0.0 {
        Some(num / den)
    } else {
        None
    }
}

/// Select the penalty by cross-validated value: for each candidate the rule
/// is refit on each training fold and scored by the weighted value estimate
/// on the held-out fold; the winner (ties toward larger lambda) is refit on
/// the full problem.
pub fn tune_lambda(
    problem: &WsvmProblem,
    lambda_grid: &[f64],
    cv_folds: usize,
    dataset: &Dataset,
    weights: &BalancingWeights,
    tol: f64,
    seed: u64,
) -> Result<(DecisionRule, f64)> {
    if lambda_grid.is_empty() {
        return Err(Error::InvalidParameter("empty lambda grid".into()));
    }
    if cv_folds < 2 {
        return Err(Error::InvalidParameter(
            "cross-validation needs at least 2 folds".into(),
        ));
    }
    let n = problem.labels.len();
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

    let mut scored: Vec<(f64, f64)> = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let mut sum = 0.0;
        let mut ok = true;
        for held in 0..cv_folds {
            let valid_idx = &folds[held];
            let train_idx: Vec<usize> = (0..cv_folds)
                .filter(|&f| f != held)
                .flat_map(|f| folds[f].iter().copied())
                .collect();
            let sub = subset_problem(problem, &train_idx);
            match fit_wsvm(&sub, lambda, tol) {
                Ok(rule) => {
                    // decision values at held-out rows from the full Gram
                    let kv = problem.gram.select(valid_idx, &train_idx);
                    let dec = (kv.dot(&rule.alphas) + rule.intercept).mapv(sign_plus);
                    match holdout_value(&dec, valid_idx, dataset, weights) {
                        Some(v) => sum += v,
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        let score = if ok {
            sum / cv_folds as f64
        } else {
            f64::NEG_INFINITY
        };
        scored.push((score, lambda));
    }
    // best score first; ties toward larger lambda. The full-data refit can
    // need more iterations than the fold fits, so walk down the ranking on
    // solver failure instead of giving up.
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal))
    });
    let mut last_err = None;
    for &(score, lambda) in &scored {
        if score == f64::NEG_INFINITY {
            break;
        }
        match fit_wsvm(problem, lambda, tol) {
            Ok(rule) => return Ok((rule, lambda)),
            Err(e) => last_err = Some(e),
        }
    }
    // every scored candidate failed somewhere; try the remaining grid in
    // descending-lambda order before surfacing the error
    let mut grid: Vec<f64> = lambda_grid.to_vec();
    grid.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    for lambda in grid {
        match fit_wsvm(problem, lambda, tol) {
            Ok(rule) => return Ok((rule, lambda)),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::InvalidParameter("empty lambda grid".into())))
}
