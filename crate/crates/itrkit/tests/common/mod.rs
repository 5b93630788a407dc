//! Shared test helpers, including an independent primal solver for the
//! weighted hinge objective used to validate the dual solver.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// The weighted hinge objective
/// `Q(alpha, a0) = (1/n) sum_i c_i max(0, 1 - l_i ((G alpha)_i + a0)) + lambda alpha' G alpha`.
pub fn primal_q(
    gram: &Array2<f64>,
    labels: &Array1<f64>,
    costs: &Array1<f64>,
    lambda: f64,
    alpha: &Array1<f64>,
    a0: f64,
) -> f64 {
    let n = labels.len();
    let f = gram.dot(alpha);
    let mut hinge = 0.0;
    for i in 0..n {
        hinge += costs[i] * (1.0 - labels[i] * (f[i] + a0)).max(0.0);
    }
    hinge / n as f64 + lambda * alpha.dot(&f)
}

/// Subgradient of the primal objective at (alpha, a0); hinge terms count as
/// active on strict margin violation.
fn primal_subgradient(
    gram: &Array2<f64>,
    labels: &Array1<f64>,
    costs: &Array1<f64>,
    lambda: f64,
    alpha: &Array1<f64>,
    a0: f64,
) -> (Array1<f64>, f64) {
    let n = labels.len();
    let f = gram.dot(alpha);
    let mut grad_alpha = f.mapv(|v| 2.0 * lambda * v);
    let mut grad_a0 = 0.0;
    for i in 0..n {
        let margin = labels[i] * (f[i] + a0);
        if margin < 1.0 {
            let coef = -costs[i] * labels[i] / n as f64;
            for k in 0..n {
                grad_alpha[k] += coef * gram[[i, k]];
            }
            grad_a0 += coef;
        }
    }
    (grad_alpha, grad_a0)
}

/// Exact minimization of the primal objective along a ray: the restriction
/// is piecewise quadratic with breakpoints where a margin crosses 1, so a
/// sorted scan finds the global 1-d minimizer analytically.
pub fn exact_line_search(
    gram: &Array2<f64>,
    labels: &Array1<f64>,
    costs: &Array1<f64>,
    lambda: f64,
    alpha: &Array1<f64>,
    a0: f64,
    d_alpha: &Array1<f64>,
    d_a0: f64,
) -> f64 {
    let n = labels.len();
    let f = gram.dot(alpha);
    let df = gram.dot(d_alpha);
    // margins m_i(t) = m_i + t s_i
    let margins: Vec<f64> = (0..n).map(|i| labels[i] * (f[i] + a0)).collect();
    let slopes: Vec<f64> = (0..n).map(|i| labels[i] * (df[i] + d_a0)).collect();
    // quadratic part: lambda (alpha + t d)' G (alpha + t d)
    let quad_a = lambda * d_alpha.dot(&df);
    let quad_b = 2.0 * lambda * d_alpha.dot(&f);
    // hinge contribution on an interval where the active set is fixed is
    // linear in t; collect breakpoints and scan
    // the scan covers t in [-WINDOW, WINDOW]; hinge toggles outside never
    // matter for the minimizer because step directions are rescaled anyway
    const WINDOW: f64 = 1e9;
    let mut breaks: Vec<f64> = Vec::with_capacity(n);
    for i in 0..n {
        if slopes[i] != 0.0 {
            let b = (1.0 - margins[i]) / slopes[i];
            if b.abs() < WINDOW {
                breaks.push(b);
            }
        }
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup();
    // linear hinge coefficients on the leftmost interval
    let t_low = -WINDOW;
    let mut lin_b = 0.0; // d/dt of hinge part on the current interval
    let mut lin_c = 0.0; // hinge value at t = 0 extrapolated on the interval
    for i in 0..n {
        if margins[i] + t_low * slopes[i] < 1.0 {
            lin_b -= costs[i] * slopes[i] / n as f64;
            lin_c += costs[i] * (1.0 - margins[i]) / n as f64;
        }
    }
    let q_at = |t: f64, lin_b: f64, lin_c: f64| -> f64 {
        quad_a * t * t + quad_b * t + lin_b * t + lin_c
    };
    // walk the intervals: [t_low, b_1], [b_1, b_2], ..., [b_k, last + 1]
    let mut cur_b = lin_b;
    let mut cur_c = lin_c;
    let mut best_t = 0.0;
    let mut best_q = f64::INFINITY;
    // end intervals are effectively unbounded; on them the hinge slope
    // points inward, so the model cannot spuriously improve toward infinity
    let mut edges = Vec::with_capacity(breaks.len() + 2);
    edges.push(-WINDOW);
    edges.extend(breaks.iter().copied());
    edges.push(WINDOW);
    for w in 0..edges.len() - 1 {
        let (lo, hi) = (edges[w], edges[w + 1]);
        // candidate minimizer inside [lo, hi]
        let t_star = if quad_a > 0.0 {
            (-(quad_b + cur_b) / (2.0 * quad_a)).clamp(lo, hi)
        } else if quad_b + cur_b > 0.0 {
            lo
        } else {
            hi
        };
        for &t in &[t_star, lo, hi] {
            let q = q_at(t, cur_b, cur_c);
            if q < best_q {
                best_q = q;
                best_t = t;
            }
        }
        // crossing edge hi: toggle every hinge whose breakpoint is hi
        for i in 0..n {
            if slopes[i] != 0.0 {
                let b = (1.0 - margins[i]) / slopes[i];
                if b == hi {
                    if slopes[i] > 0.0 {
                        // margin rises through 1: hinge deactivates
                        cur_b += costs[i] * slopes[i] / n as f64;
                        cur_c -= costs[i] * (1.0 - margins[i]) / n as f64;
                    } else {
                        // margin falls through 1: hinge activates
                        cur_b -= costs[i] * slopes[i] / n as f64;
                        cur_c += costs[i] * (1.0 - margins[i]) / n as f64;
                    }
                }
            }
        }
    }
    best_t
}

/// Primal reference solver: a short diminishing-step subgradient ladder for
/// global placement, then steepest descent with exact piecewise-quadratic
/// line searches. Entirely independent of the dual coordinate-ascent path.
pub fn subgradient_primal(
    gram: &Array2<f64>,
    labels: &Array1<f64>,
    costs: &Array1<f64>,
    lambda: f64,
    sweeps: usize,
    iters_per_sweep: usize,
) -> (Array1<f64>, f64, f64) {
    let n = labels.len();
    let mut alpha = Array1::<f64>::zeros(n);
    let mut a0 = 0.0;
    let mut best_q = primal_q(gram, labels, costs, lambda, &alpha, a0);
    let mut best = (alpha.clone(), a0);

    let (eta_hi, eta_lo): (f64, f64) = (1e-1, 1e-6);
    for s in 0..sweeps {
        let eta = eta_hi * (eta_lo / eta_hi).powf(s as f64 / (sweeps - 1).max(1) as f64);
        alpha = best.0.clone();
        a0 = best.1;
        for _ in 0..iters_per_sweep {
            let (ga, g0) = primal_subgradient(gram, labels, costs, lambda, &alpha, a0);
            let norm = (ga.dot(&ga) + g0 * g0).sqrt();
            if norm == 0.0 {
                break;
            }
            let step = eta / norm.max(1.0);
            alpha.scaled_add(-step, &ga);
            a0 -= step * g0;
            let q = primal_q(gram, labels, costs, lambda, &alpha, a0);
            if q < best_q {
                best_q = q;
                best = (alpha.clone(), a0);
            }
        }
    }

    // polish: steepest descent in the nonsmooth sense (negative minimum-norm
    // subgradient, kink activations solved as a small box QP) with exact
    // line searches and conjugate-gradient momentum that restarts whenever
    // the active set changes; terminates on a vanishing minimum-norm
    // subgradient, which certifies optimality
    alpha = best.0.clone();
    a0 = best.1;
    let mut q = primal_q(gram, labels, costs, lambda, &alpha, a0);
    let mut prev_g: Option<(Array1<f64>, f64)> = None;
    let mut dir: Option<(Array1<f64>, f64)> = None;
    let mut prev_active: Vec<i8> = Vec::new();
    for _ in 0..40_000 {
        let (ng_alpha, ng_a0, gnorm, active) =
            min_norm_subgradient(gram, labels, costs, lambda, &alpha, a0);
        if gnorm <= 1e-11 {
            break;
        }
        let g_alpha = ng_alpha.mapv(|v| -v);
        let g_a0 = -ng_a0;
        let restart = active != prev_active;
        let beta = match (&prev_g, restart) {
            (Some((pg, pg0)), false) => {
                let denom = pg.dot(pg) + pg0 * pg0;
                let numer = g_alpha.dot(&g_alpha) + g_a0 * g_a0
                    - (g_alpha.dot(pg) + g_a0 * pg0);
                (numer / denom).max(0.0)
            }
            _ => 0.0,
        };
        let (mut d_alpha, mut d_a0) = match (&dir, beta > 0.0) {
            (Some((pd, pd0)), true) => (&ng_alpha + &(pd * beta), ng_a0 + beta * pd0),
            _ => (ng_alpha.clone(), ng_a0),
        };
        // fall back to plain steepest descent when momentum spoils descent
        if d_alpha.dot(&g_alpha) + d_a0 * g_a0 >= 0.0 {
            d_alpha = ng_alpha.clone();
            d_a0 = ng_a0;
        }
        let t = exact_line_search(gram, labels, costs, lambda, &alpha, a0, &d_alpha, d_a0);
        let cand_alpha = &alpha + &(&d_alpha * t);
        let cand_a0 = a0 + t * d_a0;
        let q_new = primal_q(gram, labels, costs, lambda, &cand_alpha, cand_a0);
        if q_new < q - 1e-16 * (1.0 + q.abs()) {
            alpha = cand_alpha;
            a0 = cand_a0;
            q = q_new;
            prev_g = Some((g_alpha, g_a0));
            dir = Some((d_alpha, d_a0));
            prev_active = active;
            continue;
        }
        // the min-norm ray stalled (borderline hinges outside the kink
        // tolerance can spoil it); probe coordinates before giving up
        let mut escaped = false;
        for probe in 0..=n {
            let mut pd = Array1::<f64>::zeros(n);
            let mut p0 = 0.0;
            if probe < n {
                pd[probe] = 1.0;
            } else {
                p0 = 1.0;
            }
            let t = exact_line_search(gram, labels, costs, lambda, &alpha, a0, &pd, p0);
            let cand_alpha = &alpha + &(&pd * t);
            let cand_a0 = a0 + t * p0;
            let q_probe = primal_q(gram, labels, costs, lambda, &cand_alpha, cand_a0);
            if q_probe < q - 1e-16 * (1.0 + q.abs()) {
                alpha = cand_alpha;
                a0 = cand_a0;
                q = q_probe;
                escaped = true;
                break;
            }
        }
        if !escaped {
            break;
        }
        prev_g = None;
        dir = None;
        prev_active.clear();
    }
    if q < best_q {
        best_q = q;
        best = (alpha, a0);
    }
    (best.0, best.1, best_q)
}

/// Negative of the minimum-norm element of the subdifferential at
/// (alpha, a0). Hinges with margins strictly below 1 contribute fully,
/// margins at 1 (within tolerance) contribute a free weight in [0, 1]
/// chosen to minimize the subgradient norm (box QP by coordinate descent).
pub fn min_norm_subgradient(
    gram: &Array2<f64>,
    labels: &Array1<f64>,
    costs: &Array1<f64>,
    lambda: f64,
    alpha: &Array1<f64>,
    a0: f64,
) -> (Array1<f64>, f64, f64, Vec<i8>) {
    const KINK_TOL: f64 = 1e-7;
    let n = labels.len();
    let f = gram.dot(alpha);
    // base: penalty gradient plus strictly active hinges
    let mut g_alpha = f.mapv(|v| 2.0 * lambda * v);
    let mut g_a0 = 0.0;
    let mut kinks: Vec<usize> = Vec::new();
    let mut active = vec![0_i8; n];
    for i in 0..n {
        let margin = labels[i] * (f[i] + a0);
        if margin < 1.0 - KINK_TOL {
            active[i] = 1;
            let coef = -costs[i] * labels[i] / n as f64;
            for k in 0..n {
                g_alpha[k] += coef * gram[[i, k]];
            }
            g_a0 += coef;
        } else if margin <= 1.0 + KINK_TOL && costs[i] > 0.0 {
            active[i] = 2;
            kinks.push(i);
        }
    }
    // minimize || g + sum_j theta_j v_j ||^2 over theta in [0,1]^K by an
    // active-set least-squares loop (K is small): solve the free subsystem
    // exactly, clamp violators, repeat
    let k = kinks.len();
    let cols: Vec<(Array1<f64>, f64)> = kinks
        .iter()
        .map(|&i| {
            let coef = -costs[i] * labels[i] / n as f64;
            (
                Array1::from_iter((0..n).map(|m| coef * gram[[i, m]])),
                coef,
            )
        })
        .collect();
    let mut theta = vec![0.5_f64; k];
    if k > 0 {
        // Gram matrix of the kink columns and their inner products with g
        let mut vv = vec![vec![0.0_f64; k]; k];
        let mut vg = vec![0.0_f64; k];
        for a in 0..k {
            vg[a] = cols[a].0.dot(&g_alpha) + cols[a].1 * g_a0;
            for b in a..k {
                let val = cols[a].0.dot(&cols[b].0) + cols[a].1 * cols[b].1;
                vv[a][b] = val;
                vv[b][a] = val;
            }
        }
        let mut fixed: Vec<Option<f64>> = vec![None; k];
        for _ in 0..(2 * k + 4) {
            let free: Vec<usize> = (0..k).filter(|&j| fixed[j].is_none()).collect();
            if free.is_empty() {
                break;
            }
            // solve (V_f' V_f) t = -(V_f' g + V_f' V_b bounds) on the free set
            let kf = free.len();
            let mut m = vec![vec![0.0_f64; kf + 1]; kf];
            for (r, &a) in free.iter().enumerate() {
                let mut rhs = -vg[a];
                for (j, fb) in fixed.iter().enumerate() {
                    if let Some(b) = fb {
                        rhs -= vv[a][j] * b;
                    }
                }
                for (c, &b) in free.iter().enumerate() {
                    m[r][c] = vv[a][b];
                }
                m[r][kf] = rhs;
                m[r][r] += 1e-13 * (1.0 + vv[a][a]);
            }
            // Gaussian elimination with partial pivoting
            for col in 0..kf {
                let mut piv = col;
                for r in (col + 1)..kf {
                    if m[r][col].abs() > m[piv][col].abs() {
                        piv = r;
                    }
                }
                m.swap(col, piv);
                let d = m[col][col];
                if d.abs() < 1e-300 {
                    continue;
                }
                for r in 0..kf {
                    if r != col && m[r][col] != 0.0 {
                        let factor = m[r][col] / d;
                        for c in col..=kf {
                            m[r][c] -= factor * m[col][c];
                        }
                    }
                }
            }
            let mut any_clamped = false;
            for (r, &a) in free.iter().enumerate() {
                let t = if m[r][r].abs() < 1e-300 {
                    0.5
                } else {
                    m[r][kf] / m[r][r]
                };
                if t <= 0.0 {
                    fixed[a] = Some(0.0);
                    any_clamped = true;
                } else if t >= 1.0 {
                    fixed[a] = Some(1.0);
                    any_clamped = true;
                } else {
                    theta[a] = t;
                }
            }
            if !any_clamped {
                break;
            }
        }
        for j in 0..k {
            if let Some(b) = fixed[j] {
                theta[j] = b;
            }
        }
    }
    let mut r_alpha = g_alpha.clone();
    let mut r_a0 = g_a0;
    for (j, (va, vb)) in cols.iter().enumerate() {
        r_alpha.scaled_add(theta[j], va);
        r_a0 += theta[j] * vb;
    }
    let gnorm = (r_alpha.dot(&r_alpha) + r_a0 * r_a0).sqrt();
    (r_alpha.mapv(|v| -v), -r_a0, gnorm, active)
}

/// Random small weighted-classification instance in `dim` dimensions.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    n: usize,
    dim: usize,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let v = Array2::from_shape_fn((n, dim), |_| rng.random_range(-2.0..2.0));
    let labels = Array1::from_shape_fn(n, |_| if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 });
    let costs = Array1::from_shape_fn(n, |_| rng.random_range(0.1..2.0));
    (v, labels, costs)
}
