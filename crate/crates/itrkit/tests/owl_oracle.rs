//! Dual-solver validation against an independent primal subgradient solver.

mod common;

use itrkit::gkdr::SubspaceBasis;
use itrkit::kernels::{gram, Bandwidth};
use itrkit::owl::{fit_wsvm, WsvmProblem};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn problem_from(
    v: ndarray::Array2<f64>,
    labels: ndarray::Array1<f64>,
    costs: ndarray::Array1<f64>,
    sigma: f64,
) -> WsvmProblem {
    let dim = v.ncols();
    let bw = Bandwidth::new(sigma).unwrap();
    let g = gram(v.view(), v.view(), bw).unwrap();
    WsvmProblem {
        labels,
        sample_weights: costs,
        gram: g,
        reduced: v,
        basis: SubspaceBasis::identity(dim),
        bandwidth: bw,
    }
}

#[test]
fn dual_objective_matches_subgradient_primal_on_small_instance() {
    let mut rng = ChaCha8Rng::seed_from_u64(314);
    let (v, labels, costs) = common::random_instance(&mut rng, 12, 2);
    let lambda = 0.08;
    let problem = problem_from(v, labels.clone(), costs.clone(), 1.0);
    let rule = fit_wsvm(&problem, lambda, 1e-10).unwrap();
    let (_, _, q_ref) = common::subgradient_primal(
        problem.gram.values(),
        &labels,
        &costs,
        lambda,
        8,
        4_000,
    );
    assert!(
        (rule.objective - q_ref).abs() <= 1e-6,
        "dual {} vs subgradient {}",
        rule.objective,
        q_ref
    );
}

#[test]
fn line_search_matches_grid_scan() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..200 {
        let n = rng.random_range(3..10usize);
        let (v, labels, costs) = common::random_instance(&mut rng, n, 2);
        let bw = Bandwidth::new(1.0).unwrap();
        let g = gram(v.view(), v.view(), bw).unwrap();
        let lambda = rng.random_range(0.01..0.5);
        let alpha = ndarray::Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
        let a0: f64 = rng.random_range(-1.0..1.0);
        let d_alpha = ndarray::Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
        let d0: f64 = rng.random_range(-1.0..1.0);
        let t = common::exact_line_search(
            g.values(), &labels, &costs, lambda, &alpha, a0, &d_alpha, d0,
        );
        let q_of = |t: f64| {
            let a = &alpha + &(&d_alpha * t);
            common::primal_q(g.values(), &labels, &costs, lambda, &a, a0 + t * d0)
        };
        let q_t = q_of(t);
        // brute force over a wide grid
        let mut q_best = f64::INFINITY;
        let mut t_best = 0.0;
        for k in -4000..=4000 {
            let tt = k as f64 * 0.005;
            let q = q_of(tt);
            if q < q_best {
                q_best = q;
                t_best = tt;
            }
        }
        assert!(
            q_t <= q_best + 1e-6,
            "trial {trial}: line search t={t} q={q_t} vs grid t={t_best} q={q_best}"
        );
    }
}
