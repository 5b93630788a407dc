//! Linear projection estimate g and the weighted pseudo-outcomes built
//! from it.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::balancing::{BalancingWeights, WeightsMethod};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{column_moments, standardize};
use crate::linalg::{rcond_sym, SpdSolver};

/// Reciprocal condition number below which the ridge fallback kicks in.
const RCOND_FALLBACK: f64 = 1e-12;

/// Linear projection estimate: g(x) = x' coef (plus optional column
/// standardization applied before the inner product).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GEstimate {
    #[serde(with = "crate::io::array1_serde")]
    pub coef: Array1<f64>,
    pub ridge: f64,
    pub source_weights: WeightsMethod,
    /// Column shift/scale when the fit standardized covariates.
    #[serde(default)]
    pub scaling: Option<(Vec<f64>, Vec<f64>)>,
}

impl GEstimate {
    /// A g that is identically zero (used when g is not estimated).
    pub fn zero(p: usize, source: WeightsMethod) -> Self {
        Self {
            coef: Array1::zeros(p),
            ridge: 0.0,
            source_weights: source,
            scaling: None,
        }
    }

    pub fn evaluate(&self, x: ArrayView1<f64>) -> f64 {
        match &self.scaling {
            None => x.dot(&self.coef),
            Some((mean, sd)) => x
                .iter()
                .zip(mean.iter().zip(sd.iter()))
                .zip(self.coef.iter())
                .map(|((xi, (m, s)), c)| (xi - m) / s * c)
                .sum(),
        }
    }

    pub fn evaluate_all(&self, x: &Array2<f64>) -> Array1<f64> {
        Array1::from_iter((0..x.nrows()).map(|i| self.evaluate(x.row(i))))
    }
}

/// Per-unit pseudo-outcomes.
#[derive(Debug, Clone)]
pub struct PseudoOutcomes {
    pub z: Array1<f64>,
}

/// Fit the linear projection of the weighted outcome residual signal:
/// `coef = (X'X/n + ridge I)^{-1} (1/n) sum_i X_i (w_i - 1) Y_i`.
///
/// With `ridge = 0`, a near-singular design (reciprocal condition number
/// below 1e-12) falls back to `1e-8 * trace(X'X/n) / p`.
pub fn fit_g(dataset: &Dataset, weights: &BalancingWeights, ridge: f64) -> Result<GEstimate> {
    fit_g_impl(dataset, weights, ridge, false)
}

/// `fit_g` on column-standardized covariates; the returned estimate applies
/// the same standardization at evaluation time.
pub fn fit_g_standardized(
    dataset: &Dataset,
    weights: &BalancingWeights,
    ridge: f64,
) -> Result<GEstimate> {
    fit_g_impl(dataset, weights, ridge, true)
}

fn fit_g_impl(
    dataset: &Dataset,
    weights: &BalancingWeights,
    ridge: f64,
    standardized: bool,
) -> Result<GEstimate> {
    if dataset.n() == 0 {
        return Err(Error::InvalidParameter("empty dataset".into()));
    }
    if weights.w.len() != dataset.n() {
        return Err(Error::DimensionMismatch {
            left: weights.w.len(),
            right: dataset.n(),
            context: "fit_g weights",
        });
    }
    if ridge < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "ridge must be nonnegative, got {ridge}"
        )));
    }
    let n = dataset.n() as f64;
    let p = dataset.p();
    let (x_owned, scaling);
    if standardized {
        let (mean, sd) = column_moments(dataset.x.view());
        x_owned = standardize(dataset.x.view(), &mean, &sd);
        scaling = Some((mean.to_vec(), sd.to_vec()));
    } else {
        x_owned = dataset.x.clone();
        scaling = None;
    }
    let m = x_owned.t().dot(&x_owned) / n;
    let signal = Array1::from_iter(
        (0..dataset.n()).map(|i| (weights.w[i] - 1.0) * dataset.y[i]),
    );
    let b = x_owned.t().dot(&signal) / n;

    let mut used_ridge = ridge;
    if used_ridge == 0.0 && rcond_sym(m.view())? < RCOND_FALLBACK {
        used_ridge = 1e-8 * m.diag().sum() / p as f64;
    }
    let mut system = m;
    for j in 0..p {
        system[[j, j]] += used_ridge;
    }
    let coef = match SpdSolver::new(&system) {
        Ok(solver) => solver.solve(&b)?,
        Err(_) => {
            // last-resort ridge bump when the plain factorization fails
            used_ridge = used_ridge.max(1e-8 * system.diag().sum() / p as f64);
            for j in 0..p {
                system[[j, j]] += used_ridge;
            }
            SpdSolver::new(&system)?.solve(&b)?
        }
    };
    Ok(GEstimate {
        coef,
        ridge: used_ridge,
        source_weights: weights.method,
        scaling,
    })
}

/// Pseudo-outcomes `z_i = w_i A_i (Y_i - g(X_i))`.
pub fn pseudo_outcomes(
    dataset: &Dataset,
    weights: &BalancingWeights,
    g: &GEstimate,
) -> Result<PseudoOutcomes> {
    if weights.w.len() != dataset.n() {
        return Err(Error::DimensionMismatch {
            left: weights.w.len(),
            right: dataset.n(),
            context: "pseudo_outcomes weights",
        });
    }
    let z = Array1::from_iter((0..dataset.n()).map(|i| {
        weights.w[i] * dataset.a[i] * (dataset.y[i] - g.evaluate(dataset.x.row(i)))
    }));
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite pseudo-outcome".into()));
    }
    Ok(PseudoOutcomes { z })
}

/// Pseudo-outcomes from externally supplied per-row g values (oracle mode).
pub fn pseudo_outcomes_from_values(
    dataset: &Dataset,
    weights: &BalancingWeights,
    g_values: &Array1<f64>,
) -> Result<PseudoOutcomes> {
    if g_values.len() != dataset.n() {
        return Err(Error::DimensionMismatch {
            left: g_values.len(),
            right: dataset.n(),
            context: "pseudo_outcomes g values",
        });
    }
    let z = Array1::from_iter(
        (0..dataset.n()).map(|i| weights.w[i] * dataset.a[i] * (dataset.y[i] - g_values[i])),
    );
    Ok(PseudoOutcomes { z })
}
