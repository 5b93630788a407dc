//! Rule evaluation: accuracy against the reference rule, inverse-propensity
//! value estimators, and subspace projection error.

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gkdr::SubspaceBasis;
use crate::linalg::{fro_diff, orthonormalize, projector};
use crate::owl::{predict_treatments, DecisionRule};
use crate::simgen::SimOracle;

/// Summary of a rule's performance on a test set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: Option<f64>,
    pub value_estimate: f64,
    pub value_pct_of_bayes: Option<f64>,
    pub modified_value: f64,
    pub projection_error: Option<f64>,
    pub n_test: usize,
}

/// Fraction of test points where the rule agrees with the reference
/// (Bayes-optimal) treatment.
pub fn accuracy(rule: &DecisionRule, testset: &Dataset, oracle: &SimOracle) -> Result<f64> {
    if testset.n() == 0 {
        return Err(Error::InvalidParameter("empty test set".into()));
    }
    let pred = predict_treatments(rule, testset.x.view())?;
    accuracy_of_predictions(&pred, oracle)
}

/// Accuracy of precomputed predictions against the oracle rule.
pub fn accuracy_of_predictions(pred: &Array1<f64>, oracle: &SimOracle) -> Result<f64> {
    if pred.len() != oracle.n() {
        return Err(Error::DimensionMismatch {
            left: pred.len(),
            right: oracle.n(),
            context: "accuracy prediction length",
        });
    }
    let hits = pred
        .iter()
        .enumerate()
        .filter(|(i, &d)| d == oracle.bayes_rule_row(*i))
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Inverse-propensity ratio estimator of the value of a rule:
/// `sum 1{A_i = d_i} Y_i / pi_i  /  sum 1{A_i = d_i} / pi_i`.
pub fn value_estimate(
    rule: &DecisionRule,
    testset: &Dataset,
    propensity_values: &Array1<f64>,
) -> Result<f64> {
    let pred = predict_treatments(rule, testset.x.view())?;
    value_of_predictions(&pred, testset, propensity_values)
}

/// Ratio value estimator for precomputed predictions.
pub fn value_of_predictions(
    pred: &Array1<f64>,
    testset: &Dataset,
    propensity_values: &Array1<f64>,
) -> Result<f64> {
    check_propensities(propensity_values, testset.n())?;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..testset.n() {
        if testset.a[i] == pred[i] {
            num += testset.y[i] / propensity_values[i];
            den += 1.0 / propensity_values[i];
        }
    }
    if den == 0.0 {
        return Err(Error::UndefinedValue(
            "the rule matches no observed treatment; the ratio estimator is undefined".into(),
        ));
    }
    Ok(num / den)
}

/// Modified value function:
/// `(1/n) sum Y_i / pi_i [1{A_i = d_i} - 1{A_i = -d_i}]`.
pub fn modified_value(
    rule: &DecisionRule,
    testset: &Dataset,
    estimated_propensity: &Array1<f64>,
) -> Result<f64> {
    let pred = predict_treatments(rule, testset.x.view())?;
    modified_value_of_predictions(&pred, testset, estimated_propensity)
}

/// Modified value function for precomputed predictions.
pub fn modified_value_of_predictions(
    pred: &Array1<f64>,
    testset: &Dataset,
    estimated_propensity: &Array1<f64>,
) -> Result<f64> {
    check_propensities(estimated_propensity, testset.n())?;
    let n = testset.n() as f64;
    let mut sum = 0.0;
    for i in 0..testset.n() {
        let indicator = if testset.a[i] == pred[i] {
            1.0
        } else {
            -1.0 // A_i = -d_i, since treatments are binary
        };
        sum += testset.y[i] / estimated_propensity[i] * indicator;
    }
    Ok(sum / n)
}

fn check_propensities(pi: &Array1<f64>, n: usize) -> Result<()> {
    if pi.len() != n {
        return Err(Error::DimensionMismatch {
            left: pi.len(),
            right: n,
            context: "propensity length",
        });
    }
    if pi.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::InvalidParameter(
            "propensity values must lie strictly inside (0, 1)".into(),
        ));
    }
    Ok(())
}

/// Frobenius distance between the projectors of the estimated and true
/// subspaces. The reference basis is orthonormalized defensively.
pub fn projection_error(b_hat: &SubspaceBasis, b0: ArrayView2<f64>) -> Result<f64> {
    if b_hat.p() != b0.nrows() {
        return Err(Error::DimensionMismatch {
            left: b_hat.p(),
            right: b0.nrows(),
            context: "projection_error ambient dimension",
        });
    }
    let q_hat = orthonormalize(b_hat.b.view())?;
    let q0 = orthonormalize(b0)?;
    Ok(fro_diff(&projector(q_hat.view()), &projector(q0.view())))
}

/// Value of the rule as a percentage of the Bayes rule's value on the same
/// test set, both measured by the ratio estimator with true propensities.
pub fn value_pct_of_bayes(
    rule: &DecisionRule,
    testset: &Dataset,
    oracle: &SimOracle,
) -> Result<f64> {
    let pi = Array1::from_iter(
        (0..testset.n()).map(|i| oracle.propensity_row(i, testset.a[i])),
    );
    let v_rule = value_estimate(rule, testset, &pi)?;
    let bayes: Array1<f64> = Array1::from_iter((0..testset.n()).map(|i| oracle.bayes_rule_row(i)));
    let v_bayes = value_of_predictions(&bayes, testset, &pi)?;
    if v_bayes == 0.0 {
        return Err(Error::UndefinedValue("Bayes value is zero".into()));
    }
    Ok(100.0 * v_rule / v_bayes)
}

/// Convenience wrapper for a thin basis given as a bare matrix.
pub fn projection_error_raw(b_hat: ArrayView2<f64>, b0: ArrayView2<f64>) -> Result<f64> {
    let basis = SubspaceBasis {
        b: b_hat.to_owned(),
        eigenvalues: Array1::zeros(b_hat.ncols()),
        degenerate: false,
    };
    projection_error(&basis, b0)
}
