//! Synthetic data generators with full oracle access: three covariate
//! settings, each available in randomized and non-randomized (logistic
//! treatment assignment) form.
//!
//! A latent vector Z is drawn uniformly on [-2, 2]^50 per unit, covariates X
//! are deterministic transforms of Z, treatments follow the setting's
//! propensity, and outcomes are N(mu(Z) + A * f(V), 1) with V = B0^T X.
//!
//! Draws are ordered per row (latent block, treatment uniform, outcome
//! normal), so a dataset of size n is a prefix of any larger dataset
//! generated from the same seed.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const LATENT_DIM: usize = 50;
pub const COVARIATE_DIM: usize = 50;

/// Simulation setting identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    One,
    Two,
    Three,
}

impl Setting {
    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            1 => Ok(Setting::One),
            2 => Ok(Setting::Two),
            3 => Ok(Setting::Three),
            other => Err(Error::InvalidParameter(format!(
                "unknown setting id {other}, expected 1, 2 or 3"
            ))),
        }
    }

    pub fn id(&self) -> u32 {
        match self {
            Setting::One => 1,
            Setting::Two => 2,
            Setting::Three => 3,
        }
    }

    /// Dimension of the true treatment-interaction subspace.
    pub fn true_dim(&self) -> usize {
        match self {
            Setting::One | Setting::Two => 2,
            Setting::Three => 4,
        }
    }

    /// True basis of the interaction subspace, with unit-norm columns.
    pub fn b0(&self) -> Array2<f64> {
        let p = COVARIATE_DIM;
        match self {
            Setting::One | Setting::Two => {
                let a = (0.6f64.powi(2) + 0.5f64.powi(2) + 0.2f64.powi(2)).sqrt();
                let b = (0.2f64.powi(2) + 0.5f64.powi(2) + 0.5f64.powi(2)).sqrt();
                let mut b0 = Array2::zeros((p, 2));
                b0[[0, 0]] = 0.6 / a;
                b0[[1, 0]] = 0.5 / a;
                b0[[2, 0]] = -0.2 / a;
                b0[[1, 1]] = 0.2 / b;
                b0[[2, 1]] = 0.5 / b;
                b0[[4, 1]] = -0.5 / b;
                b0
            }
            Setting::Three => {
                let s = 1.0 / 2.0f64.sqrt();
                let mut b0 = Array2::zeros((p, 4));
                b0[[0, 0]] = s;
                b0[[1, 0]] = -s;
                b0[[0, 1]] = s;
                b0[[1, 1]] = s;
                b0[[2, 2]] = s;
                b0[[3, 2]] = -s;
                b0[[2, 3]] = s;
                b0[[3, 3]] = s;
                b0
            }
        }
    }

    /// Covariate transform X = t(Z) for one latent row.
    pub fn covariates(&self, z: ArrayView1<f64>) -> Array1<f64> {
        let mut x = z.to_owned();
        match self {
            Setting::One => {
                x[0] = (z[0] / 2.0).exp();
                x[1] = z[1] / (1.0 + z[0].exp());
                x[2] = (z[0] * z[2] / 25.0 + 0.6).powi(3);
                x[3] = (z[1] + z[3] + 20.0).powi(2);
            }
            Setting::Two => {
                x[0] = (z[0] + 1.0).exp() + z[1];
                x[1] = z[1] * z[1] * z[2];
                x[2] = (2.0 * z[2]).sin() * (z[3] + 5.0).powi(2);
                x[3] = (z[1].powi(3) + z[3] + 10.0) * (z[1] + z[3].powi(3) + 10.0);
            }
            Setting::Three => {
                x[1] = (z[1] - 0.2 * z[3] + 6.0).powi(3);
                x[3] = (0.5 * z[3]).exp();
                x[5] = z[5] / (1.0 + z[3].exp());
                x[7] = (z[5] + z[7] + 20.0).powi(2);
            }
        }
        x
    }

    /// Main outcome effect, a function of the latent vector.
    pub fn mu(&self, z: ArrayView1<f64>) -> f64 {
        match self {
            Setting::One => 5.0 + 6.0 * z[0] + 8.0 * z[1] + 3.0 * z[2] + 5.0 * z[3] + 5.0 * z[4],
            Setting::Two => {
                10.0 + 7.0 * z[0]
                    + 13.0 * z[1]
                    + 15.0 * z[2]
                    + 15.0 * z[3]
                    + 10.0 * z[4]
                    + 7.0 * z[5]
                    + 13.0 * z[6]
                    + 15.0 * z[7]
                    + 15.0 * z[8]
                    + 10.0 * z[9]
            }
            Setting::Three => {
                6.0 * z[0]
                    + 6.0 * z[1]
                    + 10.0 * z[2]
                    + 10.0 * z[3]
                    + 12.0 * z[4]
                    + 12.0 * z[5]
                    + 8.0 * z[6]
                    + 8.0 * z[7]
                    + 6.0 * z[8]
                    + 6.0 * z[9]
            }
        }
    }

    /// Treatment-covariate interaction evaluated on the reduced coordinates
    /// `v = B0^T x`.
    ///
    /// Square roots and logarithms are taken of absolute values so the
    /// function is defined on the whole support; a term that still fails to
    /// evaluate (measure-zero denominators) contributes zero.
    pub fn f_tilde_v(&self, v: ArrayView1<f64>) -> f64 {
        let val = match self {
            Setting::One => {
                let (v1, v2) = (v[0], v[1]);
                let t1 = 5.0 * (std::f64::consts::PI / (v1 + 1.0) / v2.abs().sqrt()).sin();
                let t2 = 2.5 * (std::f64::consts::PI * v1).sin() * v2.abs().ln();
                guard(t1) + guard(t2)
            }
            Setting::Two => {
                let (v1, v2) = (v[0], v[1]);
                let t1 = 6.0 * (v1 / 3.0).sin() * (v2.abs() + 1.0).ln();
                let t2 = 4.0 * (v2 * v1.abs().sqrt()).cos();
                let t3 = 5.0 * (2.0 * (v1 - 1.0) * (v2.abs() + 1.0).ln()).atan();
                guard(t1) + guard(t2) + guard(t3)
            }
            Setting::Three => {
                let (v1, v2, v3, v4) = (v[0], v[1], v[2], v[3]);
                let t1 = (v3 + 10.0)
                    * (2.0 * std::f64::consts::PI * (v1 - 2.0).abs().ln()).cos();
                let t2 = 3.0 * v2.abs().sqrt() * (0.5 * std::f64::consts::PI * v1).sin()
                    / (std::f64::consts::PI * v1.abs().sqrt());
                let t3 = (2.0 * v2.abs().ln()).atan() * (v4 - 4.0).abs().sqrt();
                guard(t1) + guard(t2) + guard(t3) - 3.0
            }
        };
        guard(val)
    }

    /// Interaction effect as a function of the covariate vector.
    pub fn f_tilde_x(&self, x: ArrayView1<f64>, b0: &Array2<f64>) -> f64 {
        let v = b0.t().dot(&x);
        self.f_tilde_v(v.view())
    }

    /// Non-randomized propensity Pr(A = +1 | Z).
    pub fn propensity_plus(&self, z: ArrayView1<f64>) -> f64 {
        let logit = match self {
            Setting::One => z[0] - z[1] - z[3] - z[5] - z[7] - z[9],
            Setting::Two => -z[2] + 2.0 * z[3] - z[4] - 0.5 * z[5],
            Setting::Three => {
                0.6 * z[0] + 1.2 * z[1] + 1.2 * z[2] - 0.8 * z[3] - z[4] - z[5]
            }
        };
        1.0 / (1.0 + (-logit).exp())
    }
}

#[inline]
fn guard(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

/// Ground truth attached to a generated dataset: the latent draws, the true
/// basis, and per-row main effect, interaction, and propensity values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimOracle {
    pub setting: Setting,
    pub randomized: bool,
    #[serde(with = "crate::io::array2_serde")]
    pub b0: Array2<f64>,
    #[serde(with = "crate::io::array2_serde")]
    pub latent: Array2<f64>,
    #[serde(with = "crate::io::array1_serde")]
    pub mu: Array1<f64>,
    #[serde(with = "crate::io::array1_serde")]
    pub f_tilde: Array1<f64>,
    #[serde(with = "crate::io::array1_serde")]
    pub pi_plus: Array1<f64>,
}

impl SimOracle {
    pub fn n(&self) -> usize {
        self.latent.nrows()
    }

    /// Pr(A = a | X_i) for row i.
    pub fn propensity_row(&self, i: usize, a: f64) -> f64 {
        if a > 0.0 {
            self.pi_plus[i]
        } else {
            1.0 - self.pi_plus[i]
        }
    }

    /// True inverse-propensity weights 1/pi(A_i, X_i) for an observed
    /// treatment vector.
    pub fn oracle_weights(&self, a: &Array1<f64>) -> Array1<f64> {
        Array1::from_iter(
            a.iter()
                .enumerate()
                .map(|(i, &ai)| 1.0 / self.propensity_row(i, ai)),
        )
    }

    /// Bayes-optimal treatment for an arbitrary covariate vector:
    /// sign of the interaction effect, with ties sent to +1.
    pub fn bayes_rule(&self, x: ArrayView1<f64>) -> f64 {
        let f = self.setting.f_tilde_x(x, &self.b0);
        if f >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Bayes-optimal treatment for row i of the generating data.
    pub fn bayes_rule_row(&self, i: usize) -> f64 {
        if self.f_tilde[i] >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Closed-form projection target g(x) = E[{1/pi(A,X) - 1} Y | X = x],
    /// evaluated for row i:
    /// pi(-1, x) (mu + f) + pi(+1, x) (mu - f).
    pub fn oracle_g_row(&self, i: usize) -> f64 {
        let pi_p = self.pi_plus[i];
        let pi_m = 1.0 - pi_p;
        pi_m * (self.mu[i] + self.f_tilde[i]) + pi_p * (self.mu[i] - self.f_tilde[i])
    }

    /// All per-row oracle g values.
    pub fn oracle_g(&self) -> Array1<f64> {
        Array1::from_iter((0..self.n()).map(|i| self.oracle_g_row(i)))
    }

    /// Observed min/max of the non-randomized propensity, useful as a
    /// positivity log line.
    pub fn propensity_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &p in self.pi_plus.iter() {
            lo = lo.min(p);
            hi = hi.max(p);
        }
        (lo, hi)
    }
}

/// Generate a dataset of `n` units under the given setting, together with its
/// oracle. Reproducible: the same seed yields the same data, and smaller `n`
/// yields a prefix of larger `n`.
pub fn generate(
    setting: Setting,
    n: usize,
    randomized: bool,
    seed: u64,
) -> Result<(Dataset, SimOracle)> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b0 = setting.b0();
    let mut latent = Array2::zeros((n, LATENT_DIM));
    let mut x = Array2::zeros((n, COVARIATE_DIM));
    let mut a = Array1::zeros(n);
    let mut y = Array1::zeros(n);
    let mut mu = Array1::zeros(n);
    let mut f_tilde = Array1::zeros(n);
    let mut pi_plus = Array1::zeros(n);
    for i in 0..n {
        let mut z = Array1::zeros(LATENT_DIM);
        for zj in z.iter_mut() {
            *zj = rng.random_range(-2.0..2.0);
        }
        let u_a: f64 = rng.random();
        let noise: f64 = StandardNormal.sample(&mut rng);

        let xi = setting.covariates(z.view());
        let v = b0.t().dot(&xi);
        let fi = setting.f_tilde_v(v.view());
        let mi = setting.mu(z.view());
        let pi = if randomized {
            0.5
        } else {
            setting.propensity_plus(z.view())
        };
        let ai = if u_a < pi { 1.0 } else { -1.0 };
        y[i] = mi + ai * fi + noise;
        a[i] = ai;
        mu[i] = mi;
        f_tilde[i] = fi;
        pi_plus[i] = pi;
        x.row_mut(i).assign(&xi);
        latent.row_mut(i).assign(&z);
    }
    let dataset = Dataset::new(x, a, y, Some(seed))?;
    let oracle = SimOracle {
        setting,
        randomized,
        b0,
        latent,
        mu,
        f_tilde,
        pi_plus,
    };
    Ok((dataset, oracle))
}

/// Oracle subset matching `Dataset::subset`.
pub fn oracle_subset(oracle: &SimOracle, idx: &[usize]) -> SimOracle {
    SimOracle {
        setting: oracle.setting,
        randomized: oracle.randomized,
        b0: oracle.b0.clone(),
        latent: oracle.latent.select(Axis(0), idx),
        mu: Array1::from_iter(idx.iter().map(|&i| oracle.mu[i])),
        f_tilde: Array1::from_iter(idx.iter().map(|&i| oracle.f_tilde[i])),
        pi_plus: Array1::from_iter(idx.iter().map(|&i| oracle.pi_plus[i])),
    }
}
