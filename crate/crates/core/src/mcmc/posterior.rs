use alloc::format;
use alloc::vec::Vec;

use crate::data::Family;
use crate::linalg::Matrix;
use crate::math;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// An unnormalized log density over `R^dim`.
pub trait LogDensity {
    fn dim(&self) -> usize;
    /// May return `-inf`; NaN is treated as `-inf` by the sampler.
    fn log_density(&self, theta: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Priors {
    /// Prior variance of each fixed effect (mean zero).
    pub beta_var: f64,
    pub sigma2_shape: f64,
    pub sigma2_scale: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self { beta_var: 100.0, sigma2_shape: 0.5, sigma2_scale: 2000.0 }
    }
}

/// Inverse-gamma log density of `sigma2 = exp(log_sigma2)` plus the
/// log-Jacobian of the log transform.
pub fn log_sigma2_prior(log_sigma2: f64, shape: f64, scale: f64) -> f64 {
    shape * math::ln(scale) - math::ln_gamma(shape) - shape * log_sigma2 - scale * math::exp(-log_sigma2)
}

/// One partition's hierarchical model:
/// `z | eta ~ family`, `eta = X beta + Phi delta`,
/// `delta | sigma2 ~ N(0, sigma2 I)`, `beta ~ N(0, v I)`, `sigma2 ~ IG(a, b)`.
///
/// Parameters are packed as `theta = [beta, delta, log sigma2]`.
#[derive(Debug, Clone)]
pub struct LocalModel {
    z: Vec<f64>,
    design: Matrix,
    p: usize,
    family: Family,
    priors: Priors,
    /// `sum ln(z!)` for Poisson responses.
    log_factorials: f64,
}

impl LocalModel {
    pub fn new(z: Vec<f64>, x: &Matrix, phi: &Matrix, family: Family, priors: Priors) -> Result<Self> {
        let n = z.len();
        if x.nrows() != n || phi.nrows() != n {
            return Err(Error::Dimension(format!(
                "{n} responses, {} covariate rows, {} basis rows",
                x.nrows(),
                phi.nrows()
            )));
        }
        if !x.is_finite() || !phi.is_finite() {
            return Err(Error::Argument("local model design must be finite".into()));
        }
        for (i, &zi) in z.iter().enumerate() {
            family.check_response(zi).map_err(|reason| Error::Validation { row: i, reason: reason.into() })?;
        }
        if !(priors.beta_var > 0.0 && priors.sigma2_shape > 0.0 && priors.sigma2_scale > 0.0) {
            return Err(Error::Argument("prior parameters must be positive".into()));
        }
        let log_factorials = match family {
            Family::Poisson => z.iter().map(|&zi| math::ln_gamma(zi + 1.0)).sum(),
            Family::Bernoulli => 0.0,
        };
        Ok(Self { z, design: x.hcat(phi), p: x.ncols(), family, priors, log_factorials })
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn m(&self) -> usize {
        self.design.ncols() - self.p
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn priors(&self) -> &Priors {
        &self.priors
    }

    pub fn responses(&self) -> &[f64] {
        &self.z
    }

    /// `[X, Phi]`.
    pub fn design(&self) -> &Matrix {
        &self.design
    }

    /// `X beta + Phi delta` for the first `p + m` entries of `theta`.
    pub fn linear_predictor(&self, theta: &[f64]) -> Vec<f64> {
        let k = self.design.ncols();
        self.design.mul_vec(&theta[..k])
    }

    /// Family log-likelihood at `eta`, with normalizing constants.
    pub fn log_likelihood_at(&self, eta: &[f64]) -> f64 {
        let mut ll = 0.0;
        match self.family {
            Family::Poisson => {
                for (&z, &e) in self.z.iter().zip(eta) {
                    ll += z * e - math::exp(e);
                }
                ll -= self.log_factorials;
            }
            Family::Bernoulli => {
                for (&z, &e) in self.z.iter().zip(eta) {
                    ll += z * e - math::softplus(e);
                }
            }
        }
        if ll.is_nan() {
            f64::NEG_INFINITY
        } else {
            ll
        }
    }

    /// Prior terms only: normal on beta, normal on delta given sigma2, and
    /// the inverse-gamma on sigma2 with its log-Jacobian.
    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        let (p, m) = (self.p, self.m());
        let v = self.priors.beta_var;
        let beta_term: f64 = theta[..p].iter().map(|b| -0.5 * b * b / v).sum::<f64>() - 0.5 * p as f64 * (LN_2PI + math::ln(v));
        let ls = theta[p + m];
        let s2 = math::exp(ls);
        let delta_term: f64 =
            theta[p..p + m].iter().map(|d| -0.5 * d * d / s2).sum::<f64>() - 0.5 * m as f64 * (LN_2PI + ls);
        beta_term + delta_term + log_sigma2_prior(ls, self.priors.sigma2_shape, self.priors.sigma2_scale)
    }
}

impl LogDensity for LocalModel {
    fn dim(&self) -> usize {
        self.design.ncols() + 1
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        log_posterior(theta, self)
    }
}

/// Unnormalized log posterior of `theta = [beta, delta, log sigma2]`.
/// Non-finite parameters or linear predictors give `-inf`.
pub fn log_posterior(theta: &[f64], model: &LocalModel) -> f64 {
    if theta.len() != model.dim() || theta.iter().any(|t| !t.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let eta = model.linear_predictor(theta);
    if eta.iter().any(|e| !e.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let lp = model.log_likelihood_at(&eta) + model.log_prior(theta);
    if lp.is_nan() {
        f64::NEG_INFINITY
    } else {
        lp
    }
}

/// Current point of a chain with its cached log posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
    pub log_sigma2: f64,
    pub log_post: f64,
}

impl ChainState {
    pub fn new(model: &LocalModel, beta: Vec<f64>, delta: Vec<f64>, log_sigma2: f64) -> Result<Self> {
        if beta.len() != model.p() || delta.len() != model.m() {
            return Err(Error::Dimension(format!(
                "state has {} fixed and {} basis coefficients, model expects {} and {}",
                beta.len(),
                delta.len(),
                model.p(),
                model.m()
            )));
        }
        let mut state = Self { beta, delta, log_sigma2, log_post: 0.0 };
        state.log_post = log_posterior(&state.theta(), model);
        Ok(state)
    }

    pub fn theta(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.beta.len() + self.delta.len() + 1);
        t.extend_from_slice(&self.beta);
        t.extend_from_slice(&self.delta);
        t.push(self.log_sigma2);
        t
    }

    pub fn from_theta(theta: &[f64], p: usize, log_post: f64) -> Self {
        let k = theta.len() - 1;
        Self { beta: theta[..p].to_vec(), delta: theta[p..k].to_vec(), log_sigma2: theta[k], log_post }
    }
}

/// Block-diagonal Laplace approximation to the posterior covariance at
/// `theta`: the inverse of `[X Phi]^T W [X Phi]` plus prior precisions for
/// `(beta, delta)`, and `1 / (a + m/2)` for `log sigma2`.
pub fn laplace_covariance(model: &LocalModel, theta: &[f64]) -> Matrix {
    let k = model.design().ncols();
    let (p, m) = (model.p(), model.m());
    let eta = model.linear_predictor(theta);
    let w: Vec<f64> = eta.iter().map(|&e| model.family().variance(model.family().mean(e)).max(1e-10)).collect();
    let mut h = model.design().weighted_gram(Some(&w));
    let s2 = math::exp(theta[k]);
    for j in 0..k {
        let prior_prec = if j < p { 1.0 / model.priors().beta_var } else { 1.0 / s2 };
        h.set(j, j, h.get(j, j) + prior_prec);
    }
    let mut cov = Matrix::zeros(k + 1, k + 1);
    let inv = crate::linalg::cholesky_jittered(&h).map(|l| crate::linalg::cholesky_inverse(&l));
    for a in 0..k {
        for b in 0..k {
            let v = match &inv {
                Some(inv) => inv.get(a, b),
                None => {
                    if a == b {
                        1.0 / h.get(a, a).max(1e-10)
                    } else {
                        0.0
                    }
                }
            };
            cov.set(a, b, v);
        }
    }
    cov.set(k, k, 1.0 / (model.priors().sigma2_shape + 0.5 * m as f64));
    cov
}
