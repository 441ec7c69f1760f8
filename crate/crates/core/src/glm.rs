//! Non-spatial GLM fitted by iteratively reweighted least squares.
//!
//! Its residuals drive the spatial clustering, and the same solver provides
//! the unpenalized starting point of each lasso path.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Family, SpatialDataset};
use crate::linalg::{self, Matrix};
use crate::math;
use crate::{Error, Result};

/// Which residual feeds the clustering dissimilarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ResidualKind {
    #[default]
    Deviance,
    Pearson,
    Response,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlmOptions {
    /// Relative deviance change that ends the iteration.
    pub tol: f64,
    pub max_iter: usize,
    pub residuals: ResidualKind,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 50, residuals: ResidualKind::Deviance }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub beta_hat: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub deviance: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub fn fit_glm(data: &SpatialDataset) -> Result<GlmFit> {
    fit_glm_with(data, &GlmOptions::default())
}

pub fn fit_glm_with(data: &SpatialDataset, opts: &GlmOptions) -> Result<GlmFit> {
    fit_glm_design(data.covariates(), data.responses(), data.family(), opts)
}

/// Verify that `x` has full column rank, judged on its correlation-scaled
/// Gram matrix.
pub fn check_full_rank(x: &Matrix) -> Result<()> {
    let g = x.weighted_gram(None);
    let p = g.nrows();
    let mut scaled = g.clone();
    for j in 0..p {
        if !(g.get(j, j) > 0.0) {
            return Err(Error::Conditioning(format!("covariate column {j} is identically zero")));
        }
    }
    for a in 0..p {
        for b in 0..p {
            scaled.set(a, b, g.get(a, b) / math::sqrt(g.get(a, a) * g.get(b, b)));
        }
    }
    let l = linalg::cholesky(&scaled)
        .ok_or_else(|| Error::Conditioning("covariate matrix is not of full column rank".into()))?;
    let min_pivot = (0..p).map(|j| l.get(j, j)).fold(f64::INFINITY, f64::min);
    if min_pivot * min_pivot < 1e-10 {
        return Err(Error::Conditioning(format!(
            "covariate matrix is numerically rank deficient (min scaled pivot^2 = {:.3e})",
            min_pivot * min_pivot
        )));
    }
    Ok(())
}

fn total_deviance(family: Family, z: &[f64], mu: &[f64]) -> f64 {
    z.iter().zip(mu).map(|(&zi, &mi)| family.unit_deviance(zi, mi)).sum()
}

fn clamp_mu(family: Family, mu: f64) -> f64 {
    match family {
        Family::Poisson => mu.max(1e-300),
        Family::Bernoulli => mu.clamp(1e-15, 1.0 - 1e-15),
    }
}

/// IRLS on an explicit design matrix.
pub fn fit_glm_design(x: &Matrix, z: &[f64], family: Family, opts: &GlmOptions) -> Result<GlmFit> {
    let n = x.nrows();
    let p = x.ncols();
    if z.len() != n {
        return Err(Error::Dimension(format!("{n} design rows but {} responses", z.len())));
    }
    if n < p {
        return Err(Error::Conditioning(format!("{n} observations for {p} coefficients")));
    }
    check_full_rank(x)?;

    // Standard starting values: a slightly shrunk saturated fit.
    let mut mu: Vec<f64> = z
        .iter()
        .map(|&zi| match family {
            Family::Poisson => zi + 0.1,
            Family::Bernoulli => (zi + 0.5) / 2.0,
        })
        .collect();
    let mut eta: Vec<f64> = mu.iter().map(|&m| family.link(m)).collect();
    let mut beta = vec![0.0; p];
    let mut deviance = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    let mut w = vec![0.0; n];
    let mut wz = vec![0.0; n];

    while iterations < opts.max_iter {
        iterations += 1;
        for i in 0..n {
            let v = family.variance(mu[i]).max(1e-300);
            w[i] = v;
            wz[i] = v * (eta[i] + (z[i] - mu[i]) / v);
        }
        let gram = x.weighted_gram(Some(&w));
        let rhs = x.tr_mul_vec(&wz);
        let l = linalg::cholesky_jittered(&gram)
            .ok_or_else(|| Error::Conditioning("weighted normal equations are singular".into()))?;
        let mut proposal = linalg::cholesky_solve(&l, &rhs);

        // Step halving keeps the deviance from increasing.
        let mut new_dev;
        let mut halvings = 0;
        loop {
            let new_eta = x.mul_vec(&proposal);
            let new_mu: Vec<f64> = new_eta.iter().map(|&e| clamp_mu(family, family.mean(e))).collect();
            new_dev = total_deviance(family, z, &new_mu);
            let ok = new_dev.is_finite() && (!deviance.is_finite() || new_dev <= deviance * (1.0 + 1e-12) + 1e-12);
            if ok || halvings >= 30 {
                eta = new_eta;
                mu = new_mu;
                break;
            }
            halvings += 1;
            for (pj, bj) in proposal.iter_mut().zip(&beta) {
                *pj = 0.5 * (*pj + bj);
            }
        }
        let change = (new_dev - deviance).abs() / (new_dev.abs() + 0.1);
        beta = proposal;
        let first = !deviance.is_finite();
        deviance = new_dev;
        if !first && change < opts.tol {
            converged = true;
            break;
        }
    }

    // Diverging linear predictors signal (quasi-)separation.
    if family == Family::Bernoulli && eta.iter().any(|e| e.abs() > 30.0) {
        converged = false;
    }
    if beta.iter().any(|b| !b.is_finite()) {
        converged = false;
    }

    let residuals = residuals(family, z, &mu, opts.residuals);
    Ok(GlmFit { beta_hat: beta, residuals, fitted: mu, deviance, converged, iterations })
}

/// Residuals of the requested kind at fitted means `mu`.
pub fn residuals(family: Family, z: &[f64], mu: &[f64], kind: ResidualKind) -> Vec<f64> {
    z.iter()
        .zip(mu)
        .map(|(&zi, &mi)| match kind {
            ResidualKind::Response => zi - mi,
            ResidualKind::Pearson => (zi - mi) / math::sqrt(family.variance(mi).max(1e-300)),
            ResidualKind::Deviance => {
                let d = family.unit_deviance(zi, mi).max(0.0);
                let s = math::sqrt(d);
                if zi >= mi {
                    s
                } else {
                    -s
                }
            }
        })
        .collect()
}

/// Score vector `X^T (z - mu)` of the log-likelihood.
pub fn score(x: &Matrix, z: &[f64], mu: &[f64]) -> Vec<f64> {
    let r: Vec<f64> = z.iter().zip(mu).map(|(a, b)| a - b).collect();
    x.tr_mul_vec(&r)
}
