use alloc::format;
use alloc::vec::Vec;

use super::sampler::PosteriorSamples;
use crate::math;
use crate::{Error, Result};

/// Posterior mean and equal-tailed 95% interval of one parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamSummary {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl ParamSummary {
    /// Summary of a sample; `xs` need not be sorted.
    pub fn of(xs: &[f64]) -> Self {
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            mean: math::mean(xs),
            lo: math::quantile_sorted(&sorted, 0.025),
            hi: math::quantile_sorted(&sorted, 0.975),
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }
}

/// Per-parameter summaries grouped as `beta`, `delta` and `sigma2`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PosteriorSummary {
    pub beta: Vec<ParamSummary>,
    pub delta: Vec<ParamSummary>,
    pub sigma2: ParamSummary,
    pub acceptance_rate: f64,
}

/// Mean and 2.5%/97.5% quantiles of every column over draws after
/// `burn_in`.
pub fn posterior_summary(samples: &PosteriorSamples, burn_in: usize) -> Result<Vec<ParamSummary>> {
    let s = samples.draws.nrows();
    if burn_in >= s {
        return Err(Error::Argument(format!("burn-in {burn_in} leaves no draws out of {s}")));
    }
    Ok((0..samples.draws.ncols()).map(|j| ParamSummary::of(&samples.draws.col(j)[burn_in..])).collect())
}

/// Grouped summary over the chain's own post-burn-in draws.
pub fn summarize(samples: &PosteriorSamples) -> Result<PosteriorSummary> {
    let all = posterior_summary(samples, samples.burn_in)?;
    let (p, m) = (samples.p, samples.m);
    Ok(PosteriorSummary {
        beta: all[..p].to_vec(),
        delta: all[p..p + m].to_vec(),
        sigma2: all[p + m],
        acceptance_rate: samples.acceptance_rate,
    })
}

/// Monte Carlo standard error of the mean by non-overlapping batch means.
pub fn batch_means_se(xs: &[f64], n_batches: usize) -> f64 {
    let b = xs.len() / n_batches.max(1);
    if b == 0 || n_batches < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..n_batches).map(|k| math::mean(&xs[k * b..(k + 1) * b])).collect();
    let var = math::variance(&means) * n_batches as f64 / (n_batches - 1) as f64;
    math::sqrt(var / n_batches as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use alloc::vec;

    fn samples(col: Vec<f64>) -> PosteriorSamples {
        let n = col.len();
        PosteriorSamples {
            draws: Matrix::from_col_major(n, 1, col),
            p: 0,
            m: 0,
            burn_in: 0,
            acceptance_rate: 0.0,
            burn_in_acceptance_rate: 0.0,
            proposal_scale_trace: vec![],
            seed: 0,
            warning: None,
        }
    }

    #[test]
    fn constant_chain() {
        let s = posterior_summary(&samples(vec![2.5; 40]), 10).unwrap();
        assert_eq!(s[0], ParamSummary { mean: 2.5, lo: 2.5, hi: 2.5 });
    }

    #[test]
    fn arithmetic_mean() {
        let s = posterior_summary(&samples((1..=100).map(f64::from).collect()), 0).unwrap();
        assert_eq!(s[0].mean, 50.5);
    }

    #[test]
    fn burn_in_must_leave_draws() {
        assert!(posterior_summary(&samples(vec![1.0; 5]), 5).is_err());
    }
}
