use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::posterior::{laplace_covariance, log_posterior, LocalModel, LogDensity};
use crate::linalg::{self, Matrix};
use crate::math;
use crate::{Error, Result};

/// Iterations below which summaries are flagged as unreliable.
pub const MIN_RELIABLE_ITERS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SamplerOptions {
    pub iters: usize,
    /// Defaults to `iters / 2`.
    pub burn_in: Option<usize>,
    pub batch_size: usize,
    pub target_acceptance: f64,
    /// Re-estimate the proposal shape every this many batches of burn-in.
    pub shape_every: usize,
    pub seed: u64,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self { iters: 20_000, burn_in: None, batch_size: 50, target_acceptance: 0.234, shape_every: 10, seed: 0 }
    }
}

impl SamplerOptions {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.iters / 2)
    }
}

/// Log-adaptive scale update after batch `batch_index` (1-based):
/// `log(scale) += sign(acc - 0.234) * min(0.01, batch_index^(-1/2))`.
pub fn adapt_proposal(batch_acceptance: f64, batch_index: usize, scale: f64) -> f64 {
    adapt_toward(batch_acceptance, 0.234, batch_index, scale)
}

fn adapt_toward(batch_acceptance: f64, target: f64, batch_index: usize, scale: f64) -> f64 {
    let step = (1.0 / math::sqrt(batch_index.max(1) as f64)).min(0.01);
    let sign = if batch_acceptance > target {
        1.0
    } else if batch_acceptance < target {
        -1.0
    } else {
        0.0
    };
    scale * math::exp(sign * step)
}

/// One block random-walk Metropolis step on `theta`, proposing
/// `theta + scale * L z` with `z ~ N(0, I)`. Returns whether the proposal
/// was accepted; on rejection `theta` and `log_post` are untouched.
pub fn rwm_block_step<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    theta: &mut [f64],
    log_post: &mut f64,
    scale: f64,
    chol: &Matrix,
    rng: &mut R,
) -> bool {
    let d = theta.len();
    let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let mut step = vec![0.0; d];
    linalg::lower_mul_vec(chol, &z, &mut step);
    let proposal: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + scale * s).collect();
    let mut lp = target.log_density(&proposal);
    if lp.is_nan() {
        lp = f64::NEG_INFINITY;
    }
    let u: f64 = rng.random();
    // ln(0) = -inf, so a zero draw still accepts a zero log-ratio.
    if math::ln(u) < lp - *log_post {
        theta.copy_from_slice(&proposal);
        *log_post = lp;
        true
    } else {
        false
    }
}

/// Raw output of an adaptive random-walk run over a generic target.
#[derive(Debug, Clone, PartialEq)]
pub struct RwmOutput {
    /// `iters x dim`, one row per iteration (burn-in included).
    pub draws: Matrix,
    pub burn_in: usize,
    pub accepted_burn_in: usize,
    pub accepted_after: usize,
    /// Scale in force after each completed burn-in batch.
    pub scale_trace: Vec<f64>,
    pub final_scale: f64,
    /// Proposal shape used for the retained draws.
    pub final_chol: Matrix,
}

impl RwmOutput {
    /// Acceptance over post-burn-in iterations (over all iterations when
    /// there is no post-burn-in phase).
    pub fn acceptance_rate(&self) -> f64 {
        let after = self.draws.nrows() - self.burn_in;
        if after > 0 {
            self.accepted_after as f64 / after as f64
        } else if self.burn_in > 0 {
            self.accepted_burn_in as f64 / self.burn_in as f64
        } else {
            0.0
        }
    }
}

fn proposal_shape(cov: &Matrix) -> Option<Matrix> {
    let d = cov.nrows();
    let factor = 2.38 * 2.38 / d as f64;
    let mut scaled = Matrix::from_fn(d, d, |i, j| factor * cov.get(i, j));
    if !scaled.is_finite() {
        return None;
    }
    let top = (0..d).map(|i| scaled.get(i, i)).fold(0.0, f64::max);
    for i in 0..d {
        scaled.set(i, i, scaled.get(i, i) + 1e-10 * top);
    }
    linalg::cholesky(&scaled)
}

/// Sample covariance of rows `start..end` of `draws`.
fn window_covariance(draws: &Matrix, start: usize, end: usize) -> Matrix {
    let d = draws.ncols();
    let n = (end - start) as f64;
    let means: Vec<f64> = (0..d).map(|j| draws.col(j)[start..end].iter().sum::<f64>() / n).collect();
    let mut cov = Matrix::zeros(d, d);
    for a in 0..d {
        let ca = &draws.col(a)[start..end];
        for b in a..d {
            let cb = &draws.col(b)[start..end];
            let s: f64 = ca.iter().zip(cb).map(|(x, y)| (x - means[a]) * (y - means[b])).sum();
            let v = s / (n - 1.0);
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    cov
}

/// Adaptive block random-walk Metropolis from `init` with initial proposal
/// covariance `init_cov`. During burn-in the scale follows
/// [`adapt_proposal`] after every batch and the shape is re-estimated from
/// the second half of the burn-in draws so far; both are frozen afterwards.
pub fn run_rwm<T: LogDensity + ?Sized>(
    target: &T,
    init: &[f64],
    init_cov: &Matrix,
    opts: &SamplerOptions,
) -> Result<RwmOutput> {
    let d = target.dim();
    let iters = opts.iters;
    let burn_in = opts.burn_in();
    if init.len() != d || init_cov.nrows() != d || init_cov.ncols() != d {
        return Err(Error::Dimension(format!("target has dimension {d}, initial state {}", init.len())));
    }
    if iters == 0 || burn_in >= iters {
        return Err(Error::Argument(format!("need 0 <= burn_in < iters, got burn_in {burn_in}, iters {iters}")));
    }
    if opts.batch_size == 0 {
        return Err(Error::Argument("batch size must be positive".into()));
    }
    let mut chol = proposal_shape(init_cov)
        .ok_or_else(|| Error::Conditioning("initial proposal covariance is not positive definite".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut theta = init.to_vec();
    let mut log_post = target.log_density(&theta);
    if !log_post.is_finite() {
        return Err(Error::Argument("initial state has zero posterior density".into()));
    }

    let mut draws = Matrix::zeros(iters, d);
    let mut scale = 1.0;
    let mut scale_trace = Vec::new();
    let (mut accepted_burn_in, mut accepted_after) = (0, 0);
    let mut batch_accepted = 0;
    let mut batch_index = 0;
    for t in 0..iters {
        let accepted = rwm_block_step(target, &mut theta, &mut log_post, scale, &chol, &mut rng);
        for (j, &v) in theta.iter().enumerate() {
            draws.set(t, j, v);
        }
        if t < burn_in {
            accepted_burn_in += accepted as usize;
            batch_accepted += accepted as usize;
            if (t + 1) % opts.batch_size == 0 {
                batch_index += 1;
                let rate = batch_accepted as f64 / opts.batch_size as f64;
                scale = adapt_toward(rate, opts.target_acceptance, batch_index, scale);
                scale_trace.push(scale);
                batch_accepted = 0;
                if opts.shape_every > 0 && batch_index % opts.shape_every == 0 {
                    let start = (t + 1) / 2;
                    if t + 1 - start >= 2 * d + 2 {
                        if let Some(l) = proposal_shape(&window_covariance(&draws, start, t + 1)) {
                            chol = l;
                        }
                    }
                }
            }
        } else {
            accepted_after += accepted as usize;
        }
    }
    Ok(RwmOutput {
        draws,
        burn_in,
        accepted_burn_in,
        accepted_after,
        scale_trace,
        final_scale: scale,
        final_chol: chol,
    })
}

/// Starting values for a local chain, usually the lasso fit restricted to
/// its active set.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainInit {
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
}

/// Posterior draws of one partition's `(beta, delta, sigma2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    /// `S x (p + m + 1)`; the last column is `sigma2` on its natural scale.
    pub draws: Matrix,
    pub p: usize,
    pub m: usize,
    pub burn_in: usize,
    /// Acceptance over the retained (post-burn-in) iterations.
    pub acceptance_rate: f64,
    pub burn_in_acceptance_rate: f64,
    pub proposal_scale_trace: Vec<f64>,
    pub seed: u64,
    pub warning: Option<String>,
}

impl PosteriorSamples {
    pub fn n_draws(&self) -> usize {
        self.draws.nrows()
    }

    /// Column means over post-burn-in draws.
    pub fn posterior_means(&self) -> Vec<f64> {
        let s = self.draws.nrows();
        (0..self.draws.ncols())
            .map(|j| {
                let col = &self.draws.col(j)[self.burn_in..s];
                col.iter().sum::<f64>() / col.len() as f64
            })
            .collect()
    }
}

/// Sample the local model. `beta` and `delta` start at `init`, `sigma2`
/// at `var(delta) + 0.01`, and the initial proposal covariance is a
/// Laplace approximation there.
pub fn run_chain(model: &LocalModel, init: &ChainInit, opts: &SamplerOptions) -> Result<PosteriorSamples> {
    let (p, m) = (model.p(), model.m());
    if init.beta.len() != p || init.delta.len() != m {
        return Err(Error::Dimension(format!(
            "initial values have {} + {} coefficients, model expects {p} + {m}",
            init.beta.len(),
            init.delta.len()
        )));
    }
    let sigma2 = math::variance(&init.delta) + 0.01;
    let mut theta = init.beta.clone();
    theta.extend_from_slice(&init.delta);
    theta.push(math::ln(sigma2));
    if !log_posterior(&theta, model).is_finite() {
        return Err(Error::Conditioning("posterior is zero at the initial values".into()));
    }
    let cov = laplace_covariance(model, &theta);
    let out = run_rwm(model, &theta, &cov, opts)?;
    let mut draws = out.draws.clone();
    let last = p + m;
    draws.col_mut(last).iter_mut().for_each(|v| *v = math::exp(*v));
    let warning = (opts.iters < MIN_RELIABLE_ITERS)
        .then(|| format!("only {} iterations; posterior summaries are unreliable", opts.iters));
    Ok(PosteriorSamples {
        acceptance_rate: out.acceptance_rate(),
        burn_in_acceptance_rate: if out.burn_in > 0 { out.accepted_burn_in as f64 / out.burn_in as f64 } else { 0.0 },
        draws,
        p,
        m,
        burn_in: out.burn_in,
        proposal_scale_trace: out.scale_trace,
        seed: opts.seed,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct StdNormal(usize);

    impl LogDensity for StdNormal {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_density(&self, theta: &[f64]) -> f64 {
            -0.5 * theta.iter().map(|t| t * t).sum::<f64>()
        }
    }

    struct Flat;

    impl LogDensity for Flat {
        fn dim(&self) -> usize {
            2
        }
        fn log_density(&self, theta: &[f64]) -> f64 {
            if theta[0] > 0.0 {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        }
    }

    #[test]
    fn adaptation_arithmetic() {
        assert_eq!(adapt_proposal(0.234, 7, 2.0), 2.0);
        assert!((adapt_proposal(1.0, 1, 1.0) - libm::exp(0.01)).abs() < 1e-15);
        assert!((adapt_proposal(0.0, 1, 1.0) - libm::exp(-0.01)).abs() < 1e-15);
    }

    #[test]
    fn equal_density_always_accepts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chol = Matrix::identity(2);
        for _ in 0..200 {
            let mut theta = [1.0e6, 0.0];
            let mut lp = 0.0;
            assert!(rwm_block_step(&Flat, &mut theta, &mut lp, 1.0, &chol, &mut rng));
        }
    }

    #[test]
    fn impossible_state_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let chol = Matrix::identity(2);
        // Half the proposals land in the zero-density half plane.
        let mut rejected = 0;
        for _ in 0..100 {
            let mut theta = [1e-9, 0.0];
            let mut lp = 0.0;
            let before = theta;
            if !rwm_block_step(&Flat, &mut theta, &mut lp, 1e6, &chol, &mut rng) {
                assert_eq!(theta, before);
                rejected += 1;
            }
        }
        assert!(rejected > 20);
    }

    #[test]
    fn deterministic_for_seed() {
        let opts = SamplerOptions { iters: 2000, seed: 9, ..Default::default() };
        let a = run_rwm(&StdNormal(2), &[0.0, 0.0], &Matrix::identity(2), &opts).unwrap();
        let b = run_rwm(&StdNormal(2), &[0.0, 0.0], &Matrix::identity(2), &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn normal_target_mean_and_acceptance() {
        let opts = SamplerOptions { iters: 100_000, burn_in: Some(10_000), seed: 3, ..Default::default() };
        let out = run_rwm(&StdNormal(1), &[0.0], &Matrix::identity(1), &opts).unwrap();
        let kept = &out.draws.col(0)[out.burn_in..];
        let mean = kept.iter().sum::<f64>() / kept.len() as f64;
        let mcse = super::super::summary::batch_means_se(kept, 100);
        assert!(mean.abs() < 3.0 * mcse, "mean {mean}, mcse {mcse}");
        let acc = out.acceptance_rate();
        assert!((0.15..=0.40).contains(&acc), "acceptance {acc}");
    }

    #[test]
    fn huge_scale_stalls_on_concentrated_target() {
        struct Tight;
        impl LogDensity for Tight {
            fn dim(&self) -> usize {
                1
            }
            fn log_density(&self, t: &[f64]) -> f64 {
                -0.5 * t[0] * t[0] / 1e-12
            }
        }
        let opts = SamplerOptions { iters: 500, burn_in: Some(0), seed: 4, ..Default::default() };
        let out = run_rwm(&Tight, &[0.0], &Matrix::from_rows(&[vec![1e12]]), &opts).unwrap();
        assert_eq!(out.accepted_after, 0);
        assert!(out.draws.col(0).iter().all(|&v| v == 0.0));
    }
}
