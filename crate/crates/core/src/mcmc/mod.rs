//! Bayesian fitting of one partition's basis-function GLMM by adaptive
//! block random-walk Metropolis.

mod posterior;
mod sampler;
mod summary;

pub use posterior::{laplace_covariance, log_posterior, log_sigma2_prior, ChainState, LocalModel, LogDensity, Priors};
pub use sampler::{
    adapt_proposal, run_chain, run_rwm, rwm_block_step, ChainInit, PosteriorSamples, RwmOutput, SamplerOptions,
    MIN_RELIABLE_ITERS,
};
pub use summary::{batch_means_se, posterior_summary, summarize, ParamSummary, PosteriorSummary};
