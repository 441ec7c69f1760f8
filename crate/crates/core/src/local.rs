//! Steps 2 and 3 for a single partition: knot selection, then MCMC on the
//! selected basis.

use alloc::vec::Vec;

use crate::basis::{select_basis, BasisSet, LassoOptions, LassoSelection};
use crate::data::{Family, Location};
use crate::linalg::Matrix;
use crate::mcmc::{run_chain, ChainInit, LocalModel, PosteriorSamples, Priors, SamplerOptions};
use crate::smoothing::PartitionFit;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFitOptions {
    pub m_target: usize,
    pub lasso: LassoOptions,
    pub sampler: SamplerOptions,
    pub priors: Priors,
}

impl Default for LocalFitOptions {
    fn default() -> Self {
        Self { m_target: 100, lasso: LassoOptions::default(), sampler: SamplerOptions::default(), priors: Priors::default() }
    }
}

/// Inputs of one partition's fit.
#[derive(Debug, Clone, Copy)]
pub struct PartitionData<'a> {
    pub locations: &'a [Location],
    pub x: &'a Matrix,
    pub z: &'a [f64],
    pub family: Family,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    pub basis: BasisSet,
    pub selection: LassoSelection,
    pub samples: PosteriorSamples,
}

impl LocalFit {
    /// Number of selected basis functions.
    pub fn m(&self) -> usize {
        self.basis.selected.len()
    }

    /// Posterior means (and optionally post-burn-in draws) for prediction.
    pub fn partition_fit(&self, locations: &[Location], keep_draws: bool) -> PartitionFit {
        let means = self.samples.posterior_means();
        let (p, m) = (self.samples.p, self.samples.m);
        let draws = keep_draws.then(|| {
            let s = self.samples.draws.nrows();
            let rows: Vec<usize> = (self.samples.burn_in..s).collect();
            let cols: Vec<usize> = (0..p + m).collect();
            self.samples.draws.select_rows(&rows).select_cols(&cols)
        });
        PartitionFit {
            locations: locations.to_vec(),
            knots: self.basis.selected_knots(),
            beta: means[..p].to_vec(),
            delta: means[p..p + m].to_vec(),
            draws,
        }
    }
}

/// Step 2: candidate knots and lasso selection.
pub fn select_partition_basis(data: &PartitionData<'_>, opts: &LocalFitOptions) -> Result<(BasisSet, LassoSelection)> {
    select_basis(data.locations, data.x, data.z, data.family, opts.m_target, &opts.lasso)
}

/// Step 3: sample the hierarchical model on the raw selected columns,
/// starting from the lasso fit.
pub fn sample_partition(
    data: &PartitionData<'_>,
    basis: &BasisSet,
    selection: &LassoSelection,
    opts: &LocalFitOptions,
) -> Result<PosteriorSamples> {
    let phi = basis.selected_design();
    let model = LocalModel::new(data.z.to_vec(), data.x, &phi, data.family, opts.priors)?;
    let init = ChainInit {
        beta: selection.fit.beta.clone(),
        delta: basis.selected.iter().map(|&j| selection.fit.delta[j]).collect(),
    };
    run_chain(&model, &init, &opts.sampler)
}

pub fn fit_partition(data: &PartitionData<'_>, opts: &LocalFitOptions) -> Result<LocalFit> {
    let (basis, selection) = select_partition_basis(data, opts)?;
    let samples = sample_partition(data, &basis, &selection, opts)?;
    Ok(LocalFit { basis, selection, samples })
}
