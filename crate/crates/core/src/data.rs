//! Core domain types: locations, response families and validated datasets.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::Matrix;
use crate::math;
use crate::{Error, Result};

/// A point in the planar spatial domain.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    #[inline]
    pub fn dist2(&self, other: &Location) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    #[inline]
    pub fn dist(&self, other: &Location) -> f64 {
        math::sqrt(self.dist2(other))
    }
}

/// Response family. The link is always the canonical one: log for counts,
/// logit for binary responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Family {
    Poisson,
    Bernoulli,
}

impl Family {
    /// Inverse link `g^{-1}(eta)`.
    #[inline]
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            Family::Poisson => math::exp(eta),
            Family::Bernoulli => math::logistic(eta),
        }
    }

    /// Link `g(mu)`.
    #[inline]
    pub fn link(self, mu: f64) -> f64 {
        match self {
            Family::Poisson => math::ln(mu),
            Family::Bernoulli => math::logit(mu),
        }
    }

    /// Variance function, which for canonical links is also `dmu/deta`.
    #[inline]
    pub fn variance(self, mu: f64) -> f64 {
        match self {
            Family::Poisson => mu,
            Family::Bernoulli => mu * (1.0 - mu),
        }
    }

    /// Log-likelihood of one observation, including normalizing constants.
    #[inline]
    pub fn log_likelihood(self, z: f64, eta: f64) -> f64 {
        match self {
            Family::Poisson => z * eta - math::exp(eta) - math::ln_gamma(z + 1.0),
            Family::Bernoulli => z * eta - math::softplus(eta),
        }
    }

    /// Unit deviance `d(z, mu)`; the total deviance is its sum.
    pub fn unit_deviance(self, z: f64, mu: f64) -> f64 {
        match self {
            Family::Poisson => {
                if z > 0.0 {
                    2.0 * (z * math::ln(z / mu) - (z - mu))
                } else {
                    2.0 * mu
                }
            }
            Family::Bernoulli => {
                let p = mu.clamp(1e-300, 1.0 - 1e-16);
                if z > 0.5 {
                    -2.0 * math::ln(p)
                } else {
                    -2.0 * math::ln_1p(-p)
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::Bernoulli => "bernoulli",
        }
    }

    pub fn check_response(self, z: f64) -> core::result::Result<(), &'static str> {
        if !z.is_finite() {
            return Err("response is not finite");
        }
        if math::floor(z) != z {
            return Err("response is not an integer");
        }
        match self {
            Family::Poisson if z < 0.0 => Err("negative count for poisson response"),
            Family::Bernoulli if z != 0.0 && z != 1.0 => Err("bernoulli response must be 0 or 1"),
            _ => Ok(()),
        }
    }
}

impl core::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poisson" | "count" => Ok(Family::Poisson),
            "bernoulli" | "binary" | "binomial" => Ok(Family::Bernoulli),
            other => Err(Error::Argument(format!("unknown family `{other}`"))),
        }
    }
}

/// Observed spatial data: locations, integer responses and covariates.
///
/// Construction validates every row, so a value of this type always
/// satisfies the family's support and has finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDataset {
    locations: Vec<Location>,
    responses: Vec<f64>,
    covariates: Matrix,
    family: Family,
}

impl SpatialDataset {
    pub fn new(locations: Vec<Location>, responses: Vec<f64>, covariates: Matrix, family: Family) -> Result<Self> {
        let n = locations.len();
        if responses.len() != n || covariates.nrows() != n {
            return Err(Error::Dimension(format!(
                "{} locations, {} responses, {} covariate rows",
                n,
                responses.len(),
                covariates.nrows()
            )));
        }
        if covariates.ncols() == 0 {
            return Err(Error::Argument("at least one covariate column is required".to_string()));
        }
        for (row, (loc, &z)) in locations.iter().zip(&responses).enumerate() {
            if !loc.is_finite() {
                return Err(Error::Validation { row, reason: "non-finite coordinate".to_string() });
            }
            family
                .check_response(z)
                .map_err(|reason| Error::Validation { row, reason: reason.to_string() })?;
            for j in 0..covariates.ncols() {
                if !covariates.get(row, j).is_finite() {
                    return Err(Error::Validation { row, reason: format!("non-finite covariate in column {j}") });
                }
            }
        }
        Ok(Self { locations, responses, covariates, family })
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn covariates(&self) -> &Matrix {
        &self.covariates
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    /// Rows at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> SpatialDataset {
        SpatialDataset {
            locations: idx.iter().map(|&i| self.locations[i]).collect(),
            responses: idx.iter().map(|&i| self.responses[i]).collect(),
            covariates: self.covariates.select_rows(idx),
            family: self.family,
        }
    }
}

/// Linear predictor values, one per location.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    pub eta: Vec<f64>,
}

impl LinearPredictor {
    pub fn new(eta: Vec<f64>) -> Result<Self> {
        if let Some(row) = eta.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation { row, reason: "non-finite linear predictor".to_string() });
        }
        Ok(Self { eta })
    }
}

/// Index sets of a train/validation split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HoldoutIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Uniform random disjoint split: `ceil(N (1 - fraction))` training rows and
/// the remainder for validation. Indices in each part are ascending.
pub fn holdout_indices(n: usize, fraction: f64, seed: u64) -> Result<HoldoutIndices> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!("holdout fraction must lie in (0, 1), got {fraction}")));
    }
    if (n as f64) * fraction < 1.0 {
        return Err(Error::Argument(format!("holdout fraction {fraction} leaves no validation rows for N = {n}")));
    }
    // Guard the ceiling against representation error in (1 - fraction).
    let n_train = (math::ceil(n as f64 * (1.0 - fraction) - 1e-9) as usize).min(n);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = perm[..n_train].to_vec();
    let mut validation = perm[n_train..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    Ok(HoldoutIndices { train, validation })
}

/// Split a dataset into training and validation parts.
pub fn split_holdout(data: &SpatialDataset, fraction: f64, seed: u64) -> Result<(SpatialDataset, SpatialDataset)> {
    let idx = holdout_indices(data.len(), fraction, seed)?;
    Ok((data.subset(&idx.train), data.subset(&idx.validation)))
}
