//! Nonstationary fields by convolving white noise with spatially varying
//! Gaussian kernels, and count or binary datasets built on them.
//!
//! Nine anisotropic "basis" kernels `K_m` sit on a coarse grid. The kernel
//! at a location `s` is the mixture `K_s(u) = sum_m w_m(s) K_m(u)` with
//! `w_m(s)` proportional to `exp(-|s - b_m| / 2)`, and the field is
//! `W(s) = sum_j K_s(u_j) V_j` over a finer grid of reference points
//! `u_j` carrying independent `N(0, sigma_u^2)` noise `V_j`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::data::{Family, Location, SpatialDataset};
use crate::linalg::Matrix;
use crate::{math, rng};
use crate::{Error, Result};

const INV_2PI: f64 = 0.159_154_943_091_895_34;

/// Largest linear predictor accepted for Poisson draws.
pub const MAX_POISSON_ETA: f64 = 30.0;

/// Symmetric 2x2 matrix `[xx xy; xy yy]`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Cov2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Cov2 {
    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn is_spd(&self) -> bool {
        self.xx > 0.0 && self.det() > 0.0 && self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite()
    }

    /// `v^T A v`.
    pub fn quad(&self, dx: f64, dy: f64) -> f64 {
        self.xx * dx * dx + 2.0 * self.xy * dx * dy + self.yy * dy * dy
    }

    /// `v^T A^{-1} v`.
    pub fn quad_inv(&self, dx: f64, dy: f64) -> f64 {
        (self.yy * dx * dx - 2.0 * self.xy * dx * dy + self.xx * dy * dy) / self.det()
    }
}

/// The nine kernel covariances, listed row by row over the 3x3 grid of
/// basis locations.
pub const SUPPLEMENT_COVARIANCES: [Cov2; 9] = [
    Cov2::new(0.50, 0.30, 0.33),
    Cov2::new(0.50, -0.12, 0.13),
    Cov2::new(0.50, 0.18, 0.20),
    Cov2::new(0.50, 0.54, 0.60),
    Cov2::new(0.50, 0.06, 0.07),
    Cov2::new(0.50, -0.48, 0.53),
    Cov2::new(0.50, 0.42, 0.46),
    Cov2::new(0.50, -0.36, 0.40),
    Cov2::new(0.50, -0.24, 0.26),
];

/// Width of the kernel coordinate system spanned by the unit square in the
/// default layout.
pub const UNIT_SQUARE_DOMAIN_SCALE: f64 = 5.0;

/// Which quadratic form the basis kernels use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum KernelForm {
    /// Bivariate normal density, `exp(-d^T S^{-1} d / 2)`.
    #[default]
    Density,
    /// `exp(-d^T S d / 2)` with the same `|S|^{-1/2}` normalization.
    Printed,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimConfig {
    pub basis_locations: Vec<Location>,
    pub basis_covariances: Vec<Cov2>,
    pub reference_locations: Vec<Location>,
    /// Kernel-coordinate length of one location unit. Kernels, weights and
    /// distances are evaluated after multiplying offsets by this factor.
    pub domain_scale: f64,
    pub noise_sd: f64,
    pub beta: Vec<f64>,
    pub family: Family,
    pub kernel_form: KernelForm,
    pub seed: u64,
}

/// `n x n` grid of cell centres over the unit square.
pub fn grid_locations(n: usize) -> Vec<Location> {
    let h = 1.0 / n as f64;
    (0..n)
        .flat_map(|j| (0..n).map(move |i| Location::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h)))
        .collect()
}

/// `n` uniform locations in the unit square.
pub fn uniform_locations(n: usize, seed: u64) -> Vec<Location> {
    let mut r = rng::stream(seed, 0x10c);
    (0..n).map(|_| Location::new(r.random(), r.random())).collect()
}

impl SimConfig {
    /// Nine basis kernels on a 3x3 grid and 100 reference points on a 10x10
    /// grid over the unit square, `beta = (1, 1)`, `sigma_u = 1`.
    pub fn unit_square(family: Family, seed: u64) -> Self {
        Self {
            basis_locations: grid_locations(3),
            basis_covariances: SUPPLEMENT_COVARIANCES.to_vec(),
            reference_locations: grid_locations(10),
            domain_scale: UNIT_SQUARE_DOMAIN_SCALE,
            noise_sd: 1.0,
            beta: alloc::vec![1.0, 1.0],
            family,
            kernel_form: KernelForm::Density,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.basis_locations.len();
        if m == 0 || m != self.basis_covariances.len() {
            return Err(Error::Config(format!(
                "{m} basis locations but {} covariance matrices",
                self.basis_covariances.len()
            )));
        }
        if m > self.reference_locations.len() {
            return Err(Error::Config(format!(
                "{m} basis locations exceed {} reference locations",
                self.reference_locations.len()
            )));
        }
        if let Some(i) = self.basis_covariances.iter().position(|c| !c.is_spd()) {
            return Err(Error::Config(format!("basis covariance {i} is not symmetric positive definite")));
        }
        if self.basis_locations.iter().chain(&self.reference_locations).any(|l| !l.is_finite()) {
            return Err(Error::Config("kernel locations must be finite".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise sd must be non-negative, got {}", self.noise_sd)));
        }
        if !(self.domain_scale > 0.0 && self.domain_scale.is_finite()) {
            return Err(Error::Config(format!("domain scale must be positive, got {}", self.domain_scale)));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("fixed effects must be finite".into()));
        }
        Ok(())
    }
}

/// Basis kernel `m` at `x`.
pub fn basis_kernel(x: &Location, m: usize, config: &SimConfig) -> f64 {
    let b = config.basis_locations[m];
    let cov = &config.basis_covariances[m];
    let (dx, dy) = ((x.x - b.x) * config.domain_scale, (x.y - b.y) * config.domain_scale);
    let q = match config.kernel_form {
        KernelForm::Density => cov.quad_inv(dx, dy),
        KernelForm::Printed => cov.quad(dx, dy),
    };
    INV_2PI / math::sqrt(cov.det()) * math::exp(-0.5 * q)
}

/// Normalized mixing weights `w_m(s)`.
pub fn reference_weights(s: &Location, config: &SimConfig) -> Vec<f64> {
    let d: Vec<f64> = config.basis_locations.iter().map(|b| s.dist(b) * config.domain_scale).collect();
    let dmin = d.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = d.iter().map(|&di| math::exp(-0.5 * (di - dmin))).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Reference kernel `K_s(u_j)`.
pub fn reference_kernel(s: &Location, j: usize, config: &SimConfig) -> f64 {
    let u = config.reference_locations[j];
    reference_weights(s, config).iter().enumerate().map(|(m, w)| w * basis_kernel(&u, m, config)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedField {
    /// Field value at each target.
    pub w: Vec<f64>,
    /// Reference-point noise.
    pub v: Vec<f64>,
}

/// White noise at the reference points.
pub fn draw_reference_noise(config: &SimConfig) -> Vec<f64> {
    let mut r = rng::stream(config.seed, 0);
    (0..config.reference_locations.len())
        .map(|_| config.noise_sd * r.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Field at `targets` for given reference noise `v`.
pub fn field_from_noise(targets: &[Location], config: &SimConfig, v: &[f64]) -> Result<Vec<f64>> {
    config.validate()?;
    if v.len() != config.reference_locations.len() {
        return Err(Error::Dimension(format!(
            "{} noise values for {} reference locations",
            v.len(),
            config.reference_locations.len()
        )));
    }
    // Sum over reference points first: W(s) = sum_m w_m(s) sum_j K_m(u_j) V_j.
    let a: Vec<f64> = (0..config.basis_locations.len())
        .map(|m| config.reference_locations.iter().zip(v).map(|(u, vj)| basis_kernel(u, m, config) * vj).sum())
        .collect();
    Ok(targets
        .iter()
        .map(|s| reference_weights(s, config).iter().zip(&a).map(|(w, am)| w * am).sum())
        .collect())
}

pub fn simulate_field(targets: &[Location], config: &SimConfig) -> Result<SimulatedField> {
    config.validate()?;
    let v = draw_reference_noise(config);
    let w = field_from_noise(targets, config, &v)?;
    Ok(SimulatedField { w, v })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub dataset: SpatialDataset,
    pub field: SimulatedField,
    /// True linear predictor `X beta + W`.
    pub eta: Vec<f64>,
}

/// Standard-normal covariate columns, one per fixed effect.
pub fn draw_covariates(n: usize, config: &SimConfig) -> Matrix {
    let mut r = rng::stream(config.seed, 1);
    let p = config.beta.len();
    let mut data = Vec::with_capacity(n * p);
    for _ in 0..p {
        data.extend((0..n).map(|_| r.sample::<f64, _>(StandardNormal)));
    }
    Matrix::from_col_major(n, p, data)
}

/// Draw responses at `targets` with `eta = X beta + W`.
pub fn simulate_dataset(targets: &[Location], config: &SimConfig) -> Result<SimulatedDataset> {
    let field = simulate_field(targets, config)?;
    dataset_from_field(targets, config, field)
}

/// Covariates and responses around an already evaluated field, so callers
/// can evaluate `field.w` in parallel chunks.
pub fn dataset_from_field(targets: &[Location], config: &SimConfig, field: SimulatedField) -> Result<SimulatedDataset> {
    if field.w.len() != targets.len() {
        return Err(Error::Dimension(format!("{} field values for {} targets", field.w.len(), targets.len())));
    }
    let n = targets.len();
    let x = draw_covariates(n, config);
    let mut eta = x.mul_vec(&config.beta);
    eta.iter_mut().zip(&field.w).for_each(|(e, w)| *e += w);
    let mut r = rng::stream(config.seed, 2);
    let mut z = Vec::with_capacity(n);
    for (i, &e) in eta.iter().enumerate() {
        let zi = match config.family {
            Family::Poisson => {
                if !(e <= MAX_POISSON_ETA) {
                    return Err(Error::PoissonOverflow { row: i, eta: e });
                }
                let mu = math::exp(e);
                let dist = Poisson::new(mu).map_err(|err| Error::Argument(format!("poisson mean {mu}: {err}")))?;
                dist.sample(&mut r)
            }
            Family::Bernoulli => {
                let u: f64 = r.random();
                (u < math::logistic(e)) as u8 as f64
            }
        };
        z.push(zi);
    }
    let dataset = SpatialDataset::new(targets.to_vec(), z, x, config.family)?;
    Ok(SimulatedDataset { dataset, field, eta })
}
