//! Partitioned basis-function spatial generalized linear mixed models.
//!
//! The crate carries the numerical core of a divide-and-conquer approach to
//! very large nonstationary count and binary spatial datasets:
//!
//! 1. fit a non-spatial GLM and coarsen its residuals to a lattice,
//!    then agglomerate Voronoi-adjacent lattice cells into `K` subregions
//!    ([`clustering`]);
//! 2. place thin plate spline knots over each subregion and keep the ones a
//!    lasso-penalized GLM selects ([`basis`]);
//! 3. sample each local hierarchical model with an adaptive block random-walk
//!    Metropolis chain ([`mcmc`]);
//! 4. blend the local processes with truncated distance weights into a
//!    global predictive surface ([`smoothing`]).
//!
//! [`simulate`] generates kernel-convolution nonstationary fields used as
//! ground truth in tests.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the CLI and the
//! parallel scheduler live in the companion `patchwork` crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![warn(rust_2018_idioms)]

extern crate alloc;

mod error;
pub mod math;
pub mod linalg;

pub mod data;
pub mod glm;
pub mod clustering;
pub mod basis;
pub mod mcmc;
pub mod kdtree;
pub mod smoothing;
pub mod simulate;
pub mod local;
pub mod rng;

pub use data::{Family, Location, LinearPredictor, SpatialDataset};
pub use error::{Error, Result};
pub use linalg::Matrix;
