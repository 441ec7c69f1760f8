//! IO, configuration, parallel orchestration and the `patchwork` CLI around
//! [`patchwork_core`].

pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use pipeline::{run_pipeline, RunReport};
