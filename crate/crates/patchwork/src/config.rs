//! Run configuration: one TOML document with dotted sections, overridable
//! key by key from the command line (`--set mcmc.iters=5000`).

use std::path::{Path, PathBuf};

use patchwork_core::glm::ResidualKind;
use patchwork_core::simulate::{KernelForm, SimConfig};
use patchwork_core::Family;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub family: Family,
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    /// Worker threads for partition jobs and per-location work.
    pub workers: usize,
    pub out: PathBuf,
    /// Fraction of observations held out for validation and tuning.
    pub holdout: f64,
    pub data: DataConfig,
    pub sim: SimSpec,
    pub partition: PartitionConfig,
    pub basis: BasisConfig,
    pub mcmc: McmcConfig,
    pub smoothing: SmoothingConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            family: Family::Poisson,
            seed: 1,
            workers: 1,
            out: PathBuf::from("patchwork-out"),
            holdout: 0.2,
            data: DataConfig::default(),
            sim: SimSpec::default(),
            partition: PartitionConfig::default(),
            basis: BasisConfig::default(),
            mcmc: McmcConfig::default(),
            smoothing: SmoothingConfig::default(),
        }
    }
}

/// Input CSV and its column mapping. Without `input` the run simulates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub input: Option<PathBuf>,
    pub x: String,
    pub y: String,
    pub z: String,
    /// Covariate columns; empty means every column other than x, y and z.
    pub covariates: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { input: None, x: "x".into(), y: "y".into(), z: "z".into(), covariates: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    #[default]
    Uniform,
    Grid,
}

/// Simulated dataset over the unit square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    /// Locations generated, before the holdout split.
    pub n: usize,
    pub layout: Layout,
    pub noise_sd: f64,
    pub domain_scale: f64,
    pub beta: Vec<f64>,
    pub kernel_form: KernelForm,
}

impl Default for SimSpec {
    fn default() -> Self {
        let base = SimConfig::unit_square(Family::Poisson, 0);
        Self {
            n: 12_500,
            layout: Layout::Uniform,
            noise_sd: base.noise_sd,
            domain_scale: base.domain_scale,
            beta: base.beta,
            kernel_form: base.kernel_form,
        }
    }
}

impl SimSpec {
    pub fn sim_config(&self, family: Family, seed: u64) -> SimConfig {
        SimConfig {
            domain_scale: self.domain_scale,
            noise_sd: self.noise_sd,
            beta: self.beta.clone(),
            kernel_form: self.kernel_form,
            ..SimConfig::unit_square(family, seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionConfig {
    pub k: usize,
    /// Extra K values for a sweep; empty runs `k` alone.
    pub k_candidates: Vec<usize>,
    pub lattice: usize,
    pub residuals: ResidualKind,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { k: 9, k_candidates: Vec::new(), lattice: 900, residuals: ResidualKind::Deviance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisConfig {
    pub m_target: usize,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub folds: usize,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self { m_target: 100, n_lambda: 50, lambda_min_ratio: 1e-3, folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub iters: usize,
    /// Defaults to half of `iters`.
    pub burn_in: Option<usize>,
    pub batch_size: usize,
    /// Write each partition's full draw matrix next to its summary. Staged
    /// `predict` runs need it for intervals.
    pub save_draws: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { iters: 20_000, burn_in: None, batch_size: 50, save_draws: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub gammas: Vec<f64>,
    /// Posterior draws per location for predictive intervals; 0 skips them.
    pub interval_draws: usize,
    /// Side of the gridded surface export; 0 skips it.
    pub grid: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self { gammas: vec![0.1, 0.25, 0.5, 1.0], interval_draws: 200, grid: 0 }
    }
}

impl RunConfig {
    /// Parse a TOML document, apply `key=value` overrides in order, validate.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table = parse_table(text)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    /// Deserialize and validate an already merged table.
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: RunConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read `path` (if any) and apply overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::input(p, e))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.partition.k == 0 || self.partition.k_candidates.contains(&0) {
            return bad("partition.k must be at least 1".into());
        }
        if self.partition.lattice < 2 {
            return bad(format!("partition.lattice must be at least 2, got {}", self.partition.lattice));
        }
        if self.smoothing.gammas.is_empty() {
            return bad("smoothing.gammas must list at least one radius".into());
        }
        if let Some(g) = self.smoothing.gammas.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return bad(format!("weighting radii must be positive, got {g}"));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return bad(format!("holdout must lie in (0, 1), got {}", self.holdout));
        }
        if self.mcmc.iters < 2 || self.mcmc.batch_size == 0 {
            return bad("mcmc.iters must be at least 2 and mcmc.batch_size positive".into());
        }
        if let Some(b) = self.mcmc.burn_in {
            if b >= self.mcmc.iters {
                return bad(format!("mcmc.burn_in {b} leaves no draws out of {}", self.mcmc.iters));
            }
        }
        if self.basis.folds < 2 || self.basis.n_lambda < 2 {
            return bad("basis.folds and basis.n_lambda must be at least 2".into());
        }
        if !(self.basis.lambda_min_ratio > 0.0 && self.basis.lambda_min_ratio < 1.0) {
            return bad(format!("basis.lambda_min_ratio must lie in (0, 1), got {}", self.basis.lambda_min_ratio));
        }
        if self.data.input.is_none() {
            if self.sim.n < 2 {
                return bad("sim.n must be at least 2".into());
            }
            self.sim.sim_config(self.family, self.seed).validate()?;
        }
        Ok(())
    }

    /// Every K this run fits, in ascending order without duplicates.
    pub fn k_values(&self) -> Vec<usize> {
        let mut ks = self.partition.k_candidates.clone();
        if ks.is_empty() {
            ks.push(self.partition.k);
        }
        ks.sort_unstable();
        ks.dedup();
        ks
    }
}

pub fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
}

/// Apply `key=value`. The value is parsed as TOML and taken as a bare
/// string when that fails.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    set_value(table, key.trim(), value)
}

/// Set a dotted key (`mcmc.iters`), creating sections on the way.
pub fn set_value(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::from_toml("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_win_over_file() {
        let text = "seed = 4\n[mcmc]\niters = 100\n";
        let cfg = RunConfig::from_toml(text, &["mcmc.iters=300".into(), "family=bernoulli".into()]).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.mcmc.iters, 300);
        assert_eq!(cfg.family, Family::Bernoulli);
    }

    #[test]
    fn bare_strings_and_arrays() {
        let cfg = RunConfig::from_toml("", &["out=runs/a".into(), "smoothing.gammas=[0.05, 0.1]".into()]).unwrap();
        assert_eq!(cfg.out, PathBuf::from("runs/a"));
        assert_eq!(cfg.smoothing.gammas, vec![0.05, 0.1]);
    }

    #[test]
    fn rejects_bad_values() {
        for o in ["partition.k=0", "workers=0", "smoothing.gammas=[0.1, -1.0]", "holdout=1.0", "mcmc.burn_in=20000"] {
            let err = RunConfig::from_toml("", &[o.into()]).unwrap_err();
            assert!(err.is_validation(), "{o}: {err}");
        }
        assert!(RunConfig::from_toml("nonsense = 1", &[]).is_err());
        assert!(RunConfig::from_toml("", &["novalue".into()]).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.partition.k_candidates = vec![4, 9];
        cfg.mcmc.burn_in = Some(10);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml(), &[]).unwrap(), cfg);
    }
}
