//! Stage orchestration: data preparation, clustering, per-partition fits on a
//! worker pool, weighting-radius tuning and prediction, with every
//! intermediate result persisted under the output directory.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use patchwork_core::basis::LassoOptions;
use patchwork_core::clustering::partition_domain;
use patchwork_core::data::{holdout_indices, Family};
use patchwork_core::glm::{fit_glm_with, GlmOptions};
use patchwork_core::local::{sample_partition, select_partition_basis, LocalFitOptions, PartitionData};
use patchwork_core::mcmc::{summarize, ParamSummary, Priors, SamplerOptions};
use patchwork_core::rng::derive_seed;
use patchwork_core::simulate::{
    dataset_from_field, draw_reference_noise, field_from_noise, grid_locations, uniform_locations, SimulatedDataset,
    SimulatedField,
};
use patchwork_core::smoothing::{
    holdout_score, predict_response, tune_gamma_cached, weights_from_distances, GammaTuning,
    GlobalPredictor, PartitionFit, PointCache,
};
use patchwork_core::{Location, Matrix, SpatialDataset};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Layout, RunConfig, SimSpec};
use crate::error::{Error, Result};
use crate::io::{self, KnotFile, KnotRecord, PredictionRow, Schema, SimSidecar, SummaryFile, SurfacePoint};

const STREAM_HOLDOUT: u64 = 0x40;
const STREAM_FIT: u64 = 0x50;
const STREAM_CV: u64 = 0x51;
const STREAM_DRAW_PICK: u64 = 0x60;

/// Where each artifact lives under the output directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("data.csv")
    }
    pub fn sidecar(&self) -> PathBuf {
        self.root.join("data.json")
    }
    pub fn train(&self) -> PathBuf {
        self.root.join("train.csv")
    }
    pub fn validation(&self) -> PathBuf {
        self.root.join("validation.csv")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn k_dir(&self, k: usize) -> PathBuf {
        self.root.join(format!("k{k}"))
    }
    pub fn partition_map(&self, k: usize) -> PathBuf {
        self.k_dir(k).join("partition_map.csv")
    }
    pub fn tuning(&self, k: usize) -> PathBuf {
        self.k_dir(k).join("tuning.json")
    }
    pub fn predictions(&self, k: usize) -> PathBuf {
        self.k_dir(k).join("predictions.csv")
    }
    pub fn surface(&self, k: usize) -> PathBuf {
        self.k_dir(k).join("surface.csv")
    }
    fn part_dir(&self, k: usize, j: usize) -> PathBuf {
        self.k_dir(k).join(format!("partition_{j:03}"))
    }
    pub fn knots(&self, k: usize, j: usize) -> PathBuf {
        self.part_dir(k, j).join("knots.json")
    }
    pub fn summary(&self, k: usize, j: usize) -> PathBuf {
        self.part_dir(k, j).join("posterior.json")
    }
    pub fn draws(&self, k: usize, j: usize) -> PathBuf {
        self.part_dir(k, j).join("draws.bin")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub k: Option<usize>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub partition: usize,
    pub n: usize,
    pub candidates: usize,
    pub m: usize,
    pub lambda: f64,
    pub lasso_seconds: f64,
    pub mcmc_seconds: f64,
    pub iters: usize,
    pub acceptance_rate: f64,
    pub beta: Vec<ParamSummary>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaScore {
    pub gamma: f64,
    pub score: f64,
}

/// Everything measured for one partition count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct KRun {
    pub k: usize,
    pub partitions: Vec<PartitionReport>,
    pub gamma_scores: Vec<GammaScore>,
    pub best_gamma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub stage: String,
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub family: Family,
    /// `rcvmspe` for counts, `misclassification` for binary responses.
    pub metric: String,
    pub seed: u64,
    pub workers: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub timings: Vec<StageTiming>,
    pub runs: Vec<KRun>,
    pub gammas: Vec<f64>,
    /// Rows follow `runs`, columns follow `gammas`.
    pub score_matrix: Vec<Vec<f64>>,
    pub chosen_k: Option<usize>,
    pub chosen_gamma: Option<f64>,
    pub score: Option<f64>,
    /// Held-out score of the covariate-only GLM.
    pub baseline_score: Option<f64>,
    pub error: Option<ErrorRecord>,
}

impl RunReport {
    fn new(cfg: &RunConfig) -> Self {
        Self {
            family: cfg.family,
            metric: metric_name(cfg.family).into(),
            seed: cfg.seed,
            workers: cfg.workers,
            n_train: 0,
            n_validation: 0,
            timings: Vec::new(),
            runs: Vec::new(),
            gammas: cfg.smoothing.gammas.clone(),
            score_matrix: Vec::new(),
            chosen_k: None,
            chosen_gamma: None,
            score: None,
            baseline_score: None,
            error: None,
        }
    }

    pub fn seconds(&self, stage: &str, k: Option<usize>) -> Option<f64> {
        self.timings.iter().find(|t| t.stage == stage && t.k == k).map(|t| t.seconds)
    }

    fn time(&mut self, stage: &str, k: Option<usize>, t0: Instant) {
        self.timings.push(StageTiming { stage: stage.into(), k, seconds: t0.elapsed().as_secs_f64() });
    }
}

pub fn metric_name(family: Family) -> &'static str {
    match family {
        Family::Poisson => "rcvmspe",
        Family::Bernoulli => "misclassification",
    }
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Stage { stage: "setup".into(), message: e.to_string() })
}

/// Simulate the configured dataset. The field is evaluated in parallel
/// chunks; the result does not depend on the pool size.
pub fn simulate(spec: &SimSpec, family: Family, seed: u64, pool: &rayon::ThreadPool) -> Result<SimulatedDataset> {
    let sc = spec.sim_config(family, seed);
    sc.validate()?;
    let locs = match spec.layout {
        Layout::Uniform => uniform_locations(spec.n, seed),
        Layout::Grid => grid_locations((spec.n as f64).sqrt().round().max(1.0) as usize),
    };
    let v = draw_reference_noise(&sc);
    let chunks: Vec<Vec<f64>> =
        pool.install(|| locs.par_chunks(2048).map(|c| field_from_noise(c, &sc, &v)).collect::<std::result::Result<_, _>>())?;
    let field = SimulatedField { w: chunks.concat(), v };
    Ok(dataset_from_field(&locs, &sc, field)?)
}

pub fn write_simulation(dir: &RunDir, spec: &SimSpec, sim: &SimulatedDataset, seed: u64) -> Result<()> {
    io::write_dataset(&dir.dataset(), &sim.dataset)?;
    let sidecar = SimSidecar {
        seed,
        n: sim.dataset.len(),
        layout: format!("{:?}", spec.layout).to_lowercase(),
        covariates: "independent standard normal columns, one per fixed effect".into(),
        config: spec.sim_config(sim.dataset.family(), seed),
    };
    io::write_json(&dir.sidecar(), &sidecar)
}

/// Training and validation data of a run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: SpatialDataset,
    pub validation: SpatialDataset,
    /// Simulated truth, when the run simulated its data.
    pub simulated: Option<SimulatedDataset>,
}

/// Load or simulate the full dataset and split off the holdout set.
pub fn prepare_data(cfg: &RunConfig, pool: &rayon::ThreadPool) -> Result<Prepared> {
    let (full, simulated) = match &cfg.data.input {
        Some(path) => (io::load_dataset(path, &Schema::from(&cfg.data), cfg.family)?, None),
        None => {
            let sim = simulate(&cfg.sim, cfg.family, cfg.seed, pool)?;
            (sim.dataset.clone(), Some(sim))
        }
    };
    let split = holdout_indices(full.len(), cfg.holdout, derive_seed(cfg.seed, STREAM_HOLDOUT))?;
    Ok(Prepared { train: full.subset(&split.train), validation: full.subset(&split.validation), simulated })
}

pub fn glm_options(cfg: &RunConfig) -> GlmOptions {
    GlmOptions { residuals: cfg.partition.residuals, ..GlmOptions::default() }
}

/// Held-out score of the covariate-only GLM fitted on the training data.
pub fn baseline_score(train: &SpatialDataset, validation: &SpatialDataset, opts: &GlmOptions) -> Result<f64> {
    let glm = fit_glm_with(train, opts)?;
    let eta = validation.covariates().mul_vec(&glm.beta_hat);
    Ok(holdout_score(train.family(), &eta, validation.responses())?)
}

/// Step 1 for one K: GLM residuals of the training data, lattice and
/// agglomeration. Returns a label per training observation.
pub fn cluster(cfg: &RunConfig, train: &SpatialDataset, residuals: &[f64], k: usize) -> Result<Vec<usize>> {
    let dp = partition_domain(train.locations(), residuals, cfg.partition.lattice, k)?;
    Ok(dp.partitioning.labels)
}

/// Fitted partition as persisted: knots, summary and optionally the full
/// chain.
#[derive(Debug, Clone)]
pub struct PartitionOutcome {
    pub report: PartitionReport,
    pub knots: KnotFile,
    pub summary: SummaryFile,
    /// Full chain, `S x (p + m + 1)`, burn-in included.
    pub draws: Matrix,
}

pub fn local_options(cfg: &RunConfig, k: usize, j: usize) -> LocalFitOptions {
    let job = derive_seed(cfg.seed, STREAM_FIT) ^ ((k as u64) << 32);
    LocalFitOptions {
        m_target: cfg.basis.m_target,
        lasso: LassoOptions {
            n_lambda: cfg.basis.n_lambda,
            lambda_min_ratio: cfg.basis.lambda_min_ratio,
            folds: cfg.basis.folds,
            cv_seed: derive_seed(job ^ STREAM_CV, j as u64),
            ..LassoOptions::default()
        },
        sampler: SamplerOptions {
            iters: cfg.mcmc.iters,
            burn_in: cfg.mcmc.burn_in,
            batch_size: cfg.mcmc.batch_size,
            seed: derive_seed(job, j as u64),
            ..SamplerOptions::default()
        },
        priors: Priors::default(),
    }
}

fn members(labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        out[l].push(i);
    }
    out
}

fn fit_one(cfg: &RunConfig, train: &SpatialDataset, idx: &[usize], k: usize, j: usize, dir: Option<&RunDir>) -> Result<PartitionOutcome> {
    let stage = |e: patchwork_core::Error| Error::Stage { stage: "fit".into(), message: format!("partition {j}: {e}") };
    let part = train.subset(idx);
    let data = PartitionData { locations: part.locations(), x: part.covariates(), z: part.responses(), family: part.family() };
    let opts = local_options(cfg, k, j);
    let t0 = Instant::now();
    let (basis, selection) = select_partition_basis(&data, &opts).map_err(stage)?;
    let lasso_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let samples = sample_partition(&data, &basis, &selection, &opts).map_err(stage)?;
    let mcmc_seconds = t1.elapsed().as_secs_f64();
    let summary = summarize(&samples).map_err(stage)?;
    let m = basis.selected.len();
    let knots = KnotFile {
        partition: j,
        knots: basis
            .candidate_knots
            .iter()
            .enumerate()
            .map(|(i, u)| KnotRecord { x: u.x, y: u.y, active: basis.selected.binary_search(&i).is_ok() })
            .collect(),
    };
    let file = SummaryFile {
        partition: j,
        n: idx.len(),
        m,
        beta: summary.beta.clone(),
        delta: summary.delta,
        sigma2: summary.sigma2,
        acceptance_rate: samples.acceptance_rate,
        burn_in_acceptance_rate: samples.burn_in_acceptance_rate,
        iters: samples.n_draws(),
        burn_in: samples.burn_in,
        lambda: selection.fit.lambda,
        seed: samples.seed,
        warning: samples.warning.clone(),
    };
    if let Some(dir) = dir {
        io::write_json(&dir.knots(k, j), &knots)?;
        io::write_json(&dir.summary(k, j), &file)?;
        if cfg.mcmc.save_draws {
            io::write_draws(&dir.draws(k, j), &samples.draws, samples.p, m)?;
        }
    }
    Ok(PartitionOutcome {
        report: PartitionReport {
            partition: j,
            n: idx.len(),
            candidates: basis.candidate_knots.len(),
            m,
            lambda: selection.fit.lambda,
            lasso_seconds,
            mcmc_seconds,
            iters: samples.n_draws(),
            acceptance_rate: samples.acceptance_rate,
            beta: summary.beta,
            warning: samples.warning.clone(),
        },
        knots,
        summary: file,
        draws: samples.draws,
    })
}

/// Steps 2 and 3 for every partition, as independent jobs on `workers`
/// threads. Jobs start in decreasing order of partition size; each job's
/// seeds depend only on (master seed, K, partition), so results do not
/// depend on the worker count.
pub fn fit_partitions(
    cfg: &RunConfig,
    train: &SpatialDataset,
    labels: &[usize],
    k: usize,
    dir: Option<&RunDir>,
) -> Result<Vec<PartitionOutcome>> {
    let groups = members(labels, k);
    if let Some(j) = groups.iter().position(|g| g.is_empty()) {
        return Err(Error::Stage { stage: "fit".into(), message: format!("partition {j} has no observations") });
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&j| (std::cmp::Reverse(groups[j].len()), j));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    std::thread::scope(|scope| {
        for _ in 0..cfg.workers.min(k) {
            let tx = tx.clone();
            let (next, order, groups) = (&next, &order, &groups);
            scope.spawn(move || loop {
                let slot = next.fetch_add(1, Ordering::Relaxed);
                let Some(&j) = order.get(slot) else { break };
                let res = fit_one(cfg, train, &groups[j], k, j, dir);
                let failed = res.is_err();
                if tx.send((j, res)).is_err() || failed {
                    // Stop taking work once anything failed.
                    next.store(order.len(), Ordering::Relaxed);
                }
            });
        }
    });
    drop(tx);
    let mut out: Vec<Option<PartitionOutcome>> = (0..k).map(|_| None).collect();
    let mut first_err: Option<(usize, Error)> = None;
    for (j, res) in rx {
        match res {
            Ok(o) => out[j] = Some(o),
            Err(e) => {
                if first_err.as_ref().is_none_or(|(i, _)| j < *i) {
                    first_err = Some((j, e));
                }
            }
        }
    }
    if let Some((_, e)) = first_err {
        return Err(e);
    }
    out.into_iter()
        .enumerate()
        .map(|(j, o)| o.ok_or_else(|| Error::Stage { stage: "fit".into(), message: format!("partition {j} was not fitted") }))
        .collect()
}

/// Predictor inputs for one partition. Coefficients are the persisted
/// posterior means, so in-process and reloaded predictors agree exactly.
pub fn partition_fit(locations: Vec<Location>, knots: &KnotFile, summary: &SummaryFile, draws: Option<&Matrix>) -> PartitionFit {
    let p = summary.beta.len();
    let m = summary.delta.len();
    let draws = draws.map(|d| {
        let rows: Vec<usize> = (summary.burn_in..d.nrows()).collect();
        let cols: Vec<usize> = (0..p + m).collect();
        d.select_rows(&rows).select_cols(&cols)
    });
    PartitionFit {
        locations,
        knots: knots.active_knots(),
        beta: summary.beta.iter().map(|s| s.mean).collect(),
        delta: summary.delta.iter().map(|s| s.mean).collect(),
        draws,
    }
}

pub fn build_predictor(
    train_locations: &[Location],
    labels: &[usize],
    fits: &[(KnotFile, SummaryFile, Option<Matrix>)],
    gamma: f64,
) -> Result<GlobalPredictor> {
    let groups = members(labels, fits.len());
    let parts = fits
        .iter()
        .zip(groups)
        .map(|((knots, summary, draws), g)| {
            partition_fit(g.iter().map(|&i| train_locations[i]).collect(), knots, summary, draws.as_ref())
        })
        .collect();
    Ok(GlobalPredictor::new(parts, gamma)?)
}

pub fn point_caches(pred: &GlobalPredictor, locs: &[Location], pool: &rayon::ThreadPool) -> Vec<PointCache> {
    pool.install(|| locs.par_iter().map(|s| pred.point_cache(s, None)).collect())
}

/// Step 4: score each radius on the validation set.
pub fn tune(
    pred: &GlobalPredictor,
    validation: &SpatialDataset,
    gammas: &[f64],
    pool: &rayon::ThreadPool,
) -> Result<(GammaTuning, Vec<PointCache>)> {
    let caches = point_caches(pred, validation.locations(), pool);
    let t = tune_gamma_cached(pred, &caches, validation.covariates(), validation.responses(), validation.family(), gammas)?;
    Ok((t, caches))
}

/// Evenly spaced draw indices, offset by a seeded shift.
fn draw_indices(n_draws: usize, want: usize, seed: u64) -> Vec<usize> {
    if n_draws == 0 || want == 0 {
        return Vec::new();
    }
    let want = want.min(n_draws);
    let shift = (derive_seed(seed, STREAM_DRAW_PICK) % (n_draws / want) as u64) as usize;
    (0..want).map(|i| i * n_draws / want + shift).map(|i| i.min(n_draws - 1)).collect()
}

/// Predictions at `locs` with covariates `x` for radius `gamma`. Intervals
/// need draws on every partition and `interval_draws > 0`.
pub fn predict(
    pred: &GlobalPredictor,
    caches: &[PointCache],
    locs: &[Location],
    x: &Matrix,
    gamma: f64,
    family: Family,
    interval_draws: usize,
    seed: u64,
    pool: &rayon::ThreadPool,
) -> Result<Vec<PredictionRow>> {
    let min_draws = pred.partitions().iter().map(|p| p.draws.as_ref().map_or(0, |d| d.nrows())).min().unwrap_or(0);
    let picks = draw_indices(min_draws, interval_draws, seed);
    let mut pred_g = pred.clone();
    pred_g.set_gamma(gamma)?;
    pool.install(|| {
        (0..locs.len())
            .into_par_iter()
            .map(|i| {
                let c = &caches[i];
                let xs = x.row(i);
                let eta_mean = pred_g.eta_from_cache(c, &xs, gamma);
                let fallback = weights_from_distances(&c.dists, gamma).fallback;
                let (response_mean, lo95, hi95) = if picks.is_empty() {
                    (family.mean(eta_mean), None, None)
                } else {
                    let eta = pred_g.global_eta_draws(&locs[i], &xs, Some(c.home), &picks)?;
                    let r = predict_response(&eta, family)?;
                    (r.mean, Some(r.lo), Some(r.hi))
                };
                Ok(PredictionRow {
                    index: i,
                    x: locs[i].x,
                    y: locs[i].y,
                    eta_mean,
                    response_mean,
                    lo95,
                    hi95,
                    home_partition: c.home,
                    fallback_flag: fallback,
                })
            })
            .collect::<std::result::Result<Vec<_>, patchwork_core::Error>>()
            .map_err(Error::from)
    })
}

/// Spatial random-effect surface on a `side x side` grid spanning the
/// training locations.
pub fn surface(pred: &GlobalPredictor, train_locations: &[Location], side: usize, gamma: f64, pool: &rayon::ThreadPool) -> Vec<SurfacePoint> {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for s in train_locations {
        x0 = x0.min(s.x);
        x1 = x1.max(s.x);
        y0 = y0.min(s.y);
        y1 = y1.max(s.y);
    }
    let at = |lo: f64, hi: f64, i: usize| if side > 1 { lo + (hi - lo) * i as f64 / (side - 1) as f64 } else { 0.5 * (lo + hi) };
    let pts: Vec<Location> = (0..side).flat_map(|j| (0..side).map(move |i| Location::new(at(x0, x1, i), at(y0, y1, j)))).collect();
    let zeros = vec![0.0; pred.n_covariates()];
    pool.install(|| {
        pts.par_iter()
            .map(|s| SurfacePoint { x: s.x, y: s.y, value: pred.eta_from_cache(&pred.point_cache(s, None), &zeros, gamma) })
            .collect()
    })
}

/// Index `(k, gamma)` of the smallest score. Ties go to the smaller K, then
/// the smaller gamma.
pub fn select_k_gamma(k_values: &[usize], gammas: &[f64], matrix: &[Vec<f64>]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    for (a, row) in matrix.iter().enumerate() {
        for (b, &s) in row.iter().enumerate() {
            if s.is_nan() {
                continue;
            }
            let better = match best {
                None => true,
                Some((ba, bb)) => {
                    let bs = matrix[ba][bb];
                    s < bs || (s == bs && (k_values[a], gammas[b]) < (k_values[ba], gammas[bb]))
                }
            };
            if better {
                best = Some((a, b));
            }
        }
    }
    best
}

/// In-memory products of one K, kept for the final prediction.
struct KState {
    predictor: GlobalPredictor,
    caches: Vec<PointCache>,
}

/// Run all stages. On failure the report up to the failed stage, with an
/// error record, is still written to `report.json`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport> {
    let dir = RunDir::new(&cfg.out);
    let mut report = RunReport::new(cfg);
    let mut stage = "setup";
    let res = run_stages(cfg, &dir, &mut report, &mut stage).map_err(|e| match stage {
        "setup" | "prepare" => e,
        s => e.in_stage(s),
    });
    if let Err(e) = &res {
        report.error = Some(ErrorRecord { stage: stage.into(), kind: e.kind().into(), message: e.to_string(), exit_code: e.exit_code() });
    }
    let written = io::write_json(&dir.report(), &report);
    res?;
    written?;
    Ok(report)
}

fn run_stages(cfg: &RunConfig, dir: &RunDir, report: &mut RunReport, stage: &mut &'static str) -> Result<()> {
    cfg.validate()?;
    let pool = thread_pool(cfg.workers)?;
    std::fs::create_dir_all(&dir.root).map_err(|e| Error::output(&dir.root, e))?;
    std::fs::write(dir.config(), cfg.to_toml()).map_err(|e| Error::output(dir.config(), e))?;

    *stage = "prepare";
    let t0 = Instant::now();
    let prepared = prepare_data(cfg, &pool)?;
    if let Some(sim) = &prepared.simulated {
        write_simulation(dir, &cfg.sim, sim, cfg.seed)?;
    }
    io::write_dataset(&dir.train(), &prepared.train)?;
    io::write_dataset(&dir.validation(), &prepared.validation)?;
    report.n_train = prepared.train.len();
    report.n_validation = prepared.validation.len();
    report.time("prepare", None, t0);

    *stage = "glm";
    let t0 = Instant::now();
    let opts = glm_options(cfg);
    let glm = fit_glm_with(&prepared.train, &opts)?;
    let eta = prepared.validation.covariates().mul_vec(&glm.beta_hat);
    report.baseline_score = Some(holdout_score(cfg.family, &eta, prepared.validation.responses())?);
    report.time("glm", None, t0);

    let mut best: Option<(usize, KState)> = None;
    let k_values = cfg.k_values();
    for &k in &k_values {
        report.runs.push(KRun { k, ..KRun::default() });
        let run = report.runs.len() - 1;

        *stage = "cluster";
        let t0 = Instant::now();
        let labels = cluster(cfg, &prepared.train, &glm.residuals, k)?;
        io::write_partition_map(&dir.partition_map(k), prepared.train.locations(), &labels)?;
        report.time("cluster", Some(k), t0);

        *stage = "fit";
        let t0 = Instant::now();
        let outcomes = fit_partitions(cfg, &prepared.train, &labels, k, Some(dir))?;
        report.time("fit", Some(k), t0);
        report.runs[run].partitions = outcomes.iter().map(|o| o.report.clone()).collect();
        let lasso: f64 = outcomes.iter().map(|o| o.report.lasso_seconds).sum();
        let mcmc: f64 = outcomes.iter().map(|o| o.report.mcmc_seconds).sum();
        report.timings.push(StageTiming { stage: "lasso".into(), k: Some(k), seconds: lasso });
        report.timings.push(StageTiming { stage: "mcmc".into(), k: Some(k), seconds: mcmc });

        *stage = "tune";
        let t0 = Instant::now();
        let keep = cfg.smoothing.interval_draws > 0;
        let fits: Vec<_> = outcomes.into_iter().map(|o| (o.knots, o.summary, keep.then_some(o.draws))).collect();
        let predictor = build_predictor(prepared.train.locations(), &labels, &fits, cfg.smoothing.gammas[0])?;
        drop(fits);
        let (tuning, caches) = tune(&predictor, &prepared.validation, &cfg.smoothing.gammas, &pool)?;
        io::write_json(&dir.tuning(k), &tuning_file(k, &tuning))?;
        report.time("weighting", Some(k), t0);
        report.runs[run].gamma_scores = tuning.scores.iter().map(|&(gamma, score)| GammaScore { gamma, score }).collect();
        report.runs[run].best_gamma = Some(tuning.best_gamma);
        report.score_matrix.push(tuning.scores.iter().map(|s| s.1).collect());

        let leader = select_k_gamma(&k_values[..=run], &cfg.smoothing.gammas, &report.score_matrix).map(|(a, _)| a);
        if leader == Some(run) {
            best = Some((run, KState { predictor, caches }));
        }
    }

    let (a, b) = select_k_gamma(&k_values, &cfg.smoothing.gammas, &report.score_matrix)
        .ok_or_else(|| Error::Stage { stage: "tune".into(), message: "no finite score".into() })?;
    report.chosen_k = Some(k_values[a]);
    report.chosen_gamma = Some(cfg.smoothing.gammas[b]);
    report.score = Some(report.score_matrix[a][b]);

    *stage = "predict";
    let t0 = Instant::now();
    let (run, state) = best.expect("the chosen K was kept");
    assert_eq!(run, a, "kept state belongs to the chosen K");
    let k = k_values[a];
    let gamma = cfg.smoothing.gammas[b];
    let rows = predict(
        &state.predictor,
        &state.caches,
        prepared.validation.locations(),
        prepared.validation.covariates(),
        gamma,
        cfg.family,
        cfg.smoothing.interval_draws,
        cfg.seed,
        &pool,
    )?;
    io::write_predictions(&dir.predictions(k), &rows)?;
    if cfg.smoothing.grid > 0 {
        let pts = surface(&state.predictor, prepared.train.locations(), cfg.smoothing.grid, gamma, &pool);
        io::write_surface(&dir.surface(k), &pts)?;
    }
    report.time("predict", Some(k), t0);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningFile {
    pub k: usize,
    pub best_gamma: f64,
    pub scores: Vec<GammaScore>,
}

fn tuning_file(k: usize, t: &GammaTuning) -> TuningFile {
    TuningFile { k, best_gamma: t.best_gamma, scores: t.scores.iter().map(|&(gamma, score)| GammaScore { gamma, score }).collect() }
}

/// Partition map, knot sets, summaries and (when present) draws of one K.
pub fn load_fits(dir: &RunDir, k: usize) -> Result<(Vec<Location>, Vec<usize>, Vec<(KnotFile, SummaryFile, Option<Matrix>)>)> {
    let (locs, labels) = io::read_partition_map(&dir.partition_map(k))?;
    let n_parts = labels.iter().max().map_or(0, |m| m + 1);
    let fits = (0..n_parts)
        .map(|j| {
            let knots: KnotFile = io::read_json(&dir.knots(k, j))?;
            let summary: SummaryFile = io::read_json(&dir.summary(k, j))?;
            let path = dir.draws(k, j);
            let draws = if path.exists() { Some(io::read_draws(&path)?.0) } else { None };
            Ok((knots, summary, draws))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((locs, labels, fits))
}

/// Step 4 rerun from persisted Step 3 artifacts.
pub fn tune_from_artifacts(dir: &RunDir, k: usize, gammas: &[f64], family: Family, pool: &rayon::ThreadPool) -> Result<GammaTuning> {
    let validation = io::load_dataset(&dir.validation(), &Schema::default(), family)?;
    let (locs, labels, fits) = load_fits(dir, k)?;
    let pred = build_predictor(&locs, &labels, &fits, gammas[0])?;
    Ok(tune(&pred, &validation, gammas, pool)?.0)
}

/// One row of the timing table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub stage: String,
    pub k: Option<usize>,
    pub partition: Option<usize>,
    pub seconds: f64,
    /// Work per second in `unit`.
    pub throughput: Option<f64>,
    pub unit: Option<String>,
}

/// Stage walltimes plus throughputs: MCMC iterations per second for each
/// partition and validation locations per second for weighting.
pub fn report_timings(report: &RunReport) -> Vec<TimingRow> {
    let mut rows = Vec::new();
    let rate = |work: f64, s: f64| (s > 0.0).then(|| work / s);
    for t in &report.timings {
        let (throughput, unit) = match t.stage.as_str() {
            "weighting" => (rate(report.n_validation as f64, t.seconds), Some("locations/s".to_string())),
            "fit" => (rate(report.n_train as f64, t.seconds), Some("observations/s".to_string())),
            _ => (None, None),
        };
        rows.push(TimingRow { stage: t.stage.clone(), k: t.k, partition: None, seconds: t.seconds, throughput, unit });
    }
    for run in &report.runs {
        for p in &run.partitions {
            rows.push(TimingRow {
                stage: "mcmc".into(),
                k: Some(run.k),
                partition: Some(p.partition),
                seconds: p.mcmc_seconds,
                throughput: rate(p.iters as f64, p.mcmc_seconds),
                unit: Some("iterations/s".into()),
            });
        }
    }
    rows
}

/// Print-ready timing table.
pub fn format_timings(rows: &[TimingRow]) -> String {
    let mut s = format!("{:<10} {:>4} {:>9} {:>12} {:>14}  {}\n", "stage", "K", "partition", "seconds", "throughput", "unit");
    for r in rows {
        let opt = |v: Option<usize>| v.map_or("-".to_string(), |v| v.to_string());
        s.push_str(&format!(
            "{:<10} {:>4} {:>9} {:>12.4} {:>14} {}\n",
            r.stage,
            opt(r.k),
            opt(r.partition),
            r.seconds,
            r.throughput.map_or("-".to_string(), |t| format!("{t:.1}")),
            r.unit.as_deref().unwrap_or("")
        ));
    }
    s
}

pub fn format_scores(report: &RunReport) -> String {
    let mut s = format!("{:>6}", "K");
    for g in &report.gammas {
        s.push_str(&format!(" {:>12}", format!("gamma={g}")));
    }
    s.push('\n');
    for (run, row) in report.runs.iter().zip(&report.score_matrix) {
        s.push_str(&format!("{:>6}", run.k));
        for v in row {
            s.push_str(&format!(" {v:>12.6}"));
        }
        s.push('\n');
    }
    if let (Some(k), Some(g), Some(v)) = (report.chosen_k, report.chosen_gamma, report.score) {
        s.push_str(&format!("chosen K = {k}, gamma = {g}, {} = {v:.6}", report.metric));
        if let Some(b) = report.baseline_score {
            s.push_str(&format!(" (GLM baseline {b:.6})"));
        }
        s.push('\n');
    }
    s
}
