use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use patchwork::config::{apply_override, parse_table, set_value};
use patchwork::io::{self, Schema};
use patchwork::pipeline::{self, RunDir, TuningFile};
use patchwork::{Error, Result, RunConfig, RunReport};
use patchwork_core::glm::fit_glm_with;

#[derive(Parser)]
#[command(name = "patchwork", version, about = "Partitioned basis-function spatial GLMMs for large non-Gaussian datasets")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file. Defaults to `<out>/config.toml` when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `poisson` or `bernoulli`.
    #[arg(long, global = true)]
    family: Option<String>,
    /// Dataset CSV; without it the configured simulation is used.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Column mapping of the input CSV.
    #[arg(long = "x-col", global = true)]
    x_col: Option<String>,
    #[arg(long = "y-col", global = true)]
    y_col: Option<String>,
    #[arg(long = "z-col", global = true)]
    z_col: Option<String>,
    /// Comma-separated covariate columns.
    #[arg(long, global = true, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Number of partitions.
    #[arg(short = 'k', long = "partitions", global = true)]
    k: Option<usize>,
    /// Any configuration key, e.g. `--set mcmc.iters=5000`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write it with its JSON sidecar.
    Simulate,
    /// Split off the holdout set, fit the GLM and write partition maps.
    Cluster,
    /// Select knots and sample every partition from the persisted partition maps.
    Fit,
    /// Score the weighting radii from persisted fits.
    Tune,
    /// Predict from persisted fits at the validation set or at `--at`.
    Predict {
        /// CSV of prediction points (x, y and covariate columns).
        #[arg(long)]
        at: Option<PathBuf>,
        /// Weighting radius; defaults to the tuned one.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// All stages end to end.
    Pipeline,
    /// Print the score table and stage timings of a finished run.
    Report {
        #[arg(long)]
        json: bool,
    },
}

fn resolve(c: &Common) -> Result<RunConfig> {
    let config_path = c.config.clone().or_else(|| {
        let p = RunDir::new(c.out.clone().unwrap_or_else(|| RunConfig::default().out)).config();
        p.exists().then_some(p)
    });
    let text = match &config_path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Input { path: p.clone(), message: e.to_string() })?,
        None => String::new(),
    };
    let mut t = parse_table(&text)?;
    for s in &c.sets {
        apply_override(&mut t, s)?;
    }
    let path_str = |p: &Path| toml::Value::String(p.to_string_lossy().into_owned());
    let typed: Vec<(&str, Option<toml::Value>)> = vec![
        ("seed", c.seed.map(|v| toml::Value::Integer(v as i64))),
        ("workers", c.workers.map(|v| toml::Value::Integer(v as i64))),
        ("out", c.out.as_deref().map(path_str)),
        ("family", c.family.clone().map(toml::Value::String)),
        ("data.input", c.input.as_deref().map(path_str)),
        ("data.x", c.x_col.clone().map(toml::Value::String)),
        ("data.y", c.y_col.clone().map(toml::Value::String)),
        ("data.z", c.z_col.clone().map(toml::Value::String)),
        ("data.covariates", c.covariates.clone().map(|v| toml::Value::Array(v.into_iter().map(toml::Value::String).collect()))),
        ("partition.k", c.k.map(|v| toml::Value::Integer(v as i64))),
    ];
    for (key, v) in typed {
        if let Some(v) = v {
            set_value(&mut t, key, v)?;
        }
    }
    RunConfig::from_table(t)
}

fn save_config(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    std::fs::create_dir_all(&dir.root).map_err(|e| Error::Output { path: dir.root.clone(), source: e })?;
    std::fs::write(dir.config(), cfg.to_toml()).map_err(|e| Error::Output { path: dir.config(), source: e })
}

fn cmd_simulate(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    let pool = pipeline::thread_pool(cfg.workers)?;
    let sim = pipeline::simulate(&cfg.sim, cfg.family, cfg.seed, &pool)?;
    pipeline::write_simulation(dir, &cfg.sim, &sim, cfg.seed)?;
    println!("wrote {} observations to {}", sim.dataset.len(), dir.dataset().display());
    Ok(())
}

fn cmd_cluster(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    save_config(cfg, dir)?;
    let pool = pipeline::thread_pool(cfg.workers)?;
    let prepared = pipeline::prepare_data(cfg, &pool)?;
    if let Some(sim) = &prepared.simulated {
        pipeline::write_simulation(dir, &cfg.sim, sim, cfg.seed)?;
    }
    io::write_dataset(&dir.train(), &prepared.train)?;
    io::write_dataset(&dir.validation(), &prepared.validation)?;
    let glm = fit_glm_with(&prepared.train, &pipeline::glm_options(cfg))?;
    for k in cfg.k_values() {
        let labels = pipeline::cluster(cfg, &prepared.train, &glm.residuals, k)?;
        io::write_partition_map(&dir.partition_map(k), prepared.train.locations(), &labels)?;
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        println!("K = {k}: partition sizes {sizes:?}");
    }
    Ok(())
}

fn load_train(cfg: &RunConfig, dir: &RunDir) -> Result<patchwork_core::SpatialDataset> {
    io::load_dataset(&dir.train(), &Schema::default(), cfg.family)
}

fn cmd_fit(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    let train = load_train(cfg, dir)?;
    for k in cfg.k_values() {
        let (_, labels) = io::read_partition_map(&dir.partition_map(k))?;
        if labels.len() != train.len() {
            return Err(Error::Stage {
                stage: "fit".into(),
                message: format!("partition map has {} rows, training data {}", labels.len(), train.len()),
            });
        }
        let outcomes = pipeline::fit_partitions(cfg, &train, &labels, k, Some(dir))?;
        for o in outcomes {
            let r = o.report;
            println!(
                "K = {k} partition {}: n = {}, m = {}/{}, acceptance {:.3}, lasso {:.2}s, mcmc {:.2}s",
                r.partition, r.n, r.m, r.candidates, r.acceptance_rate, r.lasso_seconds, r.mcmc_seconds
            );
        }
    }
    Ok(())
}

fn cmd_tune(cfg: &RunConfig, dir: &RunDir) -> Result<()> {
    let pool = pipeline::thread_pool(cfg.workers)?;
    for k in cfg.k_values() {
        let t = pipeline::tune_from_artifacts(dir, k, &cfg.smoothing.gammas, cfg.family, &pool)?;
        let file = TuningFile {
            k,
            best_gamma: t.best_gamma,
            scores: t.scores.iter().map(|&(gamma, score)| pipeline::GammaScore { gamma, score }).collect(),
        };
        io::write_json(&dir.tuning(k), &file)?;
        let cells: Vec<String> = t.scores.iter().map(|(g, s)| format!("{g}: {s:.6}")).collect();
        println!("K = {k}: {} | best gamma {}", cells.join(", "), t.best_gamma);
    }
    Ok(())
}

fn cmd_predict(cfg: &RunConfig, dir: &RunDir, at: Option<&Path>, gamma: Option<f64>) -> Result<()> {
    let pool = pipeline::thread_pool(cfg.workers)?;
    let ks = cfg.k_values();
    let (k, gamma) = match gamma {
        Some(g) if ks.len() == 1 => (ks[0], g),
        _ => {
            let tunings: Vec<TuningFile> = ks.iter().map(|&k| io::read_json(&dir.tuning(k))).collect::<Result<_>>()?;
            let gammas: Vec<f64> = tunings[0].scores.iter().map(|s| s.gamma).collect();
            let matrix: Vec<Vec<f64>> = tunings.iter().map(|t| t.scores.iter().map(|s| s.score).collect()).collect();
            let (a, b) = pipeline::select_k_gamma(&ks, &gammas, &matrix)
                .ok_or_else(|| Error::Stage { stage: "predict".into(), message: "no finite tuning score".into() })?;
            (ks[a], gamma.unwrap_or(gammas[b]))
        }
    };
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("weighting radius must be positive, got {gamma}")));
    }
    let (locs, labels, fits) = pipeline::load_fits(dir, k)?;
    let pred = pipeline::build_predictor(&locs, &labels, &fits, gamma)?;
    let (points, x) = match at {
        Some(p) => io::load_prediction_points(p, &Schema::from(&cfg.data))?,
        None => {
            let v = io::load_dataset(&dir.validation(), &Schema::default(), cfg.family)?;
            (v.locations().to_vec(), v.covariates().clone())
        }
    };
    let caches = pipeline::point_caches(&pred, &points, &pool);
    let rows = pipeline::predict(&pred, &caches, &points, &x, gamma, cfg.family, cfg.smoothing.interval_draws, cfg.seed, &pool)?;
    io::write_predictions(&dir.predictions(k), &rows)?;
    println!("wrote {} predictions (K = {k}, gamma = {gamma}) to {}", rows.len(), dir.predictions(k).display());
    if cfg.smoothing.grid > 0 {
        let pts = pipeline::surface(&pred, &locs, cfg.smoothing.grid, gamma, &pool);
        io::write_surface(&dir.surface(k), &pts)?;
    }
    Ok(())
}

fn print_report(report: &RunReport) {
    print!("{}", pipeline::format_scores(report));
    println!();
    print!("{}", pipeline::format_timings(&pipeline::report_timings(report)));
    if let Some(e) = &report.error {
        println!("\nfailed in stage `{}` ({}): {}", e.stage, e.kind, e.message);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Report { json } = cli.command {
        let out = cli.common.out.clone().unwrap_or_else(|| RunConfig::default().out);
        let report: RunReport = io::read_json(&RunDir::new(out).report())?;
        if json {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        } else {
            print_report(&report);
        }
        return Ok(());
    }
    let cfg = resolve(&cli.common)?;
    let dir = RunDir::new(&cfg.out);
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg, &dir),
        Command::Cluster => cmd_cluster(&cfg, &dir).map_err(|e| e.in_stage("cluster")),
        Command::Fit => cmd_fit(&cfg, &dir).map_err(|e| e.in_stage("fit")),
        Command::Tune => cmd_tune(&cfg, &dir).map_err(|e| e.in_stage("tune")),
        Command::Predict { at, gamma } => cmd_predict(&cfg, &dir, at.as_deref(), gamma).map_err(|e| e.in_stage("predict")),
        Command::Pipeline => {
            let report = pipeline::run_pipeline(&cfg)?;
            print_report(&report);
            Ok(())
        }
        Command::Report { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
