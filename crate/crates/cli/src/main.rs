//! Command-line entry point: training, sampling and analysis workflows.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 validation failure.

mod config;

use std::fs::OpenOptions;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use reticula::analysis::{
    baseline_comparison, capture_metrics, cross_validate, exact_flows, fit_univariate, read_isotherms, read_xy,
    write_capture_csv, CvMode,
};
use reticula::crystal::{
    amd, descriptor_distance_matrix, novelty_score, read_cif, read_descriptor_csv, write_descriptor_csv,
    write_matrix_csv, write_novelty_csv, DEFAULT_AMD_K,
};
use reticula::dataset::{generate, top_k, write_csv, DatasetManifest};
use reticula::env::{AssemblyEnv, DEFAULT_ENUMERATION_BOUND};
use reticula::reward::{EvaluatorConfig, Scorer};
use reticula::trainer::{episode_rng, truncate_metrics, Checkpoint, CsvSink, StopReason, TrainConfig, Trainer};
use reticula::FlowModel64;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "reticula", version, about = "GFlowNet sampling of building-block assemblies and analysis tools")]
struct Cli {
    /// Run seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps every internal worker pool.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; every file a command writes goes here.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a flow model.
    Train(TrainArgs),
    /// Sample a deduplicated candidate dataset from a checkpoint.
    Sample(SampleArgs),
    /// Compute AMD descriptors for a directory of P1 CIF files.
    Amd(AmdArgs),
    /// Univariate regression with repeated cross-validation.
    Regress(RegressArgs),
    /// Compare a trained sampler with uniform random sampling.
    Baseline(BaselineArgs),
    /// Dump exact state flows of an enumerable environment.
    Flows(FlowsArgs),
    /// Working capacity, selectivity and percentile rank from isotherm tables.
    Capture(CaptureArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Continue from `checkpoint.bin` in the output directory.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    max_episodes: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    stop_threshold: Option<f64>,
    #[arg(long)]
    stop_window: Option<u64>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(short, long)]
    n: u64,
    /// Also write the k best records to `top_k.csv`.
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Args, Debug)]
struct AmdArgs {
    #[arg(long)]
    cif_dir: PathBuf,
    #[arg(short, long, default_value_t = DEFAULT_AMD_K)]
    k: usize,
    /// Write the pairwise descriptor distance matrix.
    #[arg(long)]
    matrix: bool,
    /// Descriptor CSV of reference structures; writes novelty scores.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RegressArgs {
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, default_value = "x")]
    x_col: String,
    #[arg(long, default_value = "y")]
    y_col: String,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 50)]
    rounds: usize,
    /// Use repeated holdout with this test fraction instead of k-fold.
    #[arg(long)]
    holdout: Option<f64>,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(short, long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

#[derive(Args, Debug)]
struct FlowsArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_BOUND)]
    bound: u128,
}

#[derive(Args, Debug)]
struct CaptureArgs {
    #[arg(long)]
    isotherms: PathBuf,
    /// CSV with a `working_capacity` column used for percentile ranks.
    #[arg(long)]
    reference: Option<PathBuf>,
}

/// Failure split by exit code.
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Classify<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Validation(e.into()))
    }

    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Train(a) => cmd_train(&cli, a),
        Command::Sample(a) => cmd_sample(&cli, a),
        Command::Amd(a) => cmd_amd(&cli, a),
        Command::Regress(a) => cmd_regress(&cli, a),
        Command::Baseline(a) => cmd_baseline(&cli, a),
        Command::Flows(a) => cmd_flows(&cli, a),
        Command::Capture(a) => cmd_capture(&cli, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Output directory: `--out`, then the config's `out`, then `./reticula-out`.
fn out_dir(cli: &Cli, cfg: Option<&RunConfig>) -> Result<PathBuf, Failure> {
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from("reticula-out"));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating {}", dir.display()))
        .runtime()?;
    Ok(dir)
}

fn write_manifest(dir: &Path, name: &str, value: serde_json::Value) -> Outcome {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(&value).runtime()?;
    std::fs::write(&path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .runtime()
}

/// Loads and validates a run config, applying the global seed and worker caps.
fn load_run(cli: &Cli, path: &Path) -> Result<(RunConfig, AssemblyEnv, Scorer), Failure> {
    let mut cfg = RunConfig::load(path).invalid()?;
    if let Some(seed) = cli.seed.or(cfg.seed) {
        cfg.train.seed = seed;
    }
    cfg.seed = Some(cfg.train.seed);
    if let (Some(w), EvaluatorConfig::External(a)) = (cli.workers, &mut cfg.reward.evaluator) {
        a.workers = a.workers.min(w);
    }
    cfg.validate().invalid()?;
    let env = cfg.environment().invalid()?;
    let scorer = Scorer::new(cfg.reward.clone()).invalid()?;
    Ok((cfg, env, scorer))
}

fn load_checkpoint(path: &Path, env: &AssemblyEnv) -> Result<(Checkpoint, FlowModel64), Failure> {
    let ckpt = Checkpoint::load(path)
        .with_context(|| format!("loading {}", path.display()))
        .invalid()?;
    if ckpt.header.env_hash != env.content_hash() {
        return Err(Failure::Validation(anyhow!(
            "{}: checkpoint was trained on a different environment (hash {} vs {})",
            path.display(),
            ckpt.header.env_hash,
            env.content_hash()
        )));
    }
    let model = ckpt.model::<f64>().invalid()?;
    Ok((ckpt, model))
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Outcome {
    let (mut cfg, env, scorer) = load_run(cli, &a.config)?;
    let t = &mut cfg.train;
    if let Some(v) = a.max_episodes {
        t.max_episodes = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.checkpoint_every {
        t.checkpoint_every = v;
    }
    if let Some(v) = a.stop_threshold {
        t.stop_threshold = v;
    }
    if let Some(v) = a.stop_window {
        t.stop_window = v;
    }
    cfg.validate().invalid()?;
    let dir = out_dir(cli, Some(&cfg))?;
    let ckpt_path = dir.join("checkpoint.bin");
    let metrics_path = dir.join("metrics.csv");
    write_manifest(
        &dir,
        "manifest.json",
        json!({
            "command": "train",
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg,
            "seed": cfg.train.seed,
            "env_hash": env.content_hash(),
            "resume": a.resume,
        }),
    )?;

    let mut trainer = if a.resume {
        let ckpt = Checkpoint::load(&ckpt_path)
            .with_context(|| format!("loading {}", ckpt_path.display()))
            .invalid()?;
        let resumed = TrainConfig {
            max_episodes: ckpt.header.train.max_episodes,
            ..cfg.train.clone()
        };
        if ckpt.header.train != resumed {
            log::warn!(
                "training configuration differs from the checkpoint; continuing with the checkpoint's \
                 (only --max-episodes applies on resume)"
            );
        }
        let mut trainer = Trainer::resume(&ckpt, &env, &scorer).invalid()?;
        if let Some(max) = a.max_episodes {
            trainer.set_max_episodes(max).invalid()?;
        }
        truncate_metrics(&metrics_path, trainer.episode())
            .with_context(|| format!("truncating {}", metrics_path.display()))
            .runtime()?;
        log::info!("resuming at episode {}", trainer.episode());
        trainer
    } else {
        let mut rng = episode_rng(cfg.train.seed, u64::MAX);
        let model = FlowModel64::init(env.vocab_size(), cfg.model, &mut rng).invalid()?;
        Trainer::new(cfg.train.clone(), model, &env, &scorer).invalid()?
    };
    trainer.set_checkpoint_path(Some(ckpt_path.clone()));

    let file = OpenOptions::new()
        .create(true)
        .append(a.resume)
        .write(true)
        .truncate(!a.resume)
        .open(&metrics_path)
        .with_context(|| format!("opening {}", metrics_path.display()))
        .runtime()?;
    let mut sink = CsvSink::new(BufWriter::new(file), !a.resume).runtime()?;
    let outcome = trainer.run(&mut sink).context("training aborted").runtime()?;
    let reason = match outcome.reason {
        StopReason::Threshold => "stopping threshold reached",
        StopReason::MaxEpisodes => "maximum episodes reached",
        StopReason::Paused => "paused",
    };
    println!(
        "episodes={} reason=\"{reason}\" log_z={} windowed_loss={} best_reward={}",
        outcome.episodes,
        outcome.log_z,
        outcome.windowed_loss.map(|v| v.to_string()).unwrap_or_else(|| "NA".into()),
        outcome.best_reward
    );
    Ok(())
}

fn cmd_sample(cli: &Cli, a: &SampleArgs) -> Outcome {
    let (cfg, env, scorer) = load_run(cli, &a.config)?;
    let (ckpt, model) = load_checkpoint(&a.checkpoint, &env)?;
    let seed = cfg.train.seed;
    let dir = out_dir(cli, Some(&cfg))?;
    let checkpoint_sha256 = ckpt.hash().runtime()?;
    write_manifest(
        &dir,
        "manifest.json",
        json!({
            "command": "sample",
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg,
            "checkpoint": a.checkpoint,
            "checkpoint_sha256": checkpoint_sha256,
            "n": a.n,
            "seed": seed,
        }),
    )?;
    let records = generate(&model, &env, &scorer, a.n, seed).runtime()?;
    write_csv(&dir.join("dataset.csv"), &records).runtime()?;
    DatasetManifest {
        checkpoint_sha256,
        seed,
        n_samples: a.n,
        distinct: records.len(),
        env_hash: env.content_hash(),
    }
    .write(&dir.join("dataset.manifest.json"))
    .runtime()?;
    if let Some(k) = a.top_k {
        let best = top_k(&records, k).invalid()?;
        write_csv(&dir.join("top_k.csv"), &best).runtime()?;
    }
    let failed = records.iter().filter(|r| r.gsa.value().is_none()).count();
    println!(
        "samples={} distinct={} duplicates={} evaluation_failures={failed}",
        a.n,
        records.len(),
        a.n - records.len() as u64
    );
    Ok(())
}

fn cmd_amd(cli: &Cli, a: &AmdArgs) -> Outcome {
    if a.k == 0 {
        return Err(Failure::Validation(anyhow!("k must be >= 1")));
    }
    let entries = std::fs::read_dir(&a.cif_dir)
        .with_context(|| format!("reading {}", a.cif_dir.display()))
        .invalid()?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("cif")))
        .collect();
    files.sort();
    let reference = match &a.reference {
        Some(p) => Some(read_descriptor_csv::<f64>(p).invalid()?),
        None => None,
    };
    let dir = out_dir(cli, None)?;
    write_manifest(
        &dir,
        "manifest.json",
        json!({
            "command": "amd",
            "version": env!("CARGO_PKG_VERSION"),
            "cif_dir": a.cif_dir,
            "files": files,
            "k": a.k,
            "reference": a.reference,
        }),
    )?;
    use rayon::prelude::*;
    let results: Vec<(String, Result<Vec<f64>>)> = files
        .par_iter()
        .map(|p| {
            let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let r = read_cif::<f64>(p).and_then(|s| amd(&s, a.k)).map_err(anyhow::Error::from);
            (id, r)
        })
        .collect();
    let mut rows = Vec::new();
    let mut skipped = 0;
    for (id, r) in results {
        match r {
            Ok(v) => rows.push((id, v)),
            Err(e) => {
                skipped += 1;
                log::warn!("skipping {id}: {e:#}");
            }
        }
    }
    write_descriptor_amd_csv(&dir.join("amd.csv"), &rows, a.k)?;
    let ids: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
    let descs: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
    if a.matrix {
        let m = descriptor_distance_matrix(&descs).runtime()?;
        write_matrix_csv(&dir.join("distance_matrix.csv"), &ids, &m).runtime()?;
    }
    if let Some(refs) = reference {
        let ref_ids: Vec<String> = refs.iter().map(|r| r.0.clone()).collect();
        let ref_descs: Vec<Vec<f64>> = refs.into_iter().map(|r| r.1).collect();
        let scores = novelty_score(&descs, &ref_descs).invalid()?;
        write_novelty_csv(&dir.join("novelty.csv"), &ids, &ref_ids, &scores).runtime()?;
    }
    println!("structures={} skipped={skipped}", rows.len());
    Ok(())
}

/// Writes the header even when no structure parsed.
fn write_descriptor_amd_csv(path: &Path, rows: &[(String, Vec<f64>)], k: usize) -> Outcome {
    if rows.is_empty() {
        let mut header = vec!["id".to_string()];
        header.extend((1..=k).map(|j| format!("amd_{j}")));
        return std::fs::write(path, header.join(",") + "\n")
            .with_context(|| format!("writing {}", path.display()))
            .runtime();
    }
    write_descriptor_csv(path, rows).runtime()
}

fn cmd_regress(cli: &Cli, a: &RegressArgs) -> Outcome {
    let (x, y) = read_xy(&a.csv, &a.x_col, &a.y_col).invalid()?;
    let seed = cli.seed.unwrap_or(0);
    let mode = match a.holdout {
        Some(f) => CvMode::Holdout { test_fraction: f },
        None => CvMode::KFold { folds: a.folds },
    };
    let dir = out_dir(cli, None)?;
    write_manifest(
        &dir,
        "manifest.json",
        json!({
            "command": "regress",
            "version": env!("CARGO_PKG_VERSION"),
            "csv": a.csv,
            "x_col": a.x_col,
            "y_col": a.y_col,
            "mode": mode,
            "rounds": a.rounds,
            "seed": seed,
        }),
    )?;
    let mut report = fit_univariate(&x, &y).invalid()?;
    report.cross_validation = Some(cross_validate(&x, &y, mode, a.rounds, seed).invalid()?);
    let cv = report.cross_validation.as_ref().expect("set above");
    println!(
        "n={} slope={} intercept={} r2={} rmse={} spearman={}",
        report.n, report.slope, report.intercept, report.r2, report.rmse, report.spearman
    );
    println!(
        "cv evaluations={} test_r2={}+/-{} test_rmse={}+/-{} train_r2={}+/-{} train_rmse={}+/-{}",
        cv.evaluations,
        cv.test_r2_mean,
        cv.test_r2_std,
        cv.test_rmse_mean,
        cv.test_rmse_std,
        cv.train_r2_mean,
        cv.train_r2_std,
        cv.train_rmse_mean,
        cv.train_rmse_std
    );
    let text = serde_json::to_string_pretty(&report).runtime()?;
    let path = dir.join("regression.json");
    std::fs::write(&path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .runtime()
}

fn cmd_baseline(cli: &Cli, a: &BaselineArgs) -> Outcome {
    let (cfg, env, scorer) = load_run(cli, &a.config)?;
    let (ckpt, model) = load_checkpoint(&a.checkpoint, &env)?;
    let seed = cfg.train.seed;
    let dir = out_dir(cli, Some(&cfg))?;
    write_manifest(
        &dir,
        "manifest.json",
        json!({
            "command": "baseline",
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg,
            "checkpoint": a.checkpoint,
            "checkpoint_sha256": ckpt.hash().runtime()?,
            "n": a.n,
            "bins": a.bins,
            "seed": seed,
        }),
    )?;
    let report = baseline_comparison(&model, &env, &scorer, a.n, seed, a.bins).invalid()?;
    report.write_summary_csv(&dir.join("baseline_summary.csv")).runtime()?;
    report.write_histogram_csv(&dir.join("baseline_histogram.csv")).runtime()?;
    for s in [&report.trained, &report.uniform] {
        println!(
            "{} n={} mean_reward={} std_reward={} max_reward={} distinct={}",
            s.sampler, s.n, s.mean_reward, s.std_reward, s.max_reward, s.distinct
        );
    }
    Ok(())
}

fn cmd_flows(cli: &Cli, a: &FlowsArgs) -> Outcome {
    let (cfg, env, scorer) = load_run(cli, &a.config)?;
    let count = env.terminal_count();
    if count > a.bound {
        return Err(Failure::Validation(anyhow!(
            "environment has {count} terminals, more than the enumeration bound {}",
            a.bound
        )));
    }
    let dir = out_dir(cli, Some(&cfg))?;
    write_manifest(
        &dir,
        "manifest.json",
        json!({
            "command": "flows",
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg,
            "bound": a.bound.to_string(),
        }),
    )?;
    let flows = exact_flows(&env, &scorer, a.bound).runtime()?;
    let tokens = |p: &[usize]| -> String {
        p.iter()
            .map(|&t| env.vocab().blocks()[t].id.clone())
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut states: Vec<(&Vec<usize>, &f64)> = flows.flows.iter().collect();
    states.sort_by(|a, b| a.0.cmp(b.0));
    let path = dir.join("flows.csv");
    let write_err = |e: csv::Error| Failure::Runtime(anyhow!("writing {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(write_err)?;
    w.write_record(["prefix", "depth", "flow", "log_flow"]).map_err(write_err)?;
    for (p, f) in states {
        w.write_record([tokens(p), p.len().to_string(), f.to_string(), f.ln().to_string()])
            .map_err(write_err)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display())).runtime()?;
    let path = dir.join("terminal_probabilities.csv");
    let write_err = |e: csv::Error| Failure::Runtime(anyhow!("writing {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(write_err)?;
    w.write_record(["assembly_record", "reward", "probability"]).map_err(write_err)?;
    for ((s, r), p) in flows.terminals.iter().zip(flows.terminal_probabilities()) {
        let rec = env.record(s).runtime()?;
        w.write_record([rec.to_string(), r.to_string(), p.to_string()]).map_err(write_err)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display())).runtime()?;
    println!("terminals={} log_z={}", flows.terminals.len(), flows.log_z());
    Ok(())
}

fn cmd_capture(cli: &Cli, a: &CaptureArgs) -> Outcome {
    let rows = read_isotherms(&a.isotherms).invalid()?;
    let reference = match &a.reference {
        Some(p) => {
            let (wc, _) = read_xy(p, "working_capacity", "working_capacity").invalid()?;
            if wc.is_empty() {
                return Err(Failure::Validation(anyhow!("reference table is empty")));
            }
            Some(wc)
        }
        None => None,
    };
    let dir = out_dir(cli, None)?;
    write_manifest(
        &dir,
        "manifest.json",
        json!({
            "command": "capture",
            "version": env!("CARGO_PKG_VERSION"),
            "isotherms": a.isotherms,
            "reference": a.reference,
        }),
    )?;
    let out = capture_metrics(&rows, reference.as_deref());
    write_capture_csv(&dir.join("capture.csv"), &out).runtime()?;
    let suspect = out.iter().filter(|r| r.working_capacity.suspect).count();
    let undefined = out.iter().filter(|r| r.selectivity.is_none()).count();
    println!("materials={} negative_capacity={suspect} undefined_selectivity={undefined}", out.len());
    Ok(())
}
