use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{error::ErrorKind, Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};

use nskge::bench::{compare_epoch_time, BenchError};
use nskge::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
use nskge::data::{load_dataset, Dataset};
use nskge::eval::{evaluate, EvalError, MetricsReport, RankMode};
use nskge::sampled::{SampledTrainer, SamplerConfig};
use nskge::train::{EpochRecord, NsTrainer, TrainConfig, TrainError, TrainHistory};
use nskge::verify::{run_verify, Scale};
use nskge::{AdjacencyIndex, ModelKind};

const DATA_ROOT_ENV: &str = "KGE_DATA_ROOT";
const HISTORY_FILE: &str = "history.csv";
const CONFIG_FILE: &str = "config.json";

#[derive(Parser, Debug)]
#[command(name = "nskge", version, about = "Non-sampling knowledge graph embedding")]
struct Cli {
    /// Worker threads for parallel sections (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Sequential reductions everywhere so runs are bit-reproducible.
    #[arg(
        long,
        global = true,
        default_value_t = true,
        num_args = 0..=1,
        default_missing_value = "true",
        action = clap::ArgAction::Set
    )]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoint, history and config to --out.
    Train(TrainArgs),
    /// Rank the test split with a trained checkpoint.
    Eval(EvalArgs),
    /// Check the factorised loss and gradients against brute force.
    Verify(VerifyArgs),
    /// Time non-sampling against sampled epochs for all four models.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Model {
    Distmult,
    Simple,
    Complex,
    Transe,
}

impl From<Model> for ModelKind {
    fn from(m: Model) -> Self {
        match m {
            Model::Distmult => ModelKind::DistMult,
            Model::Simple => ModelKind::SimplE,
            Model::Complex => ModelKind::ComplEx,
            Model::Transe => ModelKind::TransE,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Ns,
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    Raw,
    Filtered,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ScaleArg {
    Tiny,
    Small,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory in OpenKE layout; relative names are also looked up under $KGE_DATA_ROOT.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Model::Distmult)]
    model: Model,
    #[arg(long, value_enum, default_value_t = Mode::Ns)]
    mode: Mode,
    #[arg(long, default_value_t = 200)]
    dim: usize,
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    lr_decay: f64,
    #[arg(long, default_value_t = 1.0)]
    c_pos: f64,
    #[arg(long, default_value_t = 1e-3)]
    c_neg: f64,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    /// Negatives per positive (sampled mode only, default 25).
    #[arg(long)]
    neg_k: Option<usize>,
    /// Positives per batch (sampled mode only, default 4000).
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalMode::Raw)]
    mode: EvalMode,
    /// Metrics JSON destination; printed to stdout as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = ScaleArg::Tiny)]
    scale: ScaleArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Timed epochs per model and mode, after one warm-up epoch.
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 25)]
    neg_k: usize,
    #[arg(long, default_value_t = 4000)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report destination; the text table goes next to it with a .txt extension.
    #[arg(long)]
    out: PathBuf,
}

/// A failed command, carrying its exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Data(m) | Self::Numeric(m) => m,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> Failure {
    Failure::Data(e.to_string())
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => Self::Usage(e.to_string()),
            TrainError::Data(_) | TrainError::Model(_) => Self::Data(e.to_string()),
            TrainError::Diverged { .. } | TrainError::Linalg(_) => Self::Numeric(e.to_string()),
        }
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Train(t) => t.into(),
            BenchError::Mismatch { .. } => Self::Numeric(e.to_string()),
            _ => Self::Usage(e.to_string()),
        }
    }
}

fn resolve_data(arg: &Path) -> PathBuf {
    if arg.is_relative() && !arg.exists() {
        if let Some(root) = std::env::var_os(DATA_ROOT_ENV) {
            let candidate = Path::new(&root).join(arg);
            if candidate.exists() {
                return candidate;
            }
        }
    }
    arg.to_path_buf()
}

fn dataset_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn load(arg: &Path) -> Result<(PathBuf, Dataset), Failure> {
    let dir = resolve_data(arg);
    let ds = load_dataset(&dir).map_err(data_err)?;
    info!(
        "loaded {}: |E|={} |R|={} train={} valid={} test={}",
        dir.display(),
        ds.entity_count,
        ds.relation_count,
        ds.train.len(),
        ds.valid.len(),
        ds.test.len()
    );
    Ok((dir, ds))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::Data(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

/// Everything needed to repeat a training run.
#[derive(Serialize)]
struct RunSettings {
    version: &'static str,
    data: PathBuf,
    model: Model,
    mode: Mode,
    dim: usize,
    epochs: usize,
    lr: f64,
    lr_decay: f64,
    c_pos: f64,
    c_neg: f64,
    l2: f64,
    neg_k: Option<usize>,
    batch: Option<usize>,
    seed: u64,
    deterministic: bool,
    threads: Option<usize>,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    #[serde(flatten)]
    settings: &'a RunSettings,
    config_hash: String,
}

fn config_hash(settings: &RunSettings) -> String {
    let bytes = serde_json::to_vec(settings).expect("settings serialise");
    hex::encode(Sha256::digest(bytes))
}

fn run_train(args: TrainArgs, deterministic: bool, threads: Option<usize>) -> Result<(), Failure> {
    if args.mode == Mode::Ns {
        if args.neg_k.is_some() {
            return Err(Failure::Usage("--neg-k is only valid with --mode sampled".into()));
        }
        if args.batch.is_some() {
            return Err(Failure::Usage("--batch is only valid with --mode sampled".into()));
        }
    }
    let sampler = SamplerConfig {
        negatives_per_positive: args.neg_k.unwrap_or(SamplerConfig::default().negatives_per_positive),
        batch_size: args.batch.unwrap_or(SamplerConfig::default().batch_size),
    };
    let config = TrainConfig {
        kind: args.model.into(),
        dim: args.dim,
        epochs: args.epochs,
        lr: args.lr,
        lr_decay: args.lr_decay,
        c_pos: args.c_pos,
        c_neg: args.c_neg,
        l2: args.l2,
        seed: args.seed,
        deterministic,
        ..TrainConfig::default()
    };
    config.validate()?;
    if args.mode == Mode::Sampled {
        sampler.validate()?;
    }
    let settings = RunSettings {
        version: env!("CARGO_PKG_VERSION"),
        data: args.data.clone(),
        model: args.model,
        mode: args.mode,
        dim: args.dim,
        epochs: args.epochs,
        lr: args.lr,
        lr_decay: args.lr_decay,
        c_pos: args.c_pos,
        c_neg: args.c_neg,
        l2: args.l2,
        neg_k: (args.mode == Mode::Sampled).then_some(sampler.negatives_per_positive),
        batch: (args.mode == Mode::Sampled).then_some(sampler.batch_size),
        seed: args.seed,
        deterministic,
        threads,
    };
    let hash = config_hash(&settings);
    let (_, ds) = load(&args.data)?;

    let record = RunRecord {
        settings: &settings,
        config_hash: hash.clone(),
    };
    write_file(
        &args.out.join(CONFIG_FILE),
        serde_json::to_string_pretty(&record).expect("record serialises"),
    )?;

    let every = (config.epochs / 20).max(1);
    let log_epoch = |r: &EpochRecord| {
        if r.epoch % every == 0 || r.epoch == 1 || r.epoch == config.epochs {
            info!(
                "epoch {}/{} loss {:.6e} (lp {:.4e}, la {:.4e}) {:.3}s",
                r.epoch, config.epochs, r.loss, r.lp, r.la, r.seconds
            );
        }
    };
    let history_path = args.out.join(HISTORY_FILE);
    let outcome: Result<(nskge::ParameterSet, TrainHistory), TrainError> = match args.mode {
        Mode::Ns => {
            let mut trainer = NsTrainer::new(&config, &ds)?;
            (|| {
                for _ in 0..config.epochs {
                    log_epoch(trainer.step()?);
                }
                Ok(())
            })()
            .map(|()| trainer.finish())
        }
        Mode::Sampled => {
            let mut trainer = SampledTrainer::new(&config, &sampler, &ds)?;
            (|| {
                for _ in 0..config.epochs {
                    log_epoch(trainer.step()?);
                }
                Ok(())
            })()
            .map(|()| trainer.finish())
        }
    };
    let (params, history) = match outcome {
        Ok(done) => done,
        Err(e) => {
            if let TrainError::Diverged { history, .. } = &e {
                write_file(&history_path, history.to_csv())?;
            }
            return Err(e.into());
        }
    };
    write_file(&history_path, history.to_csv())?;
    save_checkpoint(&args.out, &params, args.seed, Some(&hash))?;
    info!("wrote checkpoint, {HISTORY_FILE} and {CONFIG_FILE} to {}", args.out.display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<(), Failure> {
    let (manifest, params) = load_checkpoint(&args.checkpoint)?;
    let (dir, ds) = load(&args.data)?;
    manifest.check_dataset(ds.entity_count, ds.relation_count)?;
    let mode = match args.mode {
        EvalMode::Raw => RankMode::Raw,
        EvalMode::Filtered => RankMode::Filtered,
    };
    let filter = (mode == RankMode::Filtered).then(|| AdjacencyIndex::build(ds.all_known()));
    let metrics = evaluate(&params, &ds.test, mode, filter.as_ref())?;
    let report = MetricsReport::new(
        manifest.kind,
        dataset_name(&dir),
        mode,
        &metrics,
        manifest.seed,
        manifest.config_hash.clone().unwrap_or_default(),
    );
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    println!("{json}");
    if let Some(out) = &args.out {
        write_file(out, json)?;
    }
    Ok(())
}

fn run_verify_cmd(args: VerifyArgs) -> Result<(), Failure> {
    let scale = match args.scale {
        ScaleArg::Tiny => Scale::Tiny,
        ScaleArg::Small => Scale::Small,
    };
    let report = run_verify(scale, args.seed);
    for r in &report.results {
        println!("{r}");
    }
    if report.all_passed() {
        return Ok(());
    }
    let failed: Vec<String> = report
        .failures()
        .map(|r| format!("{} {} (error {:.3e})", r.kind, r.property, r.error))
        .collect();
    Err(Failure::Numeric(format!("verify failed: {}", failed.join("; "))))
}

fn run_bench(args: BenchArgs, deterministic: bool) -> Result<(), Failure> {
    let (dir, ds) = load(&args.data)?;
    let base = TrainConfig {
        dim: args.dim,
        seed: args.seed,
        deterministic,
        ..TrainConfig::default()
    };
    let sampler = SamplerConfig {
        negatives_per_positive: args.neg_k,
        batch_size: args.batch,
    };
    let cmp = compare_epoch_time(&dataset_name(&dir), &ds, &ModelKind::ALL, &base, &sampler, args.epochs)?;
    let table = cmp.to_table();
    print!("{table}");
    write_file(&args.out, serde_json::to_string_pretty(&cmp).expect("report serialises"))?;
    write_file(&args.out.with_extension("txt"), table)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot set thread count: {e}")))?;
    }
    match cli.command {
        Command::Train(a) => run_train(a, cli.deterministic, cli.threads),
        Command::Eval(a) => run_eval(a),
        Command::Verify(a) => run_verify_cmd(a),
        Command::Bench(a) => run_bench(a, cli.deterministic),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
