//! Command-line front end: dataset generation, training, evaluation,
//! hyperparameter grid search, projection-layer inspection, and
//! condition-number sweeps. All artifacts are plain CSV/text.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/configuration error,
//! 3 numerical divergence.

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use vpnet::error::{Error, Result};
use vpnet::hermite::{condition_sweep, SampleGrid};
use vpnet::io::{
    load_checkpoint, load_dataset, load_dataset_with_classes, load_heartbeats,
    parse_config_file, save_checkpoint, save_dataset, LabeledDataset,
};
use vpnet::synth::{generate, save_metadata, SynthConfig};
use vpnet::train::{
    build_seeded_network, evaluate, grid_search, save_grid_csv, train, ArchSpec, GridSpace,
    TrainConfig, VpInit, DEFAULT_LEARNING_RATES,
};
use vpnet::vp::{coefficients, project, residual_r2};

#[derive(Parser)]
#[command(
    name = "vpnet",
    version,
    about = "Variable-projection networks: adaptive Hermite signal models with trainable projection layers",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic three-class shell dataset
    Generate(GenerateArgs),
    /// Train a model on labeled signal CSVs
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled dataset
    Evaluate(EvaluateArgs),
    /// Train every combination of a hyperparameter grid and rank the results
    Gridsearch(GridArgs),
    /// Report a trained projection layer's parameters, coefficients, and reconstructions
    Inspect(InspectArgs),
    /// Map the basis condition number over a translation/dilation range
    Condsweep(CondsweepArgs),
}

#[derive(clap::Args)]
struct GenerateArgs {
    /// Output directory for train.csv, test.csv, and meta.csv
    #[arg(long)]
    out: PathBuf,
    /// Configuration file with `key = value` lines (flags take precedence)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Samples generated per class and split [default: 5000]
    #[arg(long)]
    samples_per_class: Option<usize>,
    /// Signal length [default: 100]
    #[arg(long)]
    signal_len: Option<usize>,
    /// Number of generator coefficients [default: 5]
    #[arg(long)]
    n_gen: Option<usize>,
    /// Three shell radii, comma separated [default: 1,2,3]
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    /// Shell thickness [default: 0.2]
    #[arg(long)]
    thickness: Option<f64>,
    /// Standard deviation of the nuisance coefficients [default: 0.3]
    #[arg(long)]
    nuisance_std: Option<f64>,
    /// Mean translation [default: signal_len/2]
    #[arg(long)]
    tau_mean: Option<f64>,
    /// Translation jitter [default: signal_len/50]
    #[arg(long)]
    tau_std: Option<f64>,
    /// Mean dilation [default: 12/signal_len]
    #[arg(long)]
    lambda_mean: Option<f64>,
    /// Dilation jitter [default: 5% of the mean]
    #[arg(long)]
    lambda_std: Option<f64>,
    /// Generator seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Rescale every signal to unit energy, storing the scale in meta.csv
    #[arg(long)]
    unit_energy: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ArchKind {
    Vpnet,
    Fcnn,
    Cnn,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum InitKind {
    /// Construction defaults: interval center, interval-spanning width
    Default,
    /// Explicit --tau/--lambda values
    Fixed,
    /// Descend the mean projection residual on training signals first
    Pretrain,
}

#[derive(clap::Args)]
struct ModelArgs {
    /// Architecture [default: vpnet]
    #[arg(long, value_enum)]
    arch: Option<ArchKind>,
    /// Number of basis functions in the projection layer [default: 7]
    #[arg(long)]
    n: Option<usize>,
    /// Hidden layer width [default: 8]
    #[arg(long)]
    hidden: Option<usize>,
    /// Convolution channels (cnn) [default: 4]
    #[arg(long)]
    channels: Option<usize>,
    /// Convolution kernel width (cnn) [default: 5]
    #[arg(long)]
    kernel: Option<usize>,
    /// Max-pool window (cnn) [default: 4]
    #[arg(long)]
    pool: Option<usize>,
}

#[derive(clap::Args)]
struct TrainDataArgs {
    /// Training dataset CSV (`label,s0,...`)
    #[arg(long = "train")]
    train_path: PathBuf,
    /// Test dataset CSV
    #[arg(long = "test")]
    test_path: PathBuf,
    /// Treat the datasets as heartbeat windows of this many samples
    /// (labels restricted to 0/1)
    #[arg(long)]
    heartbeat_window: Option<usize>,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[command(flatten)]
    data: TrainDataArgs,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch report CSV path [default: <out>.report.csv]
    #[arg(long)]
    report: Option<PathBuf>,
    /// Configuration file with `key = value` lines (flags take precedence)
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// Learning rate [default: 1e-3]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Projection-residual penalty weight [default: 0.1]
    #[arg(long)]
    alpha: Option<f64>,
    /// Mini-batch size [default: 512]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training epochs [default: 100]
    #[arg(long)]
    epochs: Option<usize>,
    /// Seed for weight initialization and shuffling [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Projection-layer initialization [default: default]
    #[arg(long, value_enum)]
    init: Option<InitKind>,
    /// Translation for --init fixed
    #[arg(long)]
    tau: Option<f64>,
    /// Dilation for --init fixed
    #[arg(long)]
    lambda: Option<f64>,
    /// Descent iterations for --init pretrain [default: 200]
    #[arg(long)]
    pretrain_steps: Option<usize>,
    /// Descent step for --init pretrain, in basis widths [default: 0.5]
    #[arg(long)]
    pretrain_step: Option<f64>,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    /// Checkpoint produced by `train`
    #[arg(long)]
    model: PathBuf,
    /// Labeled dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Treat the dataset as heartbeat windows of this many samples
    #[arg(long)]
    heartbeat_window: Option<usize>,
}

#[derive(clap::Args)]
struct GridArgs {
    #[command(flatten)]
    data: TrainDataArgs,
    /// Ranked result table output path
    #[arg(long)]
    out: PathBuf,
    /// Configuration file with `key = value` lines (flags take precedence)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Architectures to search [default: vpnet]
    #[arg(long, value_enum, value_delimiter = ',')]
    archs: Option<Vec<ArchKind>>,
    /// Basis counts for vpnet entries [default: 7]
    #[arg(long, value_delimiter = ',')]
    n_values: Option<Vec<usize>>,
    /// Hidden widths [default: 8]
    #[arg(long, value_delimiter = ',')]
    hidden_sizes: Option<Vec<usize>>,
    /// Learning rates [default: 1e-4,3e-4,1e-3,3e-3,1e-2]
    #[arg(long, value_delimiter = ',')]
    learning_rates: Option<Vec<f64>>,
    /// Projection initializations [default: default]
    #[arg(long, value_enum, value_delimiter = ',')]
    inits: Option<Vec<InitKind>>,
    /// Translation for fixed initialization
    #[arg(long)]
    tau: Option<f64>,
    /// Dilation for fixed initialization
    #[arg(long)]
    lambda: Option<f64>,
    /// Descent iterations for pretrain initialization [default: 200]
    #[arg(long)]
    pretrain_steps: Option<usize>,
    /// Descent step for pretrain initialization [default: 0.5]
    #[arg(long)]
    pretrain_step: Option<f64>,
    /// Convolution channels for cnn entries [default: 4]
    #[arg(long)]
    channels: Option<usize>,
    /// Convolution kernel width for cnn entries [default: 5]
    #[arg(long)]
    kernel: Option<usize>,
    /// Max-pool window for cnn entries [default: 4]
    #[arg(long)]
    pool: Option<usize>,
    /// Projection-residual penalty weight [default: 0.1]
    #[arg(long)]
    alpha: Option<f64>,
    /// Mini-batch size [default: 512]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training epochs per combination [default: 100]
    #[arg(long)]
    epochs: Option<usize>,
    /// Seed shared by every combination [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Combinations trained concurrently [default: 1]
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(clap::Args)]
struct InspectArgs {
    /// Checkpoint produced by `train`
    #[arg(long)]
    model: PathBuf,
    /// Labeled dataset CSV
    #[arg(long)]
    data: PathBuf,
    /// Sample indices to inspect, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    indices: Vec<usize>,
    /// Reconstruction CSV output path
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct CondsweepArgs {
    /// Sweep CSV output path
    #[arg(long)]
    out: PathBuf,
    /// Signal length [default: 1000]
    #[arg(long)]
    signal_len: Option<usize>,
    /// Number of basis functions [default: 3]
    #[arg(long)]
    n: Option<usize>,
    /// Translation range as start:stop:count [default: 500:1100:25]
    #[arg(long, value_parser = parse_range)]
    tau_range: Option<RangeSpec>,
    /// Dilation range as start:stop:count [default: 0.012:0.05:25]
    #[arg(long, value_parser = parse_range)]
    lambda_range: Option<RangeSpec>,
}

#[derive(Clone, Debug)]
struct RangeSpec {
    start: f64,
    stop: f64,
    count: usize,
}

fn parse_range(s: &str) -> std::result::Result<RangeSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected start:stop:count, got '{s}'"));
    }
    let start: f64 = parts[0]
        .parse()
        .map_err(|_| format!("invalid range start '{}'", parts[0]))?;
    let stop: f64 = parts[1]
        .parse()
        .map_err(|_| format!("invalid range stop '{}'", parts[1]))?;
    let count: usize = parts[2]
        .parse()
        .map_err(|_| format!("invalid range count '{}'", parts[2]))?;
    if !start.is_finite() || !stop.is_finite() {
        return Err(format!("range endpoints must be finite, got '{s}'"));
    }
    if count == 0 {
        return Err("range count must be at least 1".to_string());
    }
    Ok(RangeSpec { start, stop, count })
}

fn linspace(range: &RangeSpec) -> Vec<f64> {
    if range.count == 1 {
        return vec![range.start];
    }
    let step = (range.stop - range.start) / (range.count - 1) as f64;
    (0..range.count)
        .map(|i| range.start + step * i as f64)
        .collect()
}

/// Typed access to a `key = value` configuration file; absent files behave
/// as empty.
struct ConfigMap {
    path: PathBuf,
    entries: Vec<(String, String)>,
}

impl ConfigMap {
    fn load(path: Option<&PathBuf>, allowed: &[&str]) -> Result<ConfigMap> {
        match path {
            Some(p) => Ok(ConfigMap {
                path: p.clone(),
                entries: parse_config_file(p, allowed)?,
            }),
            None => Ok(ConfigMap {
                path: PathBuf::new(),
                entries: Vec::new(),
            }),
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn value_error(&self, key: &str, value: &str) -> Error {
        Error::InvalidArgument(format!(
            "{}: invalid value '{value}' for key '{key}'",
            self.path.display()
        ))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| self.value_error(key, v)),
            None => Ok(None),
        }
    }

    fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(key) {
            Some(v) => v
                .split(',')
                .map(|item| {
                    item.trim()
                        .parse::<T>()
                        .map_err(|_| self.value_error(key, item))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
            None => Ok(None),
        }
    }
}

fn resolve<T>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

fn main() {
    env_logger::init();
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // clap renders help to stdout and errors to stderr on its own.
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Diverged { .. } | Error::NonFiniteGradient { .. } => 3,
                _ => 2,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Gridsearch(args) => cmd_gridsearch(args),
        Command::Inspect(args) => cmd_inspect(args),
        Command::Condsweep(args) => cmd_condsweep(args),
    }
}

const GENERATE_KEYS: &[&str] = &[
    "samples_per_class",
    "signal_len",
    "n_gen",
    "radii",
    "thickness",
    "nuisance_std",
    "tau_mean",
    "tau_std",
    "lambda_mean",
    "lambda_std",
    "seed",
    "unit_energy",
];

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let cfg_file = ConfigMap::load(args.config.as_ref(), GENERATE_KEYS)?;
    let m = resolve(args.signal_len, cfg_file.get("signal_len")?, 100);
    let mut cfg = SynthConfig::for_signal_length(m);
    cfg.samples_per_class = resolve(
        args.samples_per_class,
        cfg_file.get("samples_per_class")?,
        cfg.samples_per_class,
    );
    cfg.n_gen = resolve(args.n_gen, cfg_file.get("n_gen")?, cfg.n_gen);
    if let Some(radii) = args.radii.or(cfg_file.get_list("radii")?) {
        if radii.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "expected exactly 3 shell radii, got {}",
                radii.len()
            )));
        }
        cfg.shell_radii = [radii[0], radii[1], radii[2]];
    }
    cfg.shell_thickness = resolve(
        args.thickness,
        cfg_file.get("thickness")?,
        cfg.shell_thickness,
    );
    cfg.nuisance_std = resolve(
        args.nuisance_std,
        cfg_file.get("nuisance_std")?,
        cfg.nuisance_std,
    );
    cfg.tau_mean = resolve(args.tau_mean, cfg_file.get("tau_mean")?, cfg.tau_mean);
    cfg.tau_std = resolve(args.tau_std, cfg_file.get("tau_std")?, cfg.tau_std);
    cfg.lambda_mean = resolve(
        args.lambda_mean,
        cfg_file.get("lambda_mean")?,
        cfg.lambda_mean,
    );
    cfg.lambda_std = resolve(args.lambda_std, cfg_file.get("lambda_std")?, cfg.lambda_std);
    cfg.seed = resolve(args.seed, cfg_file.get("seed")?, cfg.seed);
    cfg.unit_energy = args.unit_energy || cfg_file.get("unit_energy")?.unwrap_or(false);

    // Validate before touching the filesystem so bad configs write nothing.
    cfg.validate()?;
    let (train_set, test_set) = generate(&cfg)?;

    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let train_path = args.out.join("train.csv");
    let test_path = args.out.join("test.csv");
    let meta_path = args.out.join("meta.csv");
    save_dataset(&train_set, &train_path)?;
    save_dataset(&test_set, &test_path)?;
    save_metadata(&train_set, &test_set, &meta_path)?;

    println!(
        "generated {} train + {} test samples of length {}",
        train_set.len(),
        test_set.len(),
        train_set.signal_len()
    );
    for class in 0..train_set.class_count() {
        let count = train_set.labels().iter().filter(|&&l| l == class).count();
        println!("  class {class}: {count} per split");
    }
    println!(
        "wrote {}, {}, {}",
        train_path.display(),
        test_path.display(),
        meta_path.display()
    );
    Ok(())
}

fn load_pair(data: &TrainDataArgs) -> Result<(LabeledDataset, LabeledDataset)> {
    let pair = match data.heartbeat_window {
        Some(window) => (
            load_heartbeats(&data.train_path, window)?,
            load_heartbeats(&data.test_path, window)?,
        ),
        None => {
            let train_set = load_dataset(&data.train_path)?;
            let test_set = load_dataset_with_classes(&data.test_path, train_set.class_count())?;
            (train_set, test_set)
        }
    };
    if pair.0.signal_len() != pair.1.signal_len() {
        return Err(Error::InvalidArgument(format!(
            "training signals have {} samples but test signals have {}",
            pair.0.signal_len(),
            pair.1.signal_len()
        )));
    }
    log::info!(
        "loaded {} training and {} test samples of length {} across {} classes",
        pair.0.len(),
        pair.1.len(),
        pair.0.signal_len(),
        pair.0.class_count()
    );
    Ok(pair)
}

struct ModelChoice {
    arch: ArchSpec,
    init: VpInit,
}

#[allow(clippy::too_many_arguments)]
fn resolve_model(
    model: &ModelArgs,
    cfg_file: &ConfigMap,
    init_kind: Option<InitKind>,
    tau: Option<f64>,
    lambda: Option<f64>,
    pretrain_steps: Option<usize>,
    pretrain_step: Option<f64>,
) -> Result<ModelChoice> {
    let arch_kind = match (model.arch, cfg_file.raw("arch")) {
        (Some(kind), _) => kind,
        (None, Some(name)) => {
            ArchKind::from_str(name, true).map_err(|_| cfg_file.value_error("arch", name))?
        }
        (None, None) => ArchKind::Vpnet,
    };
    let n = resolve(model.n, cfg_file.get("n")?, 7);
    let hidden = resolve(model.hidden, cfg_file.get("hidden")?, 8);
    let channels = resolve(model.channels, cfg_file.get("channels")?, 4);
    let kernel = resolve(model.kernel, cfg_file.get("kernel")?, 5);
    let pool = resolve(model.pool, cfg_file.get("pool")?, 4);
    let arch = match arch_kind {
        ArchKind::Vpnet => ArchSpec::VpNet { n, hidden },
        ArchKind::Fcnn => ArchSpec::Fcnn { hidden },
        ArchKind::Cnn => ArchSpec::Cnn {
            channels,
            kernel,
            pool,
            hidden,
        },
    };
    let init_kind = match (init_kind, cfg_file.raw("init")) {
        (Some(kind), _) => kind,
        (None, Some(name)) => {
            InitKind::from_str(name, true).map_err(|_| cfg_file.value_error("init", name))?
        }
        (None, None) => InitKind::Default,
    };
    let init = build_init(init_kind, tau, lambda, pretrain_steps, pretrain_step, cfg_file)?;
    Ok(ModelChoice { arch, init })
}

fn build_init(
    kind: InitKind,
    tau: Option<f64>,
    lambda: Option<f64>,
    pretrain_steps: Option<usize>,
    pretrain_step: Option<f64>,
    cfg_file: &ConfigMap,
) -> Result<VpInit> {
    Ok(match kind {
        InitKind::Default => VpInit::Default,
        InitKind::Fixed => {
            let tau = tau.or(cfg_file.get("tau")?).ok_or_else(|| {
                Error::InvalidArgument("fixed initialization needs --tau".into())
            })?;
            let lambda = lambda.or(cfg_file.get("lambda")?).ok_or_else(|| {
                Error::InvalidArgument("fixed initialization needs --lambda".into())
            })?;
            VpInit::Fixed { tau, lambda }
        }
        InitKind::Pretrain => VpInit::Pretrain {
            steps: resolve(pretrain_steps, cfg_file.get("pretrain_steps")?, 200),
            step_size: resolve(pretrain_step, cfg_file.get("pretrain_step")?, 0.5),
        },
    })
}

const TRAIN_KEYS: &[&str] = &[
    "arch",
    "n",
    "hidden",
    "channels",
    "kernel",
    "pool",
    "learning_rate",
    "alpha",
    "batch_size",
    "epochs",
    "seed",
    "init",
    "tau",
    "lambda",
    "pretrain_steps",
    "pretrain_step",
];

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg_file = ConfigMap::load(args.config.as_ref(), TRAIN_KEYS)?;
    let (train_set, test_set) = load_pair(&args.data)?;
    let choice = resolve_model(
        &args.model,
        &cfg_file,
        args.init,
        args.tau,
        args.lambda,
        args.pretrain_steps,
        args.pretrain_step,
    )?;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        learning_rate: resolve(
            args.learning_rate,
            cfg_file.get("learning_rate")?,
            defaults.learning_rate,
        ),
        vp_penalty_alpha: resolve(args.alpha, cfg_file.get("alpha")?, defaults.vp_penalty_alpha),
        batch_size: resolve(args.batch_size, cfg_file.get("batch_size")?, defaults.batch_size),
        epochs: resolve(args.epochs, cfg_file.get("epochs")?, defaults.epochs),
        seed: resolve(args.seed, cfg_file.get("seed")?, defaults.seed),
        adam: defaults.adam,
    };

    let mut network = build_seeded_network(&choice.arch, &choice.init, &train_set, config.seed)?;

    println!(
        "training {} ({} parameters) for {} epochs, lr {}, batch {}, alpha {}, seed {}",
        choice.arch.label(),
        network.param_count(),
        config.epochs,
        config.learning_rate,
        config.batch_size,
        config.vp_penalty_alpha,
        config.seed
    );
    let report = train(&mut network, &train_set, &test_set, &config)?;

    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| args.out.with_extension("report.csv"));
    report.write_csv(&report_path)?;
    println!("wrote per-epoch report to {}", report_path.display());

    if report.diverged {
        return Err(Error::Diverged {
            epoch: report.epochs_run,
            message: format!(
                "partial report covers {} finished epochs; no checkpoint written",
                report.epochs_run
            ),
        });
    }

    let snapshot = vec![
        ("arch".to_string(), choice.arch.label()),
        ("init".to_string(), choice.init.label()),
        ("learning_rate".to_string(), config.learning_rate.to_string()),
        ("alpha".to_string(), config.vp_penalty_alpha.to_string()),
        ("batch_size".to_string(), config.batch_size.to_string()),
        ("epochs".to_string(), config.epochs.to_string()),
        ("seed".to_string(), config.seed.to_string()),
    ];
    save_checkpoint(&network, &snapshot, &args.out)?;
    println!("wrote checkpoint to {}", args.out.display());

    if let Some(eval) = &report.final_eval {
        println!("final test metrics:\n{}", eval.summary_text());
    }
    if let Some((best, epoch)) = report.best_test_accuracy() {
        println!("best test accuracy {best:.4} at epoch {epoch}");
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let (network, snapshot) = load_checkpoint(&args.model)?;
    let dataset = match args.heartbeat_window {
        Some(window) => load_heartbeats(&args.data, window)?,
        None => load_dataset_with_classes(&args.data, network.output_len())?,
    };
    if !snapshot.is_empty() {
        println!("checkpoint settings:");
        for (k, v) in &snapshot {
            println!("  {k} = {v}");
        }
    }
    let report = evaluate(&network, &dataset)?;
    print!("{}", report.summary_text());
    Ok(())
}

const GRID_KEYS: &[&str] = &[
    "archs",
    "n_values",
    "hidden_sizes",
    "learning_rates",
    "inits",
    "tau",
    "lambda",
    "pretrain_steps",
    "pretrain_step",
    "channels",
    "kernel",
    "pool",
    "alpha",
    "batch_size",
    "epochs",
    "seed",
    "jobs",
];

fn cmd_gridsearch(args: GridArgs) -> Result<()> {
    let cfg_file = ConfigMap::load(args.config.as_ref(), GRID_KEYS)?;
    let (train_set, test_set) = load_pair(&args.data)?;

    let arch_kinds: Vec<ArchKind> = match (&args.archs, cfg_file.raw("archs")) {
        (Some(list), _) => list.clone(),
        (None, Some(raw)) => raw
            .split(',')
            .map(|name| {
                ArchKind::from_str(name.trim(), true)
                    .map_err(|_| cfg_file.value_error("archs", name))
            })
            .collect::<Result<_>>()?,
        (None, None) => vec![ArchKind::Vpnet],
    };
    let n_values = resolve(args.n_values, cfg_file.get_list("n_values")?, vec![7]);
    let hidden_sizes = resolve(
        args.hidden_sizes,
        cfg_file.get_list("hidden_sizes")?,
        vec![8],
    );
    let learning_rates = resolve(
        args.learning_rates,
        cfg_file.get_list("learning_rates")?,
        DEFAULT_LEARNING_RATES.to_vec(),
    );
    let channels = resolve(args.channels, cfg_file.get("channels")?, 4);
    let kernel = resolve(args.kernel, cfg_file.get("kernel")?, 5);
    let pool = resolve(args.pool, cfg_file.get("pool")?, 4);

    let init_kinds: Vec<InitKind> = match (&args.inits, cfg_file.raw("inits")) {
        (Some(list), _) => list.clone(),
        (None, Some(raw)) => raw
            .split(',')
            .map(|name| {
                InitKind::from_str(name.trim(), true)
                    .map_err(|_| cfg_file.value_error("inits", name))
            })
            .collect::<Result<_>>()?,
        (None, None) => vec![InitKind::Default],
    };
    let inits = init_kinds
        .into_iter()
        .map(|kind| {
            build_init(
                kind,
                args.tau,
                args.lambda,
                args.pretrain_steps,
                args.pretrain_step,
                &cfg_file,
            )
        })
        .collect::<Result<Vec<VpInit>>>()?;

    let mut archs = Vec::new();
    for kind in arch_kinds {
        match kind {
            ArchKind::Vpnet => {
                for &n in &n_values {
                    for &hidden in &hidden_sizes {
                        archs.push(ArchSpec::VpNet { n, hidden });
                    }
                }
            }
            ArchKind::Fcnn => {
                for &hidden in &hidden_sizes {
                    archs.push(ArchSpec::Fcnn { hidden });
                }
            }
            ArchKind::Cnn => {
                for &hidden in &hidden_sizes {
                    archs.push(ArchSpec::Cnn {
                        channels,
                        kernel,
                        pool,
                        hidden,
                    });
                }
            }
        }
    }

    let defaults = TrainConfig::default();
    let base = TrainConfig {
        learning_rate: defaults.learning_rate, // replaced per combination
        vp_penalty_alpha: resolve(args.alpha, cfg_file.get("alpha")?, defaults.vp_penalty_alpha),
        batch_size: resolve(args.batch_size, cfg_file.get("batch_size")?, defaults.batch_size),
        epochs: resolve(args.epochs, cfg_file.get("epochs")?, defaults.epochs),
        seed: resolve(args.seed, cfg_file.get("seed")?, defaults.seed),
        adam: defaults.adam,
    };
    let jobs = resolve(args.jobs, cfg_file.get("jobs")?, 1);

    let space = GridSpace {
        archs,
        inits,
        learning_rates,
    };
    let rows = grid_search(&space, &train_set, &test_set, &base, jobs)?;
    save_grid_csv(&rows, &args.out)?;
    println!(
        "ranked {} combinations; wrote table to {}",
        rows.len(),
        args.out.display()
    );
    println!("rank  best_acc  params  lr        arch");
    for (i, row) in rows.iter().take(5).enumerate() {
        println!(
            "{:>4}  {:>8.4}  {:>6}  {:<8}  {} [{}]",
            i + 1,
            row.best_test_accuracy,
            row.param_count,
            row.learning_rate,
            row.arch,
            row.init
        );
    }
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<()> {
    let (network, _) = load_checkpoint(&args.model)?;
    let dataset = load_dataset_with_classes(&args.data, network.output_len())?;
    let vp_layers = network.vp_layers();
    let &first_vp = vp_layers.first().ok_or_else(|| {
        Error::InvalidArgument("the checkpointed network has no projection layer".into())
    })?;
    for &i in &args.indices {
        if i >= dataset.len() {
            return Err(Error::InvalidArgument(format!(
                "sample index {i} out of range for {} samples",
                dataset.len()
            )));
        }
    }

    let caches = network.prepare()?;
    let cache = network
        .vp_cache(&caches, first_vp)
        .expect("projection layer has a cache");
    println!(
        "projection layer {}: τ = {:.6}, λ = {:.6}",
        first_vp,
        cache.basis.params.tau,
        cache.basis.params.lambda
    );

    let file = std::fs::File::create(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut w = std::io::BufWriter::new(file);
    use std::io::Write as _;
    let m = cache.bundle.nrows();
    let header: Vec<String> = std::iter::once("row".to_string())
        .chain((0..m).map(|j| format!("v{j}")))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(|e| Error::io(&args.out, e))?;

    for &i in &args.indices {
        let trace = network.forward(&caches, dataset.signal(i))?;
        let x = &trace.activations[first_vp];
        let c = coefficients(x, &cache.bundle)?;
        let recon = project(x, &cache.bundle)?;
        let r2 = residual_r2(x, &cache.bundle)?;
        let norm2 = x.norm_squared();
        let magnitudes: Vec<String> = c.iter().map(|v| format!("{:.4}", v.abs())).collect();
        println!(
            "sample {i} (class {}): r2/|x|^2 = {:.6}, |c| = [{}]",
            dataset.label(i),
            if norm2 > 0.0 { r2 / norm2 } else { f64::NAN },
            magnitudes.join(", ")
        );
        for (tag, values) in [("original", x), ("reconstruction", &recon)] {
            let mut line = format!("{i}:{tag}");
            for v in values.iter() {
                let _ = write!(line, ",{v:.16e}");
            }
            writeln!(w, "{line}").map_err(|e| Error::io(&args.out, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&args.out, e))?;
    println!("wrote reconstructions to {}", args.out.display());
    Ok(())
}

fn cmd_condsweep(args: CondsweepArgs) -> Result<()> {
    let m = args.signal_len.unwrap_or(1000);
    let n = args.n.unwrap_or(3);
    let tau_range = args.tau_range.unwrap_or(RangeSpec {
        start: 500.0,
        stop: 1100.0,
        count: 25,
    });
    let lambda_range = args.lambda_range.unwrap_or(RangeSpec {
        start: 0.012,
        stop: 0.05,
        count: 25,
    });
    let grid = SampleGrid::unit(m)?;
    let rows = condition_sweep(&grid, n, &linspace(&tau_range), &linspace(&lambda_range))?;

    let file = std::fs::File::create(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut w = std::io::BufWriter::new(file);
    use std::io::Write as _;
    writeln!(w, "tau,lambda,cond").map_err(|e| Error::io(&args.out, e))?;
    let mut finite_max = f64::NEG_INFINITY;
    let mut finite_min = f64::INFINITY;
    let mut infinite = 0usize;
    for p in &rows {
        writeln!(w, "{:.9e},{:.9e},{:.9e}", p.tau, p.lambda, p.cond)
            .map_err(|e| Error::io(&args.out, e))?;
        if p.cond.is_finite() {
            finite_max = finite_max.max(p.cond);
            finite_min = finite_min.min(p.cond);
        } else {
            infinite += 1;
        }
    }
    w.flush().map_err(|e| Error::io(&args.out, e))?;
    println!(
        "swept {} points on [0, {}] with {} basis functions",
        rows.len(),
        m - 1,
        n
    );
    if finite_min.is_finite() {
        println!("condition numbers span [{finite_min:.6}, {finite_max:.6}]");
    }
    if infinite > 0 {
        println!("{infinite} points are rank deficient (infinite condition number)");
    }
    println!("wrote sweep to {}", args.out.display());
    Ok(())
}
