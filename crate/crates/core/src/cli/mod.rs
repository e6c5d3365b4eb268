//! Command-line front end: `validate`, `gendata`, `train`, `bench`, `infer`
//! and `capacity`.
//!
//! Exit codes are 0 on success, 2 for bad input (unreadable or invalid
//! files, bad flags, case mismatch) and 3 for runtime failures.

mod bench;
mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{self, CapacityQuery, LipschitzOptions};
use crate::dataset::{self, Dataset, GenerateOptions, SamplerConfig};
use crate::grid_model::{load_case, GridCase, Network};
use crate::mlp::{self, MlpModel, TrainingConfig};
use crate::pipeline::{self, InferOptions, KnnMetric, KnnModel};
use crate::{Error, Result};

pub use bench::{
    run_bench, Aggregates, BenchOptions, EvalSplit, BenchReport, InstanceRecord, Predictor, PredictorReport, CSV_HEADER,
    CSV_HEADER_UNTIMED,
};
pub use config::{BranchLimit, FileConfig, Overlay};

#[derive(Debug, Parser)]
#[command(name = "scopf", version, about = "Learned dispatch for security-constrained DC optimal power flow")]
pub struct Cli {
    /// TOML or JSON file with default values for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and validate a case, then list its contingencies.
    Validate(CaseArgs),
    /// Sample loads, solve the oracle and write a dataset.
    Gendata(GendataArgs),
    /// Train a network on a dataset.
    Train(TrainArgs),
    /// Compare predictors against the oracle on the test split.
    Bench(BenchArgs),
    /// Run a trained network on one or more load vectors.
    Infer(InferArgs),
    /// Network size needed for a target worst-case error.
    Capacity(CapacityArgs),
}

#[derive(Debug, Args)]
pub struct CaseArgs {
    /// Case file, MATPOWER (.m) or JSON.
    #[arg(long)]
    pub case: PathBuf,
    /// Scenario overlay (TOML) applied to the case.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GendataArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Load range as fractions of the default load, e.g. `0.9,1.1`.
    #[arg(long)]
    pub range: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Training samples per test sample.
    #[arg(long, default_value_t = 10)]
    pub train_per_test: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Hidden widths, e.g. `32/16/8`. Defaults by case size.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub w1: Option<f64>,
    #[arg(long)]
    pub w2: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch loss CSV. Defaults to the model path with `.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Nearest-neighbor baseline, `knn:K`.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Distance used by the baseline.
    #[arg(long, value_enum, default_value = "raw")]
    pub knn_metric: MetricArg,
    /// Report the raw prediction; never project.
    #[arg(long)]
    pub no_projection: bool,
    /// Samples to evaluate.
    #[arg(long, value_enum, default_value = "test")]
    pub split: EvalSplit,
    /// Run instances one after another instead of on the thread pool.
    #[arg(long)]
    pub sequential: bool,
    /// Report JSON. Per-instance CSVs are written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum MetricArg {
    Raw,
    Normalized,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub case: CaseArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// JSON file with one load vector (MW per bus) or an array of them.
    /// Defaults to the case loads.
    #[arg(long)]
    pub loads: Option<PathBuf>,
    #[arg(long)]
    pub no_projection: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CapacityArgs {
    /// Lipschitz constant of the load to generation mapping.
    #[arg(long)]
    pub lipschitz: Option<f64>,
    /// Diameter of the load domain.
    #[arg(long)]
    pub diameter: Option<f64>,
    /// Target worst-case error.
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 10)]
    pub max_depth: u32,
    /// Estimate the Lipschitz constant (and diameter) from a dataset.
    #[arg(long)]
    pub from_dataset: Option<PathBuf>,
    /// Case used for the diameter with `--from-dataset`.
    #[arg(long)]
    pub case: Option<PathBuf>,
    /// Pair budget for the Lipschitz estimate.
    #[arg(long, default_value_t = 1_000_000)]
    pub pairs: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> u8 {
    if e.is_input_error() {
        2
    } else {
        3
    }
}

fn pick<T>(cli: Option<T>, file: Option<T>, default: T) -> T {
    cli.or(file).unwrap_or(default)
}

fn input(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub fn parse_range(s: &str) -> Result<[f64; 2]> {
    let parts: Vec<&str> = s.split([',', ':']).map(str::trim).collect();
    let bad = || input(format!("range {s:?} must look like 0.9,1.1"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let lo = parts[0].parse().map_err(|_| bad())?;
    let hi = parts[1].parse().map_err(|_| bad())?;
    Ok([lo, hi])
}

/// `knn:K` to `K`.
pub fn parse_baseline(s: &str) -> Result<usize> {
    s.strip_prefix("knn:")
        .and_then(|k| k.parse().ok())
        .ok_or_else(|| input(format!("baseline {s:?} must look like knn:50")))
}

struct Loaded {
    case: GridCase,
    overlay: Option<Overlay>,
}

fn load_with_overlay(args: &CaseArgs) -> Result<Loaded> {
    let case = load_case(&args.case)?;
    match &args.overlay {
        Some(p) => {
            let ov = Overlay::load(p)?;
            Ok(Loaded {
                case: ov.apply(&case)?,
                overlay: Some(ov),
            })
        }
        None => Ok(Loaded { case, overlay: None }),
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn wr(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<()> {
    out.write_fmt(text).map_err(|e| Error::io("<stdout>", e))
}

/// Executes one parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Validate(a) => cmd_validate(&a, out),
        Command::Gendata(a) => cmd_gendata(&a, &file, out),
        Command::Train(a) => cmd_train(&a, &file, out),
        Command::Bench(a) => cmd_bench(&a, &file, out),
        Command::Infer(a) => cmd_infer(&a, &file, out),
        Command::Capacity(a) => cmd_capacity(&a, &file, out),
    }
}

fn cmd_validate(a: &CaseArgs, out: &mut dyn Write) -> Result<()> {
    let Loaded { case, .. } = load_with_overlay(a)?;
    let net = Network::new(case)?;
    let c = &net.case;
    wr(out, format_args!("# Buses {}\n", c.n_buses()))?;
    wr(out, format_args!("# Generators {}\n", c.n_generators()))?;
    wr(out, format_args!("# Loads {}\n", c.load_buses().len()))?;
    wr(out, format_args!("# Branches {}\n", c.branches.len()))?;
    wr(out, format_args!("# Contingencies {}\n", net.contingencies.n_outages()))?;
    wr(
        out,
        format_args!("# Cases {} (intact network included)\n", net.contingencies.len()),
    )?;
    wr(
        out,
        format_args!("# Variables {}\n", c.n_generators() + c.n_buses() * net.contingencies.len()),
    )?;
    wr(out, format_args!("# Skipped outages {}\n", net.contingencies.skipped.len()))?;
    for s in &net.contingencies.skipped {
        let br = &c.branches[s.branch];
        wr(
            out,
            format_args!(
                "  branch {} ({}-{}): {}\n",
                s.branch, c.buses[br.from].id, c.buses[br.to].id, s.reason
            ),
        )?;
    }
    wr(out, format_args!("# Case hash {}\n", c.content_hash()))
}

fn cmd_gendata(a: &GendataArgs, file: &FileConfig, out: &mut dyn Write) -> Result<()> {
    let Loaded { case, overlay } = load_with_overlay(&a.case)?;
    let cli_range = a.range.as_deref().map(parse_range).transpose()?;
    let [lo, hi] = pick(
        cli_range,
        file.range.or(overlay.as_ref().and_then(|o| o.range)),
        [0.9, 1.1],
    );
    let cfg = SamplerConfig {
        range_low: lo,
        range_high: hi,
        n_samples: pick(a.samples, file.samples, SamplerConfig::default().n_samples),
        seed: pick(a.seed, file.seed, 0),
    };
    let path: PathBuf = pick(a.out.clone(), file.out.clone().map(PathBuf::from), PathBuf::from("dataset.jsonl"));
    let net = Network::new(case)?;
    let ds = dataset::generate(
        &net,
        &cfg,
        &GenerateOptions {
            train_per_test: a.train_per_test,
            ..GenerateOptions::default()
        },
    )?;
    ds.save(&path)?;
    wr(
        out,
        format_args!(
            "wrote {} samples ({} train, {} test, {} dropped) to {}\n",
            ds.samples.len(),
            ds.header.split.train.len(),
            ds.header.split.test.len(),
            ds.header.dropped.len(),
            path.display()
        ),
    )
}

fn cmd_train(a: &TrainArgs, file: &FileConfig, out: &mut dyn Write) -> Result<()> {
    let Loaded { case, .. } = load_with_overlay(&a.case)?;
    let d = TrainingConfig::default();
    let cfg = TrainingConfig {
        w1: pick(a.w1, file.w1, d.w1),
        w2: pick(a.w2, file.w2, d.w2),
        epochs: pick(a.epochs, file.epochs, d.epochs),
        batch_size: pick(a.batch, file.batch, d.batch_size),
        learning_rate: pick(a.lr, file.lr, d.learning_rate),
        momentum: pick(a.momentum, file.momentum, d.momentum),
        seed: pick(a.seed, file.seed, d.seed),
    };
    let hidden = match a.arch.as_deref().or(file.arch.as_deref()) {
        Some(s) => mlp::parse_architecture(s)?,
        None => mlp::default_architecture(case.n_buses()),
    };
    let path = pick(a.out.clone(), file.out.clone().map(PathBuf::from), PathBuf::from("model.json"));
    let net = Network::new(case)?;
    let ds = Dataset::load(&a.dataset)?;
    let trained = mlp::train(&net, &ds, &hidden, &cfg)?;
    trained.model.save(&path)?;
    let log_path = a.log.clone().unwrap_or_else(|| sibling(&path, ".log.csv"));
    let mut f = create(&log_path)?;
    mlp::write_training_log(&trained.log, &mut f)
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(&log_path, e))?;
    if let Some(last) = trained.log.last() {
        wr(
            out,
            format_args!(
                "arch {}  epoch {}  L_PG {:.3e}  L_pen {:.3e}  total {:.3e}\n",
                mlp::format_architecture(&hidden),
                last.epoch,
                last.l_pg,
                last.l_pen,
                last.l_total
            ),
        )?;
    }
    wr(out, format_args!("wrote model to {}\n", path.display()))
}

fn cmd_bench(a: &BenchArgs, file: &FileConfig, out: &mut dyn Write) -> Result<()> {
    let Loaded { case, .. } = load_with_overlay(&a.case)?;
    let net = Network::new(case)?;
    let ds = Dataset::load(&a.dataset)?;
    let model = a.model.as_ref().map(MlpModel::load).transpose()?;
    let baseline = match a.baseline.as_deref().or(file.baseline.as_deref()) {
        Some(s) => {
            let metric = match a.knn_metric {
                MetricArg::Raw => KnnMetric::Raw,
                MetricArg::Normalized => KnnMetric::Normalized,
            };
            Some(KnnModel::fit(&ds, parse_baseline(s)?, metric)?)
        }
        None => None,
    };
    let mut predictors = Vec::new();
    if let Some(m) = &model {
        predictors.push(Predictor::Network(m));
    }
    if let Some(k) = &baseline {
        predictors.push(Predictor::Knn(k));
    }
    if predictors.is_empty() {
        return Err(input("bench needs --model, --baseline or both"));
    }
    let no_projection = a.no_projection || file.no_projection.unwrap_or(false);
    let opts = BenchOptions {
        infer: InferOptions {
            project: !no_projection,
            ..InferOptions::default()
        },
        parallel: !a.sequential,
        split: a.split,
        ..BenchOptions::default()
    };
    let report = run_bench(&net, &ds, &predictors, &opts)?;
    wr(out, format_args!("{}", report.summary()))?;
    if let Some(path) = a.out.clone().or(file.out.clone().map(PathBuf::from)) {
        let json = serde_json::to_string_pretty(&report)?;
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        for (suffix, timing) in [(".csv", true), (".rows.csv", false)] {
            let p = sibling(&path, suffix);
            let mut f = create(&p)?;
            report
                .write_csv(&mut f, timing)
                .and_then(|_| f.flush())
                .map_err(|e| Error::io(&p, e))?;
        }
        wr(out, format_args!("wrote report to {}\n", path.display()))?;
    }
    Ok(())
}

fn read_loads(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    #[derive(serde::Deserialize)]
    #[serde(untagged)]
    enum Loads {
        One(Vec<f64>),
        Many(Vec<Vec<f64>>),
    }
    match serde_json::from_str(&text)? {
        Loads::One(v) => Ok(vec![v]),
        Loads::Many(v) => Ok(v),
    }
}

fn cmd_infer(a: &InferArgs, file: &FileConfig, out: &mut dyn Write) -> Result<()> {
    let Loaded { case, .. } = load_with_overlay(&a.case)?;
    let model = MlpModel::load(&a.model)?;
    model.check_case(&case)?;
    let net = Network::new(case)?;
    let loads = match &a.loads {
        Some(p) => read_loads(p)?,
        None => vec![net.case.default_loads_mw()],
    };
    let opts = InferOptions {
        project: !(a.no_projection || file.no_projection.unwrap_or(false)),
        ..InferOptions::default()
    };
    let results = loads
        .iter()
        .map(|p_d| pipeline::infer(&model, &net, p_d, &opts))
        .collect::<Result<Vec<_>>>()?;
    let json = serde_json::to_string_pretty(&results)?;
    match a.out.clone().or(file.out.clone().map(PathBuf::from)) {
        Some(p) => std::fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e)),
        None => wr(out, format_args!("{json}\n")),
    }
}

fn cmd_capacity(a: &CapacityArgs, file: &FileConfig, out: &mut dyn Write) -> Result<()> {
    let (lipschitz, diameter) = match &a.from_dataset {
        Some(p) => {
            let ds = Dataset::load(p)?;
            let opts = LipschitzOptions {
                pair_budget: a.pairs,
                seed: pick(a.seed, file.seed, 0),
            };
            let l = analysis::estimate_lipschitz_dataset(&ds, &opts)?;
            let d = match (a.diameter, &a.case) {
                (Some(d), _) => d,
                (None, Some(c)) => {
                    let case = load_case(c)?;
                    analysis::load_domain_diameter(&case, ds.header.sampler.range_low, ds.header.sampler.range_high)
                }
                (None, None) => return Err(input("--from-dataset needs --diameter or --case")),
            };
            if !a.json {
                wr(out, format_args!("estimated Lipschitz constant {l:.6e}\n"))?;
            }
            (a.lipschitz.unwrap_or(l), d)
        }
        None => match (a.lipschitz, a.diameter) {
            (Some(l), Some(d)) => (l, d),
            _ => return Err(input("capacity needs --lipschitz and --diameter, or --from-dataset")),
        },
    };
    let report = analysis::min_capacity(
        CapacityQuery {
            lipschitz,
            diameter,
            epsilon: a.epsilon,
        },
        a.max_depth,
    )?;
    if a.json {
        wr(out, format_args!("{}\n", serde_json::to_string_pretty(&report)?))
    } else {
        wr(out, format_args!("{report}"))
    }
}
