//! Command-line driver.
//!
//! Failures print a single line `error: kind=<usage|data|numerical> message=<text>`
//! to stderr and exit with 1, 2 or 3 respectively.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::diff::ObjectiveError;
use crate::domain::{make_grid, split_dataset, Dataset, EventSequence, Split};
use crate::eval::{self, EvalError};
use crate::io::{self, IoError};
use crate::model::{attention_matrix, ModelConfig, ModelError, PointKind, Variant};
use crate::simulator::{self, HawkesSpec, KernelFamily, SimulationError};
use crate::trainer::{self, TrainConfig, TrainError};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn line(&self) -> String {
        let (kind, msg) = match self {
            CliError::Usage(m) => ("usage", m),
            CliError::Data(m) => ("data", m),
            CliError::Numerical(m) => ("numerical", m),
        };
        format!("error: kind={kind} message={}", msg.replace('\n', " "))
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ObjectiveError> for CliError {
    fn from(e: ObjectiveError) -> Self {
        match e {
            ObjectiveError::NonFiniteObjective { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Numerical(e.to_string()),
            TrainError::Objective(o) => o.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Objective(o) => o.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::UnboundedIntensity { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn io_fail(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "ithp", version, about = "Interpretable attention-based Hawkes processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a parametric Hawkes process into a dataset directory.
    Simulate(SimulateArgs),
    /// Fit a model by maximum likelihood.
    Train(TrainArgs),
    /// Per-event test log-likelihood and type accuracy.
    Eval(EvalArgs),
    /// Averaged learned trigger kernel for one source/target pair.
    RecoverKernel(KernelArgs),
    /// Integrated influence between all type pairs.
    Heatmap(HeatmapArgs),
    /// Attention weights among events and grid points of one sequence.
    AttentionMap(AttentionArgs),
    /// Model (and optionally true) intensities along one sequence.
    IntensityTrace(TraceArgs),
    /// Dataset statistics as JSON.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum KernelArg {
    Exp,
    HalfSine,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum VariantArg {
    Ithp,
    ExIthp,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct DataArgs {
    /// Dataset directory (train/val/test .jsonl) or a single .jsonl file.
    #[arg(long)]
    data: PathBuf,
    /// Multiply all times and horizons by this factor on load.
    #[arg(long)]
    time_scale: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "exp")]
    kernel: KernelArg,
    /// JSON file with `mu`, `alpha` (and `beta` for exp); defaults to the reference parameters.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    num_seqs: usize,
    #[arg(long = "T", default_value_t = 20.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train/val/test fractions.
    #[arg(long, default_value = "0.5,0.25,0.25")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "ithp")]
    variant: VariantArg,
    #[arg(long = "M", default_value_t = 32)]
    embed_dim: usize,
    /// Value dimension; defaults to 2M.
    #[arg(long = "MV")]
    value_dim: Option<usize>,
    /// Hidden width of the extrapolating head; defaults to 2M.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    skip_connection: bool,
    #[arg(long, default_value_t = 10)]
    grid: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ModelDataArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Accepted for uniformity; evaluation is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    #[command(flatten)]
    common: ModelDataArgs,
    #[arg(long, default_value = "tll,acc")]
    metrics: String,
    /// Grid subdivision; defaults to the model's.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct KernelArgs {
    #[command(flatten)]
    common: ModelDataArgs,
    #[arg(long)]
    source: usize,
    #[arg(long)]
    target: usize,
    #[arg(long, default_value_t = 1.0)]
    tau_max: f64,
    #[arg(long, default_value_t = 20)]
    steps: usize,
    #[arg(long, default_value_t = eval::DEFAULT_PROBES)]
    probes: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct HeatmapArgs {
    #[command(flatten)]
    common: ModelDataArgs,
    #[arg(long, default_value_t = 1.0)]
    tau_max: f64,
    #[arg(long, default_value_t = 20)]
    steps: usize,
    #[arg(long, default_value_t = eval::DEFAULT_PROBES)]
    probes: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct AttentionArgs {
    #[command(flatten)]
    common: ModelDataArgs,
    #[arg(long)]
    seq_index: usize,
    #[arg(long, default_value_t = 10)]
    grid: usize,
    /// Query type for grid rows; defaults to the sequence's most frequent type.
    #[arg(long)]
    query_type: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct TraceArgs {
    #[command(flatten)]
    common: ModelDataArgs,
    #[arg(long)]
    seq_index: usize,
    #[arg(long, default_value_t = 10)]
    grid: usize,
    /// Hawkes parameters (JSON) whose true intensity is added as extra columns.
    #[arg(long)]
    true_spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct StatsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprint!("{}", e.render());
            let first = e.to_string().lines().next().unwrap_or_default().to_string();
            eprintln!("{}", CliError::Usage(first).line());
            return 1;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Simulate(a) => simulate(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => evaluate(&a),
        Command::RecoverKernel(a) => recover_kernel(&a),
        Command::Heatmap(a) => heatmap(&a),
        Command::AttentionMap(a) => attention(&a),
        Command::IntensityTrace(a) => trace(&a),
        Command::Stats(a) => stats(&a),
    }
}

/// `# ithp <command> <args as JSON>`, the first line of every CSV export.
fn provenance(command: &str, args: &impl Serialize) -> String {
    format!(
        "ithp {command} {}",
        serde_json::to_string(args).expect("arguments serialise")
    )
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_fail(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_fractions(s: &str) -> Result<(f64, f64, f64), CliError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("bad --split {s:?}")))?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(CliError::Usage(format!("--split needs three fractions, got {s:?}"))),
    }
}

fn read_spec(path: &Path) -> Result<HawkesSpec, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
    let spec: HawkesSpec =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    spec.validate()?;
    Ok(spec)
}

fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let family = match a.kernel {
        KernelArg::Exp => KernelFamily::ExponentialDecay,
        KernelArg::HalfSine => KernelFamily::HalfSine,
    };
    let spec = match &a.params {
        Some(p) => {
            let spec = read_spec(p)?;
            if spec.kernel != family {
                return Err(CliError::Data(format!(
                    "{} describes a different kernel than --kernel",
                    p.display()
                )));
            }
            spec
        }
        None => match family {
            KernelFamily::ExponentialDecay => HawkesSpec::reference_exponential(),
            KernelFamily::HalfSine => HawkesSpec::reference_half_sine(),
        },
    };
    let fractions = parse_fractions(&a.split)?;
    let ds = simulator::simulate_dataset(&spec, a.horizon, a.num_seqs, a.seed)?;
    let ds = split_dataset(&ds, fractions, a.seed).map_err(|e| CliError::Data(e.to_string()))?;
    io::save_dataset(&a.out, &ds)?;
    #[derive(Serialize)]
    struct Meta<'a> {
        producer: String,
        spec: &'a HawkesSpec,
    }
    let meta = Meta {
        producer: provenance("simulate", a),
        spec: &spec,
    };
    let text = serde_json::to_string_pretty(&meta).expect("spec serialises") + "\n";
    write_file(&a.out.join("spec.json"), &text)
}

fn load_data(d: &DataArgs) -> Result<Dataset, CliError> {
    Ok(io::load_dataset(&d.data, d.time_scale)?)
}

fn train(a: &TrainArgs) -> Result<(), CliError> {
    let ds = load_data(&a.data)?;
    let variant = match a.variant {
        VariantArg::Ithp => Variant::Ithp,
        VariantArg::ExIthp => Variant::ExIthp,
    };
    let mut cfg = ModelConfig::new(a.embed_dim, ds.num_types(), variant);
    if let Some(v) = a.value_dim {
        cfg.value_dim = v;
    }
    if let Some(h) = a.hidden {
        cfg.hidden_dim = h;
    }
    cfg.grid_subdivision = a.grid;
    cfg.skip_connection = a.skip_connection;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let tc = TrainConfig {
        learning_rate: a.lr,
        max_epochs: a.epochs,
        batch_size: a.batch_size,
        patience: a.patience,
        grid_subdivision: a.grid,
        seed: a.seed,
        ..TrainConfig::default()
    };
    tc.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let mut log = match &a.log {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))?;
            }
            Some((p.clone(), fs::File::create(p).map_err(|e| io_fail(p, e))?))
        }
        None => None,
    };
    let mut log_err = None;
    let result = trainer::train_observed(&ds, &cfg, &tc, |rec| {
        if let Some((path, file)) = log.as_mut() {
            let line = serde_json::to_string(rec).expect("record serialises");
            if let Err(e) = writeln!(file, "{line}") {
                log_err.get_or_insert_with(|| io_fail(path, e));
            }
        }
    });
    if let Some(e) = log_err {
        return Err(e);
    }
    let (params, report) = result?;
    io::save_model(&a.out, &cfg, &params)?;
    eprintln!(
        "trained {} epochs, best epoch {}",
        report.epochs.len(),
        report.best_epoch.map_or("none".to_string(), |e| e.to_string())
    );
    Ok(())
}

struct Loaded {
    cfg: ModelConfig,
    params: crate::model::ModelParams,
    ds: Dataset,
}

impl Loaded {
    fn new(c: &ModelDataArgs) -> Result<Self, CliError> {
        let (cfg, params) = io::load_model(&c.model)?;
        let ds = trainer::anchor_safe(&load_data(&c.data)?, &cfg).into_owned();
        if ds.num_types() != cfg.num_types {
            return Err(CliError::Data(format!(
                "dataset has {} types, model has {}",
                ds.num_types(),
                cfg.num_types
            )));
        }
        Ok(Self { cfg, params, ds })
    }

    fn split(&self, which: SplitArg) -> Vec<&EventSequence> {
        self.ds.split(which.into())
    }

    fn sequence(&self, which: SplitArg, index: usize) -> Result<&EventSequence, CliError> {
        let seqs = self.split(which);
        let n = seqs.len();
        seqs.get(index)
            .copied()
            .ok_or_else(|| CliError::Data(format!("--seq-index {index} out of range for {n} sequences")))
    }
}

fn evaluate(a: &EvalArgs) -> Result<(), CliError> {
    let l = Loaded::new(&a.common)?;
    let seqs = l.split(a.common.split);
    let mut out = serde_json::Map::new();
    out.insert("producer".into(), provenance("eval", a).into());
    out.insert("split".into(), Split::from(a.common.split).name().into());
    for metric in a.metrics.split(',').map(str::trim) {
        let value = match metric {
            "tll" => eval::test_tll(&l.params, &l.cfg, &seqs, a.grid.unwrap_or(l.cfg.grid_subdivision))?,
            "acc" => eval::type_accuracy(&l.params, &l.cfg, &seqs)?,
            other => return Err(CliError::Usage(format!("unknown metric {other:?}"))),
        };
        out.insert(metric.into(), value.into());
    }
    let text = serde_json::to_string_pretty(&out).expect("metrics serialise") + "\n";
    emit(a.out.as_deref(), &text)
}

fn recover_kernel(a: &KernelArgs) -> Result<(), CliError> {
    let l = Loaded::new(&a.common)?;
    let lags = eval::lag_grid(a.tau_max, a.steps)?;
    let est = eval::recover_kernel(
        &l.params,
        &l.cfg,
        &l.split(a.common.split),
        a.source,
        a.target,
        &lags,
        a.probes,
    )?;
    write_file(&a.out, &est.to_csv(&provenance("recover-kernel", a)))
}

fn heatmap(a: &HeatmapArgs) -> Result<(), CliError> {
    let l = Loaded::new(&a.common)?;
    let h = eval::influence_heatmap(&l.params, &l.cfg, &l.split(a.common.split), a.tau_max, a.steps, a.probes)?;
    write_file(&a.out, &h.to_csv(&provenance("heatmap", a)))
}

fn attention(a: &AttentionArgs) -> Result<(), CliError> {
    let l = Loaded::new(&a.common)?;
    let seq = l.sequence(a.common.split, a.seq_index)?;
    let grid = make_grid(seq, a.grid).map_err(|e| CliError::Usage(e.to_string()))?;
    let query_type = a.query_type.unwrap_or_else(|| most_frequent_type(seq));
    let m = attention_matrix(&l.params, &l.cfg, seq, &grid, query_type)?;
    let n = m.times.len();
    let mut text = format!("# {}\ntime,kind,event_index,query_type", provenance("attention-map", a));
    for j in 0..n {
        text.push_str(&format!(",w{j}"));
    }
    text.push('\n');
    for r in 0..n {
        let (kind, idx) = match m.kinds[r] {
            PointKind::Event(i) => ("event", i.to_string()),
            PointKind::Grid => ("grid", String::new()),
        };
        text.push_str(&format!("{},{kind},{idx},{}", m.times[r], m.query_types[r]));
        for v in m.weights.row(r) {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    write_file(&a.out, &text)
}

/// Most frequent event type of `seq`, lowest index on ties and 0 when empty.
pub fn most_frequent_type(seq: &EventSequence) -> usize {
    let mut counts = vec![0usize; seq.num_types()];
    for e in seq.events() {
        counts[e.k] += 1;
    }
    let mut best = 0;
    for (k, c) in counts.iter().enumerate() {
        if *c > counts[best] {
            best = k;
        }
    }
    best
}

fn trace(a: &TraceArgs) -> Result<(), CliError> {
    let l = Loaded::new(&a.common)?;
    let seq = l.sequence(a.common.split, a.seq_index)?;
    let spec = a.true_spec.as_deref().map(read_spec).transpose()?;
    if let Some(s) = &spec {
        if s.num_types() != l.cfg.num_types {
            return Err(CliError::Data("true spec has a different number of types".into()));
        }
    }
    let grid = make_grid(seq, a.grid).map_err(|e| CliError::Usage(e.to_string()))?;
    let rows = eval::intensity_trace(&l.params, &l.cfg, seq, &grid)?;
    let k = l.cfg.num_types;
    let mut text = format!("# {}\nt", provenance("intensity-trace", a));
    for j in 0..k {
        text.push_str(&format!(",lambda_{j}"));
    }
    if spec.is_some() {
        for j in 0..k {
            text.push_str(&format!(",true_lambda_{j}"));
        }
    }
    text.push('\n');
    for (t, row) in grid.times().iter().zip(rows) {
        text.push_str(&t.to_string());
        for v in row {
            text.push_str(&format!(",{v}"));
        }
        if let Some(s) = &spec {
            for j in 0..k {
                text.push_str(&format!(",{}", simulator::true_intensity(s, seq, *t, j)));
            }
        }
        text.push('\n');
    }
    write_file(&a.out, &text)
}

fn stats(a: &StatsArgs) -> Result<(), CliError> {
    let ds = load_data(&a.data)?;
    let st = io::dataset_stats(&ds)?;
    #[derive(Serialize)]
    struct Report<'a> {
        producer: String,
        #[serde(flatten)]
        stats: &'a io::DatasetStats,
    }
    let report = Report {
        producer: provenance("stats", a),
        stats: &st,
    };
    let text = serde_json::to_string_pretty(&report).expect("stats serialise") + "\n";
    emit(a.out.as_deref(), &text)
}
