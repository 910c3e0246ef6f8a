//! Command-line entry point: data preparation, training, evaluation,
//! cross-topology experiments, synthetic data generation, and checkpoint
//! inspection. Every run writes a manifest next to its outputs so results
//! are reproducible from the recorded flags and seed.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::dataset::{
    align_to_graph, load_prepared, load_speeds, prepare, save_prepared, save_speeds_csv,
    PreparedDataset,
};
use crate::error::{Error, Result};
use crate::evaluation::{cross_matrix, evaluate, save_report_csv, save_report_json, EvalTarget};
use crate::graph::{load_adjacency_csv, save_adjacency_csv, RoadGraph};
use crate::model::{load_checkpoint, param_count, save_checkpoint, Hyperparams};
use crate::synth::{generate, ring_chord_graph, ring_graph, SynthConfig};
use crate::train::{save_history, train, TrainConfig};

const OUT_DIR_ENV: &str = "SRNN_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_TRAINING: i32 = 4;

#[derive(Parser)]
#[command(
    name = "srnn",
    version,
    about = "Graph-structured recurrent forecasting for short-term traffic speeds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Impute, split and scale a speeds CSV into a cached dataset.
    Prepare(PrepareArgs),
    /// Train a model and write a topology-free checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset (RMSE in km/h).
    Eval(EvalArgs),
    /// Evaluate checkpoints across datasets into an RMSE matrix.
    CrossEval(CrossEvalArgs),
    /// Generate a synthetic speeds/adjacency CSV pair.
    Synth(SynthArgs),
    /// Print a checkpoint's hyperparameters and parameter count.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct DataOpts {
    /// Speeds CSV, or a prepared-dataset JSON produced by `prepare`.
    #[arg(long)]
    speeds: PathBuf,
    /// Adjacency CSV for the road graph.
    #[arg(long)]
    adj: PathBuf,
    /// Train fraction for the prefix/suffix split.
    #[arg(long, default_value_t = 0.75)]
    split: f64,
    /// Window length in time steps.
    #[arg(long = "seq-len", default_value_t = 10)]
    seq_len: usize,
}

#[derive(Args)]
struct PrepareArgs {
    #[command(flatten)]
    data: DataOpts,
    /// Output directory (or set SRNN_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataOpts,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Hidden size for all three RNNs.
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 32)]
    embed: usize,
    #[arg(long, default_value_t = 0.0005)]
    lr: f64,
    #[arg(long, default_value_t = 0.99)]
    decay: f64,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    /// Visit training windows in temporal order instead of shuffling.
    #[arg(long = "no-shuffle", default_value_t = false)]
    no_shuffle: bool,
    /// Max gradient L2 norm; 0 disables clipping.
    #[arg(long = "grad-clip", default_value_t = 5.0)]
    grad_clip: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataOpts,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CrossEvalArgs {
    /// Checkpoint file; repeat for several sources.
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    /// Evaluation target as SPEEDS:ADJ (speeds CSV or prepared JSON, then
    /// adjacency CSV); repeat for several targets.
    #[arg(long, required = true)]
    targets: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.75)]
    split: f64,
    #[arg(long = "seq-len", default_value_t = 10)]
    seq_len: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    nodes: usize,
    #[arg(long, default_value_t = 60)]
    days: usize,
    /// Topology: "ring" or "ring-chord".
    #[arg(long = "graph", default_value = "ring-chord")]
    graph_kind: String,
    /// Prefix for generated segment ids.
    #[arg(long, default_value = "s")]
    prefix: String,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse arguments and run one command; returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(argv.clone()) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let argv_strings: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match dispatch(cli, &argv_strings) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e);
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Training(_) => EXIT_TRAINING,
        _ => EXIT_DATA,
    }
}

fn dispatch(cli: Cli, argv: &[String]) -> Result<()> {
    match cli.command {
        Command::Prepare(args) => cmd_prepare(args, argv),
        Command::Train(args) => cmd_train(args, argv),
        Command::Eval(args) => cmd_eval(args, argv),
        Command::CrossEval(args) => cmd_cross_eval(args, argv),
        Command::Synth(args) => cmd_synth(args, argv),
        Command::Inspect(args) => cmd_inspect(args, argv),
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    argv: &'a [String],
    seed: Option<u64>,
    crate_version: &'a str,
    inputs: Vec<String>,
    outputs: Vec<String>,
    out_dir_from_env: bool,
    timestamp: String,
}

struct OutDir {
    path: PathBuf,
    from_env: bool,
}

fn resolve_out(out: Option<PathBuf>) -> Result<OutDir> {
    let (path, from_env) = match out {
        Some(p) => (p, false),
        None => match std::env::var_os(OUT_DIR_ENV) {
            Some(v) => (PathBuf::from(v), true),
            None => {
                return Err(Error::Config(format!(
                    "no output directory: pass --out or set {}",
                    OUT_DIR_ENV
                )))
            }
        },
    };
    std::fs::create_dir_all(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(OutDir { path, from_env })
}

#[allow(clippy::too_many_arguments)]
fn write_manifest(
    out: &OutDir,
    command: &str,
    argv: &[String],
    seed: Option<u64>,
    inputs: &[&Path],
    outputs: &[&Path],
) -> Result<()> {
    let manifest = Manifest {
        command,
        argv,
        seed,
        crate_version: env!("CARGO_PKG_VERSION"),
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        out_dir_from_env: out.from_env,
        timestamp: chrono::Utc::now().to_rfc3339(),
    };
    let path = out.path.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Data(format!("serializing manifest: {}", e)))?;
    std::fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

fn load_graph(path: &Path) -> Result<RoadGraph> {
    let g = load_adjacency_csv(path)?;
    for w in g.warnings() {
        eprintln!("warning: {}", w);
    }
    Ok(g)
}

/// Accept either a raw speeds CSV or a prepared-dataset JSON, aligned to the
/// graph's node order.
fn load_data(data: &DataOpts, g: &RoadGraph) -> Result<PreparedDataset> {
    load_data_from(&data.speeds, g, data.split, data.seq_len)
}

fn load_data_from(
    speeds: &Path,
    g: &RoadGraph,
    split: f64,
    seq_len: usize,
) -> Result<PreparedDataset> {
    let text = std::fs::read_to_string(speeds)
        .map_err(|e| Error::io(speeds.display().to_string(), e))?;
    if text.trim_start().starts_with('{') {
        let p = load_prepared(speeds)?;
        let dataset = align_to_graph(&p.dataset, g)?;
        Ok(PreparedDataset { dataset, ..p })
    } else {
        let ds = crate::dataset::parse_speeds_csv(&text)?;
        let ds = align_to_graph(&ds, g)?;
        prepare(&ds, split, seq_len)
    }
}

fn cmd_prepare(args: PrepareArgs, argv: &[String]) -> Result<()> {
    let out = resolve_out(args.out)?;
    let g = load_graph(&args.data.adj)?;
    let ds = load_speeds(&args.data.speeds)?;
    let ds = align_to_graph(&ds, &g)?;
    let prepared = prepare(&ds, args.data.split, args.data.seq_len)?;
    let cache = out.path.join("prepared.json");
    save_prepared(&prepared, &cache)?;
    println!(
        "prepared {} rows x {} segments; split at row {}; scaler [{}, {}] km/h",
        prepared.dataset.time_steps(),
        prepared.dataset.segment_count(),
        prepared.split_at,
        prepared.scaler.min,
        prepared.scaler.max
    );
    write_manifest(
        &out,
        "prepare",
        argv,
        None,
        &[&args.data.speeds, &args.data.adj],
        &[&cache],
    )
}

fn cmd_train(args: TrainArgs, argv: &[String]) -> Result<()> {
    let out = resolve_out(args.out)?;
    let g = load_graph(&args.data.adj)?;
    let prepared = load_data(&args.data, &g)?;
    let hp = Hyperparams {
        node_hidden: args.hidden,
        spatial_hidden: args.hidden,
        temporal_hidden: args.hidden,
        embed: args.embed,
        dropout: args.dropout,
    };
    let cfg = TrainConfig {
        epochs: args.epochs,
        lr0: args.lr,
        decay: args.decay,
        grad_clip: (args.grad_clip > 0.0).then_some(args.grad_clip),
        seed: args.seed,
        shuffle: !args.no_shuffle,
        window_len: args.data.seq_len,
    };
    let (ckpt, history) = train(&g, &prepared, &hp, &cfg)?;
    let ckpt_path = out.path.join("checkpoint.json");
    let history_path = out.path.join("history.csv");
    save_checkpoint(&ckpt, &ckpt_path)?;
    save_history(&history, &history_path)?;
    for rec in &history {
        println!(
            "epoch {}: lr {:.6e}, train loss {:.6}, eval RMSE {:.3} km/h",
            rec.epoch, rec.lr, rec.train_loss, rec.eval_rmse
        );
    }
    println!("checkpoint written to {}", ckpt_path.display());
    write_manifest(
        &out,
        "train",
        argv,
        Some(args.seed),
        &[&args.data.speeds, &args.data.adj],
        &[&ckpt_path, &history_path],
    )
}

fn cmd_eval(args: EvalArgs, argv: &[String]) -> Result<()> {
    let out = resolve_out(args.out)?;
    let g = load_graph(&args.data.adj)?;
    let prepared = load_data(&args.data, &g)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let outcome = evaluate(
        &ckpt,
        &g,
        &prepared.dataset,
        prepared.eval_rows(),
        args.data.seq_len,
    )?;
    println!(
        "eval RMSE {:.4} km/h over {} windows",
        outcome.rmse, outcome.window_count
    );
    let report_path = out.path.join("eval.json");
    let json = serde_json::to_string_pretty(&outcome)
        .map_err(|e| Error::Data(format!("serializing outcome: {}", e)))?;
    std::fs::write(&report_path, json)
        .map_err(|e| Error::io(report_path.display().to_string(), e))?;
    write_manifest(
        &out,
        "eval",
        argv,
        None,
        &[&args.data.speeds, &args.data.adj, &args.checkpoint],
        &[&report_path],
    )
}

fn parse_target(spec: &str) -> Result<(PathBuf, PathBuf)> {
    match spec.split_once(':') {
        Some((speeds, adj)) if !speeds.is_empty() && !adj.is_empty() => {
            Ok((PathBuf::from(speeds), PathBuf::from(adj)))
        }
        _ => Err(Error::Config(format!(
            "target '{}' must be SPEEDS:ADJ",
            spec
        ))),
    }
}

fn label_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn cmd_cross_eval(args: CrossEvalArgs, argv: &[String]) -> Result<()> {
    let out = resolve_out(args.out)?;
    let mut checkpoints = Vec::new();
    for path in &args.checkpoint {
        checkpoints.push((label_of(path), load_checkpoint(path)?));
    }
    let mut targets = Vec::new();
    let mut input_paths: Vec<PathBuf> = args.checkpoint.clone();
    for spec in &args.targets {
        let (speeds, adj) = parse_target(spec)?;
        let graph = load_graph(&adj)?;
        let prepared = load_data_from(&speeds, &graph, args.split, args.seq_len)?;
        targets.push(EvalTarget {
            label: label_of(&speeds),
            graph,
            prepared,
        });
        input_paths.push(speeds);
        input_paths.push(adj);
    }
    let report = cross_matrix(&checkpoints, &targets, args.seq_len, args.seed)?;

    print!("train\\eval");
    for t in &report.targets {
        print!("\t{}", t);
    }
    println!();
    for (src, row) in report.sources.iter().zip(&report.rmse_kmh) {
        print!("{}", src);
        for v in row {
            print!("\t{:.4}", v);
        }
        println!();
    }
    for (label, row) in &report.baseline_rmse_kmh {
        print!("{}", label);
        for v in row {
            print!("\t{:.4}", v);
        }
        println!();
    }
    println!("trainable parameters per model: {}", report.param_counts[0]);

    let csv_path = out.path.join("report.csv");
    let json_path = out.path.join("report.json");
    save_report_csv(&report, &csv_path)?;
    save_report_json(&report, &json_path)?;
    let inputs: Vec<&Path> = input_paths.iter().map(|p| p.as_path()).collect();
    write_manifest(
        &out,
        "cross-eval",
        argv,
        args.seed,
        &inputs,
        &[&csv_path, &json_path],
    )
}

fn cmd_synth(args: SynthArgs, argv: &[String]) -> Result<()> {
    let out = resolve_out(args.out)?;
    let graph = match args.graph_kind.as_str() {
        "ring" => ring_graph(args.nodes, &args.prefix),
        "ring-chord" => ring_chord_graph(args.nodes, &args.prefix),
        other => {
            return Err(Error::Config(format!(
                "unknown graph kind '{}': expected ring or ring-chord",
                other
            )))
        }
    };
    let cfg = SynthConfig::new(graph, args.days, args.seed);
    let ds = generate(&cfg)?;
    let speeds_path = out.path.join("speeds.csv");
    let adj_path = out.path.join("adj.csv");
    save_speeds_csv(&ds, &speeds_path)?;
    save_adjacency_csv(&cfg.graph, &adj_path)?;
    println!(
        "synthesized {} days ({} rows) over {} segments ({})",
        args.days,
        ds.time_steps(),
        ds.segment_count(),
        args.graph_kind
    );
    write_manifest(
        &out,
        "synth",
        argv,
        Some(args.seed),
        &[],
        &[&speeds_path, &adj_path],
    )
}

fn cmd_inspect(args: InspectArgs, argv: &[String]) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let hp = &ckpt.hyperparams;
    println!("checkpoint format version: {}", ckpt.version);
    println!(
        "hyperparameters: node hidden {}, spatial hidden {}, temporal hidden {}, embedding {}, dropout {}",
        hp.node_hidden, hp.spatial_hidden, hp.temporal_hidden, hp.embed, hp.dropout
    );
    println!("scaler: [{}, {}] km/h", ckpt.scaler.min, ckpt.scaler.max);
    println!("trainable parameters: {}", param_count(hp));
    if let Some(out) = args.out {
        let out = resolve_out(Some(out))?;
        write_manifest(&out, "inspect", argv, None, &[&args.checkpoint], &[])?;
    }
    Ok(())
}
