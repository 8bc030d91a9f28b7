use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Telemetry anomaly detection with an attention temporal-convolution forecaster.
#[derive(Parser, Debug)]
#[command(name = "atcn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one checkpoint per channel and write epoch-loss CSVs.
    Train(TrainArgs),
    /// Score a test series with a trained checkpoint.
    Score(ScoreArgs),
    /// Pick an anomaly threshold from a score file.
    Threshold(ThresholdArgs),
    /// Point-adjusted precision/recall/F1 per channel and aggregated.
    Evaluate(EvaluateArgs),
    /// Train and evaluate at several window sizes.
    SweepWindow(SweepArgs),
    /// Write `timestep,score,threshold,label,prediction` rows for plotting.
    ExportCurves(ExportArgs),
    /// Write a synthetic data directory (sine mixtures with level shifts).
    GenerateSynthetic(SyntheticArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Directory with train/, test/ and labeled_anomalies.csv.
    #[arg(long)]
    data: PathBuf,
    /// Channel id, or `all` for every file in <data>/train.
    #[arg(long, default_value = "all")]
    channel: String,
    /// Flat key = value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// One min/max pair over all features instead of per-feature stats.
    #[arg(long)]
    global_minmax: bool,
    /// Ablation: static instead of dynamic attention scores.
    #[arg(long)]
    static_attention: bool,
    /// Ablation: drop the temporal-attention branch.
    #[arg(long)]
    no_temporal_attention: bool,
    /// Ablation: drop the variable-attention branch.
    #[arg(long)]
    no_variable_attention: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output directory for <channel>.ckpt and <channel>.loss.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct LabelArgs {
    /// Anomaly manifest used to attach labels.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Channel to look up in the manifest (defaults to the input file stem).
    #[arg(long)]
    channel: Option<String>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Raw (unnormalized) test matrix, CSV or .bin.
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    labels: LabelArgs,
    /// Trailing moving-average length applied to the scores.
    #[arg(long, default_value_t = 1)]
    smooth: usize,
}

#[derive(Args, Debug)]
struct ThresholdArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value = "grid")]
    method: String,
    #[command(flatten)]
    labels: LabelArgs,
    /// POT target exceedance probability.
    #[arg(long, default_value_t = 1e-3)]
    q: f64,
    /// POT initial threshold quantile.
    #[arg(long, default_value_t = 0.98)]
    init_quantile: f64,
    #[arg(long, default_value_t = 32)]
    min_exceedances: usize,
    /// Epsilon-method z grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    z: Option<Vec<f64>>,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Score files, one per channel (comma separated or repeated).
    #[arg(long, value_delimiter = ',', required = true)]
    scores: Vec<PathBuf>,
    /// A number or a threshold CSV; give one for all channels or one per score file.
    #[arg(long, value_delimiter = ',', required = true)]
    threshold: Vec<String>,
    /// Anomaly manifest; channels are matched by score file stem.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value = "micro")]
    averaging: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Window sizes, comma separated.
    #[arg(long = "w", value_delimiter = ',', default_value = "20,40,60,80,100")]
    windows: Vec<usize>,
    #[arg(long, default_value = "micro")]
    averaging: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    scores: PathBuf,
    /// A number or a threshold CSV.
    #[arg(long)]
    threshold: String,
    #[command(flatten)]
    labels: LabelArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SyntheticArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5000)]
    train_len: usize,
    #[arg(long, default_value_t = 2000)]
    test_len: usize,
    /// Anomalous segments per test split.
    #[arg(long, default_value_t = 6)]
    anomalies: usize,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<atcn::Error>())
        .map_or(2, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Score(a) => commands::score(a),
        Command::Threshold(a) => commands::threshold(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::SweepWindow(a) => commands::sweep_window(a),
        Command::ExportCurves(a) => commands::export_curves(a),
        Command::GenerateSynthetic(a) => commands::generate_synthetic(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
