use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use atcn::checkpoint::Checkpoint;
use atcn::config::RunConfig;
use atcn::data::{self, read_manifest, read_matrix, ChannelDataset};
use atcn::evaluation::{aggregate, evaluate_predictions, labels_from_segments, ChannelReport};
use atcn::pipeline::{run_channel, select_threshold, train_channel};
use atcn::synthetic::{generate, SyntheticSpec};
use atcn::thresholds::{anomaly_scores, apply_threshold, smooth_scores, write_score_export, ScoreSequence, ThresholdResult};
use atcn::{Averaging, Error, ThresholdMethod};
use log::info;

use crate::{DataArgs, EvaluateArgs, ExportArgs, LabelArgs, ScoreArgs, SweepArgs, SyntheticArgs, ThresholdArgs, TrainArgs};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::Usage(msg.into()).into()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_config(args: &DataArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::parse(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.global_minmax |= args.global_minmax;
    if args.static_attention {
        cfg.model.attention_mode = atcn::AttentionMode::Static;
    }
    cfg.model.temporal_attention &= !args.no_temporal_attention;
    cfg.model.variable_attention &= !args.no_variable_attention;
    Ok(cfg)
}

fn channels(args: &DataArgs) -> Result<Vec<String>> {
    if args.channel != "all" {
        return Ok(vec![args.channel.clone()]);
    }
    let ids = data::list_channels(&args.data)?;
    if ids.is_empty() {
        return Err(usage(format!("no channel files in {}", args.data.join("train").display())));
    }
    Ok(ids)
}

fn load(args: &DataArgs, channel: &str, cfg: &RunConfig) -> Result<ChannelDataset> {
    Ok(data::load_channel_from_dir(&args.data, channel, cfg.global_minmax)?)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(&args.data)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for channel in channels(&args.data)? {
        let ds = load(&args.data, &channel, &cfg)?;
        info!("training {channel}: {} train rows, {} features", ds.train.rows(), ds.features());
        let (ckpt, report) = train_channel(&ds, &cfg, |_, _| {})
            .with_context(|| format!("training {channel}"))?;
        ckpt.save(&args.out.join(format!("{channel}.ckpt")))?;
        report.write_csv(create(&args.out.join(format!("{channel}.loss.csv")))?)?;
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    name.split('.').next().unwrap_or(name).to_string()
}

/// Test-aligned labels for `channel` from a manifest.
fn manifest_labels(manifest: &Path, channel: &str, test_len: usize) -> Result<Vec<bool>> {
    let entry = read_manifest(manifest)?
        .into_iter()
        .find(|e| e.channel == channel)
        .ok_or_else(|| Error::MissingChannel(channel.to_string()))?;
    Ok(labels_from_segments(&entry.segments, test_len)?)
}

fn read_scores(path: &Path) -> Result<ScoreSequence> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(ScoreSequence::read_csv(f, path)?)
}

/// Scores with labels from the file itself or from `--labels` (which wins).
fn scores_with_labels(path: &Path, labels: &LabelArgs) -> Result<ScoreSequence> {
    let seq = read_scores(path)?;
    match &labels.labels {
        Some(manifest) => {
            let channel = labels.channel.clone().unwrap_or_else(|| stem(path));
            let test_len = seq.start + seq.len();
            Ok(seq.with_test_labels(&manifest_labels(manifest, &channel, test_len)?)?)
        }
        None => Ok(seq),
    }
}

pub fn score(args: ScoreArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let raw = read_matrix(&args.test)?;
    let test = match &ckpt.stats {
        Some(stats) => stats.apply(&raw)?,
        None => raw,
    };
    let scores = anomaly_scores(&ckpt.model, &test)?;
    let mut seq = ScoreSequence::new(scores.start, smooth_scores(&scores.scores, args.smooth))?;
    if let Some(manifest) = &args.labels.labels {
        let channel = args.labels.channel.clone().unwrap_or_else(|| stem(&args.ckpt));
        seq = seq.with_test_labels(&manifest_labels(manifest, &channel, test.rows())?)?;
    }
    seq.write_csv(create(&args.out)?)?;
    info!("wrote {} scores to {}", seq.len(), args.out.display());
    Ok(())
}

pub fn threshold(args: ThresholdArgs) -> Result<()> {
    let seq = scores_with_labels(&args.scores, &args.labels)?;
    let mut settings = atcn::ThresholdSettings {
        method: args.method.parse::<ThresholdMethod>()?,
        ..Default::default()
    };
    settings.pot.q = args.q;
    settings.pot.init_quantile = args.init_quantile;
    settings.pot.min_exceedances = args.min_exceedances;
    if let Some(z) = args.z {
        settings.z_grid = z;
    }
    if settings.method == ThresholdMethod::Grid && seq.labels.is_none() {
        return Err(usage("--method grid needs labels: a `label` column in the score file or --labels <manifest>"));
    }
    let result = select_threshold(&seq.scores, seq.labels.as_deref(), &settings)?;
    result.write_csv(output(args.out.as_deref())?)?;
    Ok(())
}

/// A literal number or the `threshold` column of a threshold CSV.
fn parse_threshold(raw: &str) -> Result<f64> {
    if let Ok(v) = raw.parse::<f64>() {
        return Ok(v);
    }
    let path = PathBuf::from(raw);
    let f = File::open(&path).with_context(|| format!("--threshold {raw:?} is neither a number nor a readable file"))?;
    Ok(ThresholdResult::read_threshold(f, &path)?)
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let averaging: Averaging = args.averaging.parse()?;
    let thresholds = args.threshold.iter().map(|t| parse_threshold(t)).collect::<Result<Vec<_>>>()?;
    if thresholds.len() != 1 && thresholds.len() != args.scores.len() {
        return Err(usage(format!("{} thresholds for {} score files", thresholds.len(), args.scores.len())));
    }
    let mut reports = Vec::with_capacity(args.scores.len());
    for (i, path) in args.scores.iter().enumerate() {
        let label_args = LabelArgs {
            labels: args.labels.clone(),
            channel: None,
        };
        let seq = scores_with_labels(path, &label_args)?;
        let labels = seq
            .labels
            .as_ref()
            .ok_or_else(|| usage(format!("{} has no labels; pass --labels <manifest>", path.display())))?;
        let th = thresholds[if thresholds.len() == 1 { 0 } else { i }];
        let counts = evaluate_predictions(&apply_threshold(&seq.scores, th), labels)?;
        reports.push(ChannelReport {
            channel: stem(path),
            counts,
        });
    }
    let report = aggregate(reports, averaging);
    eprint!("{}", report.summary());
    report.write_csv(output(args.out.as_deref())?)?;
    Ok(())
}

pub fn sweep_window(args: SweepArgs) -> Result<()> {
    let averaging: Averaging = args.averaging.parse()?;
    if args.windows.is_empty() || args.windows.contains(&0) {
        return Err(usage("--w needs positive window sizes"));
    }
    let base = load_config(&args.data)?;
    let ids = channels(&args.data)?;
    let datasets = ids.iter().map(|c| load(&args.data, c, &base)).collect::<Result<Vec<_>>>()?;
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    w.write_record(["window", "precision", "recall", "f1"])?;
    for &window in &args.windows {
        let mut cfg = base.clone();
        cfg.model.window = window;
        let mut reports = Vec::with_capacity(datasets.len());
        for ds in &datasets {
            let (_, outcome) =
                run_channel(ds, &cfg, |_, _| {}).with_context(|| format!("window {window}, channel {}", ds.id))?;
            info!("w={window} {}: f1 {:.4}", ds.id, outcome.counts.f1());
            reports.push(outcome.report());
        }
        let m = aggregate(reports, averaging).metrics;
        w.write_record([window.to_string(), format!("{:.6}", m.precision), format!("{:.6}", m.recall), format!("{:.6}", m.f1)])?;
        w.flush()?;
    }
    Ok(())
}

pub fn export_curves(args: ExportArgs) -> Result<()> {
    let seq = scores_with_labels(&args.scores, &args.labels)?;
    let th = parse_threshold(&args.threshold)?;
    write_score_export(create(&args.out)?, &seq, th, true)?;
    Ok(())
}

pub fn generate_synthetic(args: SyntheticArgs) -> Result<()> {
    if args.channels == 0 {
        return Err(usage("--channels must be positive"));
    }
    let sets = (0..args.channels as u64)
        .map(|i| {
            let ds = generate(&SyntheticSpec {
                seed: args.seed + i,
                train_len: args.train_len,
                test_len: args.test_len,
                anomalies: args.anomalies,
                ..SyntheticSpec::default()
            })?;
            Ok((ds, "SYNTHETIC".to_string()))
        })
        .collect::<atcn::Result<Vec<_>>>()?;
    data::write_channel_dir(&args.out, &sets)?;
    info!("wrote {} channel(s) to {}", sets.len(), args.out.display());
    Ok(())
}
