//! Train, score, threshold and evaluate one channel end to end.

use crate::checkpoint::Checkpoint;
use crate::config::{RunConfig, ThresholdSettings};
use crate::data::ChannelDataset;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_predictions, ChannelReport, Confusion};
use crate::forecaster::Forecaster;
use crate::thresholds::{
    anomaly_scores, apply_threshold, best_f1_threshold, epsilon_threshold, pot_threshold, smooth_scores, ScoreSequence,
    ThresholdMethod, ThresholdResult,
};
use crate::trainer::{train, TrainReport, WindowSet};

/// Applies the configured selector. Only the grid method reads `labels`.
pub fn select_threshold(scores: &[f64], labels: Option<&[bool]>, settings: &ThresholdSettings) -> Result<ThresholdResult> {
    match settings.method {
        ThresholdMethod::Grid => {
            let labels = labels.ok_or_else(|| Error::Usage("the grid method needs labels".into()))?;
            best_f1_threshold(scores, labels)
        }
        ThresholdMethod::Epsilon => epsilon_threshold(scores, &settings.z_grid),
        ThresholdMethod::Pot => pot_threshold(scores, settings.pot),
    }
}

#[derive(Clone, Debug)]
pub struct ChannelOutcome {
    pub channel: String,
    pub training: TrainReport,
    /// Scores (smoothed if configured) with test labels attached.
    pub scores: ScoreSequence,
    pub threshold: ThresholdResult,
    pub counts: Confusion,
}

impl ChannelOutcome {
    pub fn report(&self) -> ChannelReport {
        ChannelReport {
            channel: self.channel.clone(),
            counts: self.counts,
        }
    }
}

/// Trains a fresh model on the channel's training split.
pub fn train_channel(ds: &ChannelDataset, config: &RunConfig, on_epoch: impl FnMut(usize, f64)) -> Result<(Checkpoint, TrainReport)> {
    let mut model = Forecaster::new(config.model.clone(), ds.features(), config.train.seed)?;
    let windows = WindowSet::single(ds.normalized_train()?, config.model.window)?;
    let report = train(&mut model, &windows, &config.train, on_epoch)?;
    Ok((Checkpoint::new(config.clone(), model, Some(ds.stats.clone())), report))
}

/// Scores the test split, picks a threshold and counts point-adjusted hits.
pub fn evaluate_channel(ds: &ChannelDataset, checkpoint: &Checkpoint, settings: &ThresholdSettings) -> Result<(ScoreSequence, ThresholdResult, Confusion)> {
    let raw = anomaly_scores(&checkpoint.model, &ds.normalized_test()?)?;
    let scores = ScoreSequence::new(raw.start, smooth_scores(&raw.scores, settings.smoothing))?.with_test_labels(&ds.test_labels()?)?;
    let labels = scores.labels.clone().expect("labels were just attached");
    let threshold = select_threshold(&scores.scores, Some(&labels), settings)?;
    let counts = evaluate_predictions(&apply_threshold(&scores.scores, threshold.threshold), &labels)?;
    Ok((scores, threshold, counts))
}

pub fn run_channel(ds: &ChannelDataset, config: &RunConfig, on_epoch: impl FnMut(usize, f64)) -> Result<(Checkpoint, ChannelOutcome)> {
    let (checkpoint, training) = train_channel(ds, config, on_epoch)?;
    let (scores, threshold, counts) = evaluate_channel(ds, &checkpoint, &config.threshold)?;
    let outcome = ChannelOutcome {
        channel: ds.id.clone(),
        training,
        scores,
        threshold,
        counts,
    };
    Ok((checkpoint, outcome))
}
