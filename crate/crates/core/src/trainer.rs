//! Sliding windows and the minibatch Adam training loop.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forecaster::Forecaster;
use crate::numerics::{AdamConfig, AdamState, Tensor};
use crate::params::ParamTree;

/// `w` consecutive rows and the row right after them.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    pub input: Tensor,
    pub target: Tensor,
}

/// Windows over one or more independent sequences, materialized on demand.
/// A window never crosses from one sequence into the next.
#[derive(Clone, Debug)]
pub struct WindowSet {
    series: Vec<Tensor>,
    window: usize,
    index: Vec<(usize, usize)>,
}

impl WindowSet {
    pub fn new(series: Vec<Tensor>, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Parameter("window must be positive".into()));
        }
        let mut index = Vec::new();
        let mut features = None;
        for (s, x) in series.iter().enumerate() {
            let (n, m) = x.dims2("build_windows")?;
            if *features.get_or_insert(m) != m {
                return Err(Error::dim("build_windows", "sequences differ in feature count"));
            }
            index.extend((0..n.saturating_sub(window)).map(|i| (s, i)));
        }
        if index.is_empty() {
            let rows = series.iter().map(Tensor::rows).max().unwrap_or(0);
            return Err(Error::EmptyDataset { rows, window });
        }
        Ok(Self { series, window, index })
    }

    pub fn single(series: Tensor, window: usize) -> Result<Self> {
        Self::new(vec![series], window)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn features(&self) -> usize {
        self.series[0].cols()
    }

    pub fn get(&self, i: usize) -> WindowSample {
        let (s, start) = self.index[i];
        let x = &self.series[s];
        WindowSample {
            input: x.slice_rows(start, start + self.window),
            target: Tensor::vector(x.row(start + self.window).to_vec()),
        }
    }

    /// Keeps the first `len - k` windows and returns the last `k` as a
    /// separate set.
    fn split_tail(&mut self, k: usize) -> Option<WindowSet> {
        if k == 0 || k >= self.index.len() {
            return None;
        }
        let tail = self.index.split_off(self.index.len() - k);
        Some(WindowSet {
            series: self.series.clone(),
            window: self.window,
            index: tail,
        })
    }
}

/// `N - w` samples; sample `i` covers rows `[i, i + w)` and targets row `i + w`.
pub fn build_windows(series: &Tensor, w: usize) -> Result<Vec<WindowSample>> {
    let set = WindowSet::single(series.clone(), w)?;
    Ok((0..set.len()).map(|i| set.get(i)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Fraction of windows (taken from the end) held out for a validation loss.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 100,
            learning_rate: 1e-3,
            seed: 0,
            shuffle: true,
            val_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Parameter(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean per-sample training RMSE of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean validation RMSE after each epoch (empty without a validation split).
    pub val_losses: Vec<f64>,
}

impl TrainReport {
    /// `epoch,loss` CSV.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "loss"])?;
        for (e, l) in self.epoch_losses.iter().enumerate() {
            w.write_record([(e + 1).to_string(), crate::thresholds::format_f64(*l)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Samples handed to one worker; the reduction order over chunks is fixed, so
/// results do not depend on the thread count.
const CHUNK: usize = 8;

fn mix(seed: u64, epoch: u64, sample: u64) -> u64 {
    // splitmix64 finalizer over a combined key
    let mut z = seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ sample.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn nonfinite_as_loss(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::NonFiniteLoss { epoch, batch },
        other => other,
    }
}

/// Sum of losses and gradients over `ids`, evaluated in parallel chunks.
fn batch_gradients(
    model: &Forecaster,
    data: &WindowSet,
    ids: &[usize],
    dropout_key: Option<(u64, u64)>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let partials = ids
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut loss = 0.0;
            let mut grads: Option<Vec<Vec<f64>>> = None;
            for &i in chunk {
                let s = data.get(i);
                let mut rng = dropout_key.map(|(seed, epoch)| ChaCha8Rng::seed_from_u64(mix(seed, epoch, i as u64)));
                let (l, g) = model.loss_and_grads(&s.input, &s.target, rng.as_mut().map(|r| r as _))?;
                loss += l;
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            Ok((loss, grads.expect("chunks are non-empty")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut it = partials.into_iter();
    let (mut loss, mut grads) = it.next().expect("batch is non-empty");
    for (l, g) in it {
        loss += l;
        for (a, b) in grads.iter_mut().zip(&g) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
    Ok((loss, grads))
}

/// Mean inference-mode RMSE over every window in `data`.
pub fn evaluate_loss(model: &Forecaster, data: &WindowSet) -> Result<f64> {
    let total: f64 = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let s = data.get(i);
            crate::forecaster::loss(&model.predict(&s.input)?, &s.target)
        })
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum();
    Ok(total / data.len() as f64)
}

/// Trains `model` in place. `on_epoch(epoch, loss)` is called after every
/// epoch with a 1-based epoch index.
pub fn train(
    model: &mut Forecaster,
    data: &WindowSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    config.validate()?;
    if data.window() != model.config.window || data.features() != model.features {
        return Err(Error::dim(
            "train",
            format!(
                "windows are {}x{}, model expects {}x{}",
                data.window(),
                data.features(),
                model.config.window,
                model.features
            ),
        ));
    }
    let mut train_set = data.clone();
    let val_set = train_set.split_tail((data.len() as f64 * config.val_fraction).floor() as usize);

    let adam_config = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(adam_config, model.params.named_tensors().into_iter().map(|(_, t)| t));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dropout = model.config.dropout > 0.0;
    let mut report = TrainReport::default();

    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut epoch_loss = 0.0;
        for (batch, ids) in order.chunks(config.batch_size).enumerate() {
            let key = dropout.then_some((config.seed, epoch as u64));
            let (loss, mut grads) =
                batch_gradients(model, &train_set, ids, key).map_err(|e| nonfinite_as_loss(e, epoch, batch))?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            let scale = 1.0 / ids.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            adam.step(&mut model.params.tensors_mut(), &grads)?;
            epoch_loss += loss;
        }
        let mean = epoch_loss / train_set.len() as f64;
        report.epoch_losses.push(mean);
        if let Some(val) = &val_set {
            let v = evaluate_loss(model, val)?;
            info!("epoch {epoch}: train {mean:.6}, validation {v:.6}");
            report.val_losses.push(v);
        } else {
            info!("epoch {epoch}: train {mean:.6}");
        }
        on_epoch(epoch, mean);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecaster::ModelConfig;

    fn ramp(n: usize, m: usize) -> Tensor {
        Tensor::new(vec![n, m], (0..n * m).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn window_counts_and_alignment() {
        let x = ramp(101, 2);
        let s = build_windows(&x, 100).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].input.shape(), &[100, 2]);
        assert_eq!(s[0].target.data(), x.row(100));

        let s = build_windows(&ramp(10, 1), 3).unwrap();
        assert_eq!(s.len(), 7);
        assert_eq!(s[4].input.data(), &[4.0, 5.0, 6.0]);
        assert_eq!(s[4].target.data(), &[7.0]);
    }

    #[test]
    fn too_short_series_is_empty() {
        assert!(matches!(build_windows(&ramp(100, 2), 100), Err(Error::EmptyDataset { rows: 100, window: 100 })));
    }

    #[test]
    fn windows_stay_inside_their_sequence() {
        let set = WindowSet::new(vec![ramp(5, 1), ramp(4, 1)], 3).unwrap();
        assert_eq!(set.len(), 2 + 1);
        assert_eq!(set.get(2).input.data(), &[0.0, 1.0, 2.0]);
        assert_eq!(set.get(2).target.data(), &[3.0]);
    }

    fn tiny_model(seed: u64) -> Forecaster {
        let cfg = ModelConfig {
            window: 6,
            tcn_channels: 4,
            mlp_units: 4,
            dilations: vec![1, 2],
            ..ModelConfig::default()
        };
        Forecaster::new(cfg, 2, seed).unwrap()
    }

    fn wave(n: usize) -> Tensor {
        Tensor::new(vec![n, 2], (0..n).flat_map(|t| [(t as f64 * 0.3).sin() * 0.5 + 0.5, (t % 5) as f64 / 5.0]).collect()).unwrap()
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let mut model = tiny_model(1);
        let before = model.clone();
        let set = WindowSet::single(wave(30), 6).unwrap();
        let report = train(&mut model, &set, &TrainConfig { epochs: 0, ..TrainConfig::default() }, |_, _| {}).unwrap();
        assert!(report.epoch_losses.is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn same_seed_same_history() {
        let set = WindowSet::single(wave(40), 6).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 7,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = tiny_model(3);
            let r = train(&mut m, &set, &cfg, |_, _| {}).unwrap();
            (r, m)
        };
        let (a, ma) = run();
        let (b, mb) = run();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert_eq!(a.epoch_losses.len(), 3);
        assert!(a.epoch_losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn validation_split_reports_losses() {
        let set = WindowSet::single(wave(40), 6).unwrap();
        let mut m = tiny_model(1);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 16,
            val_fraction: 0.25,
            ..TrainConfig::default()
        };
        let r = train(&mut m, &set, &cfg, |_, _| {}).unwrap();
        assert_eq!(r.val_losses.len(), 2);
    }

    #[test]
    fn nan_input_aborts_with_location() {
        let mut x = wave(20);
        x.data_mut()[30] = f64::NAN;
        let set = WindowSet::single(x, 6).unwrap();
        let mut m = tiny_model(1);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            shuffle: false,
            ..TrainConfig::default()
        };
        match train(&mut m, &set, &cfg, |_, _| {}) {
            // row 15 is first touched by sample 9, which sits in batch 2
            Err(Error::NonFiniteLoss { epoch: 1, batch: 2 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn epoch_log_format() {
        let r = TrainReport {
            epoch_losses: vec![0.5, 0.25],
            val_losses: vec![],
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,loss\n1,0.5\n2,0.25\n");
    }
}
