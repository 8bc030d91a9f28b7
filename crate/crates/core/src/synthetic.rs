//! Sine-mixture telemetry with injected level-shift anomalies.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::ChannelDataset;
use crate::error::{Error, Result};
use crate::evaluation::AnomalySegment;
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub features: usize,
    pub train_len: usize,
    pub test_len: usize,
    pub anomalies: usize,
    pub min_anomaly_len: usize,
    pub max_anomaly_len: usize,
    /// Size of the level shift relative to the clean signal's amplitude.
    pub shift: f64,
    pub noise: f64,
    /// No anomaly starts before this test index.
    pub lead_in: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            features: 3,
            train_len: 5000,
            test_len: 2000,
            anomalies: 6,
            min_anomaly_len: 30,
            max_anomaly_len: 80,
            shift: 0.8,
            noise: 0.02,
            lead_in: 150,
            seed: 0,
        }
    }
}

struct Component {
    amplitude: f64,
    period: f64,
    phase: f64,
}

/// Builds one channel: a clean training split and a test split with
/// non-overlapping level-shift segments.
pub fn generate(spec: &SyntheticSpec) -> Result<ChannelDataset> {
    let room = spec.test_len.saturating_sub(spec.lead_in);
    if spec.features == 0 || spec.min_anomaly_len == 0 || spec.min_anomaly_len > spec.max_anomaly_len {
        return Err(Error::Parameter("synthetic spec needs features > 0 and 0 < min_anomaly_len <= max_anomaly_len".into()));
    }
    if spec.anomalies * (spec.max_anomaly_len * 2) > room {
        return Err(Error::Parameter(format!(
            "{} anomalies of up to {} steps do not fit in {room} test steps",
            spec.anomalies, spec.max_anomaly_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mixtures: Vec<Vec<Component>> = (0..spec.features)
        .map(|_| {
            (0..3)
                .map(|_| Component {
                    amplitude: rng.random_range(0.3..1.0),
                    period: rng.random_range(20.0..120.0),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                })
                .collect()
        })
        .collect();
    let amplitude: Vec<f64> = mixtures.iter().map(|c| c.iter().map(|c| c.amplitude).sum()).collect();
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Parameter(e.to_string()))?;

    let series = |start: usize, len: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut out = Vec::with_capacity(len * spec.features);
        for t in start..start + len {
            for comps in &mixtures {
                let clean: f64 = comps
                    .iter()
                    .map(|c| c.amplitude * (std::f64::consts::TAU * t as f64 / c.period + c.phase).sin())
                    .sum();
                out.push(clean + noise.sample(rng));
            }
        }
        out
    };
    let train = series(0, spec.train_len, &mut rng);
    let mut test = series(spec.train_len, spec.test_len, &mut rng);

    // one slot per anomaly, each at least twice the longest anomaly wide
    let slot = room / spec.anomalies.max(1);
    let mut segments = Vec::with_capacity(spec.anomalies);
    for a in 0..spec.anomalies {
        let len = rng.random_range(spec.min_anomaly_len..=spec.max_anomaly_len);
        let base = spec.lead_in + a * slot;
        let start = base + rng.random_range(0..=slot - len - spec.max_anomaly_len / 2);
        let end = start + len - 1;
        let mut hit = false;
        for f in 0..spec.features {
            if rng.random_bool(0.5) || (!hit && f == spec.features - 1) {
                hit = true;
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                for t in start..=end {
                    test[t * spec.features + f] += sign * spec.shift * amplitude[f];
                }
            }
        }
        segments.push(AnomalySegment::new(start, end)?);
    }
    ChannelDataset::new(
        format!("SYN-{}", spec.seed),
        Tensor::new(vec![spec.train_len, spec.features], train)?,
        Tensor::new(vec![spec.test_len, spec.features], test)?,
        segments,
        false,
    )
}
