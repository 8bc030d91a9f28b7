//! Anomaly scores from one-step prediction residuals, and threshold selection.
//!
//! Three selectors are provided:
//!
//! * [`best_f1_threshold`]: exhaustive search over every distinct score for
//!   the best point-adjusted F1. It reads the labels, so it reports an upper
//!   bound rather than a deployable threshold.
//! * [`epsilon_threshold`]: `mu + z * sigma` for the `z` that most reduces
//!   mean and spread of the remaining scores per flagged point/run.
//! * [`pot_threshold`]: peaks over threshold. Excesses over a high
//!   quantile are fitted with a generalized Pareto tail and the threshold is
//!   placed at exceedance probability `q`.

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evaluation::{segments_from_labels, Confusion};
use crate::forecaster::Forecaster;
use crate::numerics::{rmse, Tensor};

/// Scores for test steps `start..start + scores.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSequence {
    pub start: usize,
    pub scores: Vec<f64>,
    pub labels: Option<Vec<bool>>,
    pub threshold: Option<f64>,
}

impl ScoreSequence {
    pub fn new(start: usize, scores: Vec<f64>) -> Result<Self> {
        if let Some(bad) = scores.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(Error::Parameter(format!("anomaly scores must be finite and non-negative, found {bad}")));
        }
        Ok(Self {
            start,
            scores,
            labels: None,
            threshold: None,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Attaches labels for the full test series; the first `start` are dropped.
    pub fn with_test_labels(mut self, test_labels: &[bool]) -> Result<Self> {
        if test_labels.len() != self.start + self.scores.len() {
            return Err(Error::dim(
                "scores",
                format!(
                    "{} labels for a test series of {} steps",
                    test_labels.len(),
                    self.start + self.scores.len()
                ),
            ));
        }
        self.labels = Some(test_labels[self.start..].to_vec());
        Ok(self)
    }

    /// `timestep,score[,label]` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        match &self.labels {
            Some(_) => w.write_record(["timestep", "score", "label"])?,
            None => w.write_record(["timestep", "score"])?,
        }
        for (i, s) in self.scores.iter().enumerate() {
            let t = (self.start + i).to_string();
            let s = format_f64(*s);
            match &self.labels {
                Some(l) => w.write_record([t, s, u8::from(l[i]).to_string()])?,
                None => w.write_record([t, s])?,
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV with `timestep` and `score` columns and an optional `label` column.
    pub fn read_csv<R: Read>(input: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let (Some(ti), Some(si)) = (col("timestep"), col("score")) else {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                msg: "score file needs `timestep` and `score` columns".into(),
            });
        };
        let li = col("label");
        let mut start = None;
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let t: usize = parse_cell(&rec, ti, path, line)?;
            let expected = start.map_or(t, |s| s + scores.len());
            if t != expected {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    msg: format!("line {line}: timestep {t} breaks the contiguous run (expected {expected})"),
                });
            }
            start.get_or_insert(t);
            scores.push(parse_cell::<f64>(&rec, si, path, line)?);
            if let Some(li) = li {
                labels.push(parse_cell::<f64>(&rec, li, path, line)? != 0.0);
            }
        }
        let mut seq = ScoreSequence::new(start.unwrap_or(0), scores)?;
        if li.is_some() {
            seq.labels = Some(labels);
        }
        Ok(seq)
    }
}

pub(crate) fn parse_cell<T: FromStr>(rec: &csv::StringRecord, col: usize, path: &Path, line: usize) -> Result<T> {
    let raw = rec.get(col).unwrap_or("").trim();
    raw.parse().map_err(|_| Error::NonNumeric {
        path: path.to_path_buf(),
        line,
        column: col + 1,
        value: raw.to_string(),
    })
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn format_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

/// Per-step RMSE of the one-step prediction residual over a normalized
/// test series `[N x m]`; one score for every step from `w` on.
pub fn anomaly_scores(model: &Forecaster, series: &Tensor) -> Result<ScoreSequence> {
    let (n, m) = series.dims2("anomaly_scores")?;
    let w = model.config.window;
    if m != model.features {
        return Err(Error::dim(
            "anomaly_scores",
            format!("model was trained on {} features, series has {m}", model.features),
        ));
    }
    if n <= w {
        return Err(Error::EmptyDataset { rows: n, window: w });
    }
    let scores = (w..n)
        .into_par_iter()
        .map(|t| {
            let pred = model.predict(&series.slice_rows(t - w, t))?;
            Ok(rmse(pred.data(), series.row(t)))
        })
        .collect::<Result<Vec<f64>>>()?;
    ScoreSequence::new(w, scores)
}

/// Trailing moving average over `window` steps (`window <= 1` is a no-op).
pub fn smooth_scores(scores: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 {
        return scores.to_vec();
    }
    let mut out = Vec::with_capacity(scores.len());
    let mut acc = 0.0;
    for (i, &s) in scores.iter().enumerate() {
        acc += s;
        if i >= window {
            acc -= scores[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// `pred[t] = scores[t] > threshold`.
pub fn apply_threshold(scores: &[f64], threshold: f64) -> Vec<bool> {
    scores.iter().map(|&s| s > threshold).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdMethod {
    Grid,
    Epsilon,
    Pot,
}

impl FromStr for ThresholdMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(Self::Grid),
            "epsilon" => Ok(Self::Epsilon),
            "pot" => Ok(Self::Pot),
            other => Err(Error::Usage(format!("unknown threshold method {other:?} (grid|epsilon|pot)"))),
        }
    }
}

impl ThresholdMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Grid => "grid",
            Self::Epsilon => "epsilon",
            Self::Pot => "pot",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Diagnostics {
    Grid { counts: Confusion, f1: f64 },
    /// `z` is `None` when the fallback or degenerate path was taken.
    Epsilon { z: Option<f64>, degenerate: bool },
    Pot(GpdFit),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdResult {
    pub method: ThresholdMethod,
    pub threshold: f64,
    pub diagnostics: Diagnostics,
}

impl ThresholdResult {
    /// One-row CSV: `method,threshold,best_f1,z,gamma,beta,init_threshold,exceedances`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "threshold", "best_f1", "z", "gamma", "beta", "init_threshold", "exceedances"])?;
        let mut row = vec![self.method.as_str().to_string(), format_f64(self.threshold)];
        let blank = String::new;
        match &self.diagnostics {
            Diagnostics::Grid { f1, .. } => row.extend([format_f64(*f1), blank(), blank(), blank(), blank(), blank()]),
            Diagnostics::Epsilon { z, .. } => {
                row.extend([blank(), z.map(format_f64).unwrap_or_default(), blank(), blank(), blank(), blank()])
            }
            Diagnostics::Pot(fit) => row.extend([
                blank(),
                blank(),
                format_f64(fit.gamma),
                format_f64(fit.beta),
                format_f64(fit.init_threshold),
                fit.exceedances.to_string(),
            ]),
        }
        w.write_record(&row)?;
        w.flush()?;
        Ok(())
    }

    /// Reads the threshold value back out of [`write_csv`](Self::write_csv) output.
    pub fn read_threshold<R: Read>(input: R, path: &Path) -> Result<f64> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        let Some(col) = headers.iter().position(|h| h == "threshold") else {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                msg: "no `threshold` column".into(),
            });
        };
        let rec = rdr.records().next().ok_or_else(|| Error::Malformed {
            path: path.to_path_buf(),
            msg: "no threshold row".into(),
        })??;
        parse_cell(&rec, col, path, 2)
    }
}

/// Point-adjusted confusion counts for `scores > th`, for many `th` at once.
struct AdjustedSweep {
    /// `(segment max score, segment length)` sorted by max.
    segments: Vec<(f64, u64)>,
    /// Suffix sums of segment lengths over `segments`.
    suffix_len: Vec<u64>,
    /// Scores of unlabelled steps, sorted.
    normal: Vec<f64>,
    anomalous: u64,
}

impl AdjustedSweep {
    fn new(scores: &[f64], labels: &[bool]) -> Self {
        let mut segments: Vec<(f64, u64)> = segments_from_labels(labels)
            .iter()
            .map(|s| {
                let max = scores[s.start..=s.end].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (max, s.len() as u64)
            })
            .collect();
        segments.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut suffix_len = vec![0; segments.len() + 1];
        for i in (0..segments.len()).rev() {
            suffix_len[i] = suffix_len[i + 1] + segments[i].1;
        }
        let mut normal: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
        normal.sort_by(f64::total_cmp);
        Self {
            anomalous: suffix_len[0],
            segments,
            suffix_len,
            normal,
        }
    }

    fn counts(&self, th: f64) -> Confusion {
        let first_hit = self.segments.partition_point(|&(m, _)| m <= th);
        let tp = self.suffix_len[first_hit];
        let fp = (self.normal.len() - self.normal.partition_point(|&s| s <= th)) as u64;
        Confusion {
            tp,
            fp,
            fn_: self.anomalous - tp,
        }
    }
}

/// Threshold with the best point-adjusted F1 among every distinct score and
/// `+inf`. Ties go to the larger threshold.
pub fn best_f1_threshold(scores: &[f64], labels: &[bool]) -> Result<ThresholdResult> {
    if scores.is_empty() {
        return Err(Error::Parameter("cannot threshold an empty score sequence".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::dim("best_f1_threshold", format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    let sweep = AdjustedSweep::new(scores, labels);
    let mut candidates = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    candidates.push(f64::INFINITY);
    let mut best: Option<(f64, Confusion, f64)> = None;
    for th in candidates {
        let counts = sweep.counts(th);
        let f1 = counts.f1();
        if best.as_ref().is_none_or(|&(_, _, bf)| f1 >= bf) {
            best = Some((th, counts, f1));
        }
    }
    let (threshold, counts, f1) = best.expect("at least +inf is a candidate");
    Ok(ThresholdResult {
        method: ThresholdMethod::Grid,
        threshold,
        diagnostics: Diagnostics::Grid { counts, f1 },
    })
}

/// Default `z` grid: 2.0, 2.5, ..., 10.0.
pub fn default_z_grid() -> Vec<f64> {
    (0..=16).map(|i| 2.0 + 0.5 * i as f64).collect()
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let (sum, n) = values.clone().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt(), n)
}

/// Number of maximal runs of consecutive flagged indices.
fn run_count(flags: impl Iterator<Item = bool>) -> usize {
    let mut runs = 0;
    let mut prev = false;
    for f in flags {
        if f && !prev {
            runs += 1;
        }
        prev = f;
    }
    runs
}

/// Objective of one epsilon candidate; `None` when nothing exceeds it.
pub fn epsilon_objective(scores: &[f64], epsilon: f64) -> Option<f64> {
    let (mu, sigma, _) = mean_std(scores.iter().copied());
    let (mu_below, sigma_below, n_below) = mean_std(scores.iter().copied().filter(|&s| s < epsilon));
    let above = scores.iter().filter(|&&s| s > epsilon).count();
    if above == 0 || n_below == 0 {
        return None;
    }
    let runs = run_count(scores.iter().map(|&s| s > epsilon));
    let gain = (mu - mu_below) / mu + (sigma - sigma_below) / sigma;
    Some(gain / (above + runs * runs) as f64)
}

/// Nonparametric `mu + z * sigma` threshold over `z_grid` (population sigma).
pub fn epsilon_threshold(scores: &[f64], z_grid: &[f64]) -> Result<ThresholdResult> {
    if scores.len() < 2 {
        return Err(Error::Parameter("the epsilon method needs at least two scores".into()));
    }
    let (mu, sigma, _) = mean_std(scores.iter().copied());
    if sigma == 0.0 {
        warn!("constant score sequence; epsilon threshold falls back to the mean");
        return Ok(ThresholdResult {
            method: ThresholdMethod::Epsilon,
            threshold: mu,
            diagnostics: Diagnostics::Epsilon {
                z: None,
                degenerate: true,
            },
        });
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for &z in z_grid {
        let eps = mu + z * sigma;
        if let Some(obj) = epsilon_objective(scores, eps) {
            if best.is_none_or(|(_, _, b)| obj > b) {
                best = Some((z, eps, obj));
            }
        }
    }
    let (threshold, z) = match best {
        Some((z, eps, _)) => (eps, Some(z)),
        None => (scores.iter().copied().fold(f64::NEG_INFINITY, f64::max), None),
    };
    Ok(ThresholdResult {
        method: ThresholdMethod::Epsilon,
        threshold,
        diagnostics: Diagnostics::Epsilon { z, degenerate: false },
    })
}

/// Fitted generalized Pareto tail.
#[derive(Clone, Debug, PartialEq)]
pub struct GpdFit {
    pub gamma: f64,
    pub beta: f64,
    pub log_likelihood: f64,
    pub init_threshold: f64,
    pub exceedances: usize,
    pub total: usize,
    pub q: f64,
}

/// GPD log-likelihood of `excesses` (all > 0); `-inf` outside the support.
pub fn gpd_log_likelihood(excesses: &[f64], gamma: f64, beta: f64) -> f64 {
    if beta <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let n = excesses.len() as f64;
    if gamma.abs() < 1e-9 {
        return -n * beta.ln() - excesses.iter().sum::<f64>() / beta;
    }
    let mut acc = 0.0;
    for &y in excesses {
        let z = 1.0 + gamma * y / beta;
        if z <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += z.ln();
    }
    -n * beta.ln() - (1.0 + 1.0 / gamma) * acc
}

/// Grid-plus-pattern-search maximum likelihood for the GPD.
#[derive(Clone, Debug)]
pub struct GpdSearch {
    pub gammas: Vec<f64>,
    pub betas: Vec<f64>,
}

impl GpdSearch {
    pub const GAMMA_RANGE: (f64, f64) = (-0.5, 1.0);

    /// `gamma` in [-0.5, 1.0] step 0.025; `beta` log-spaced over
    /// `[0.01, 100] x mean excess`.
    pub fn for_excesses(excesses: &[f64]) -> Self {
        let mean = excesses.iter().sum::<f64>() / excesses.len().max(1) as f64;
        let (lo, hi) = Self::GAMMA_RANGE;
        let gammas = (0..=60).map(|i| lo + (hi - lo) * i as f64 / 60.0).collect();
        let betas = (0..=80).map(|i| mean * 10f64.powf(-2.0 + 4.0 * i as f64 / 80.0)).collect();
        Self { gammas, betas }
    }

    pub fn grid(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.gammas.iter().flat_map(move |&g| self.betas.iter().map(move |&b| (g, b)))
    }

    /// Best grid point, then a compass search over `(gamma, ln beta)` that
    /// only accepts strict improvements.
    pub fn fit(&self, excesses: &[f64]) -> Result<(f64, f64, f64)> {
        if excesses.is_empty() {
            return Err(Error::FitFailed("no excesses to fit".into()));
        }
        let mut best = (0.0, 1.0, f64::NEG_INFINITY);
        for (g, b) in self.grid() {
            let ll = gpd_log_likelihood(excesses, g, b);
            if ll > best.2 {
                best = (g, b, ll);
            }
        }
        if !best.2.is_finite() {
            return Err(Error::FitFailed("log-likelihood is -inf over the whole search grid".into()));
        }
        let (lo, hi) = Self::GAMMA_RANGE;
        let (mut g, mut lb, mut ll) = (best.0, best.1.ln(), best.2);
        let mut step_g = (hi - lo) / 60.0;
        let mut step_b = 4.0 * std::f64::consts::LN_10 / 80.0;
        for _ in 0..10_000 {
            let mut moved = false;
            for (dg, db) in [(step_g, 0.0), (-step_g, 0.0), (0.0, step_b), (0.0, -step_b)] {
                let cg = (g + dg).clamp(lo, hi);
                let cl = lb + db;
                let cll = gpd_log_likelihood(excesses, cg, cl.exp());
                if cll > ll {
                    (g, lb, ll) = (cg, cl, cll);
                    moved = true;
                }
            }
            if !moved {
                step_g *= 0.5;
                step_b *= 0.5;
                if step_g < 1e-12 && step_b < 1e-12 {
                    break;
                }
            }
        }
        let beta = lb.exp();
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::FitFailed(format!("scale estimate {beta} is not positive")));
        }
        Ok((g, beta, ll))
    }
}

/// Distance from the initial threshold to the final one:
/// `(beta / gamma) * ((q n / n_th)^(-gamma) - 1)`, or `beta * ln(n_th / (q n))`
/// as `gamma -> 0`.
pub fn pot_displacement(beta: f64, gamma: f64, q: f64, total: usize, exceedances: usize) -> f64 {
    let r = q * total as f64 / exceedances as f64;
    if gamma.abs() < 1e-6 {
        -beta * r.ln()
    } else {
        beta / gamma * (r.powf(-gamma) - 1.0)
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PotConfig {
    pub q: f64,
    pub init_quantile: f64,
    pub min_exceedances: usize,
}

impl Default for PotConfig {
    fn default() -> Self {
        Self {
            q: 1e-3,
            init_quantile: 0.98,
            min_exceedances: 32,
        }
    }
}

/// Fits a GPD to the excesses of `scores` over `init_threshold`.
pub fn fit_tail(scores: &[f64], init_threshold: f64, config: PotConfig) -> Result<GpdFit> {
    let excesses: Vec<f64> = scores.iter().filter(|&&s| s > init_threshold).map(|&s| s - init_threshold).collect();
    if excesses.len() < config.min_exceedances {
        return Err(Error::TooFewExceedances {
            found: excesses.len(),
            required: config.min_exceedances,
        });
    }
    let (gamma, beta, log_likelihood) = GpdSearch::for_excesses(&excesses).fit(&excesses)?;
    Ok(GpdFit {
        gamma,
        beta,
        log_likelihood,
        init_threshold,
        exceedances: excesses.len(),
        total: scores.len(),
        q: config.q,
    })
}

/// Peaks-over-threshold detection threshold on the upper tail of `scores`.
pub fn pot_threshold(scores: &[f64], config: PotConfig) -> Result<ThresholdResult> {
    if scores.is_empty() {
        return Err(Error::Parameter("cannot threshold an empty score sequence".into()));
    }
    if !(0.0..1.0).contains(&config.init_quantile) || !(config.q > 0.0 && config.q < 1.0) {
        return Err(Error::Parameter(format!(
            "POT needs init_quantile in [0, 1) and q in (0, 1), got {} and {}",
            config.init_quantile, config.q
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let th = quantile_sorted(&sorted, config.init_quantile);
    let fit = fit_tail(scores, th, config)?;
    let threshold = th + pot_displacement(fit.beta, fit.gamma, fit.q, fit.total, fit.exceedances);
    Ok(ThresholdResult {
        method: ThresholdMethod::Pot,
        threshold,
        diagnostics: Diagnostics::Pot(fit),
    })
}

/// `timestep,score,threshold,label,prediction` rows for plotting.
pub fn write_score_export<W: Write>(out: W, seq: &ScoreSequence, threshold: f64, with_prediction: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["timestep", "score", "threshold", "label"];
    if with_prediction {
        header.push("prediction");
    }
    w.write_record(&header)?;
    for (i, &s) in seq.scores.iter().enumerate() {
        let label = seq.labels.as_ref().map(|l| u8::from(l[i]).to_string()).unwrap_or_default();
        let mut row = vec![(seq.start + i).to_string(), format_f64(s), format_f64(threshold), label];
        if with_prediction {
            row.push(u8::from(s > threshold).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::evaluate_predictions;

    #[test]
    fn residual_score_hand_case() {
        assert!((rmse(&[3.0, 4.0], &[0.0, 0.0]) - 3.5355339059327378).abs() < 1e-15);
    }

    #[test]
    fn grid_finds_perfect_separation() {
        let s = [0.1, 0.9, 0.2, 0.8];
        let l = [false, true, false, true];
        let r = best_f1_threshold(&s, &l).unwrap();
        let Diagnostics::Grid { counts, f1 } = r.diagnostics else { panic!() };
        assert_eq!(f1, 1.0);
        assert_eq!(counts.metrics().precision, 1.0);
        assert!((0.2..0.8).contains(&r.threshold));
        assert_eq!(apply_threshold(&s, r.threshold), l);
    }

    #[test]
    fn grid_without_anomalies_predicts_nothing() {
        let r = best_f1_threshold(&[0.3, 0.1, 0.5], &[false; 3]).unwrap();
        assert_eq!(r.threshold, f64::INFINITY);
    }

    #[test]
    fn grid_matches_brute_force() {
        let s = [0.5, 0.1, 0.7, 0.7, 0.2, 0.9, 0.3, 0.05, 0.6, 0.4];
        let l = [false, false, true, true, true, false, false, true, true, false];
        let r = best_f1_threshold(&s, &l).unwrap();
        let mut cands: Vec<f64> = s.to_vec();
        cands.push(f64::INFINITY);
        let best = cands
            .iter()
            .map(|&th| evaluate_predictions(&apply_threshold(&s, th), &l).unwrap().f1())
            .fold(0.0, f64::max);
        let Diagnostics::Grid { f1, .. } = r.diagnostics else { panic!() };
        assert_eq!(f1, best);
    }

    #[test]
    fn grid_rejects_empty() {
        assert!(best_f1_threshold(&[], &[]).is_err());
    }

    #[test]
    fn epsilon_hand_case() {
        let s = [1.0, 1.0, 1.0, 10.0];
        let mu: f64 = 3.25;
        let sigma = (3.0 * 2.25f64.powi(2) + 6.75f64.powi(2)).sqrt() / 2.0;
        let r = epsilon_threshold(&s, &[1.0, 2.0]).unwrap();
        assert!((r.threshold - (mu + sigma)).abs() < 1e-12);
        assert!((r.threshold - 7.147).abs() < 1e-3);
        let obj = epsilon_objective(&s, r.threshold).unwrap();
        assert!((obj - (2.25 / 3.25 + 1.0) / 2.0).abs() < 1e-12);
        assert!((obj - 0.8462).abs() < 1e-4);
        assert!(epsilon_objective(&s, mu + 2.0 * sigma).is_none());
    }

    #[test]
    fn epsilon_degenerate_paths() {
        let r = epsilon_threshold(&[2.0; 5], &default_z_grid()).unwrap();
        assert_eq!(r.threshold, 2.0);
        assert!(matches!(r.diagnostics, Diagnostics::Epsilon { degenerate: true, .. }));

        // nothing exceeds mu + 2 sigma for a two-level sequence
        let s = [1.0, 2.0, 1.0, 2.0];
        let r = epsilon_threshold(&s, &[2.0, 3.0]).unwrap();
        assert_eq!(r.threshold, 2.0);
        assert!(matches!(r.diagnostics, Diagnostics::Epsilon { z: None, .. }));
        assert!(epsilon_threshold(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn pot_displacement_hand_case() {
        let d = pot_displacement(0.05, 0.1, 1e-3, 10_000, 200);
        assert!((d - 0.5 * (0.05f64.powf(-0.1) - 1.0)).abs() < 1e-15);
        assert!((d - 0.17468).abs() < 1e-4);
    }

    #[test]
    fn pot_exponential_limit() {
        let (beta, q, n, n_th) = (0.3, 1e-3, 10_000, 200);
        let limit = beta * (n_th as f64 / (q * n as f64)).ln();
        assert!((pot_displacement(beta, 0.0, q, n, n_th) - limit).abs() < 1e-15);
        assert!((pot_displacement(beta, 1e-5, q, n, n_th) - limit).abs() < 1e-4);
    }

    #[test]
    fn pot_needs_enough_exceedances() {
        let s: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert!(matches!(
            pot_threshold(&s, PotConfig::default()),
            Err(Error::TooFewExceedances { found: 2, required: 32 })
        ));
    }

    #[test]
    fn apply_threshold_is_strict() {
        assert_eq!(apply_threshold(&[1.0, 2.0, 3.0], 2.0), vec![false, false, true]);
        assert_eq!(apply_threshold(&[1.0, 2.0], f64::INFINITY), vec![false, false]);
        assert_eq!(apply_threshold(&[1.0, 2.0], 0.5), vec![true, true]);
    }

    #[test]
    fn smoothing_is_trailing_mean() {
        assert_eq!(smooth_scores(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
        assert_eq!(smooth_scores(&[1.0, 3.0], 1), vec![1.0, 3.0]);
    }

    #[test]
    fn score_csv_round_trip() {
        let seq = ScoreSequence::new(5, vec![0.1, 0.25, 1e-12])
            .unwrap()
            .with_test_labels(&[false, false, false, false, false, true, false, true])
            .unwrap();
        let mut buf = Vec::new();
        seq.write_csv(&mut buf).unwrap();
        let back = ScoreSequence::read_csv(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn negative_scores_are_rejected() {
        assert!(ScoreSequence::new(0, vec![0.1, -0.2]).is_err());
        assert!(ScoreSequence::new(0, vec![f64::NAN]).is_err());
    }
}
