//! Point-adjusted precision, recall and F1.
//!
//! Ground truth comes as contiguous anomalous segments. After thresholding,
//! any segment that contains at least one positive prediction is marked
//! positive in full; counts are then taken point by point.

use std::str::FromStr;

use crate::error::{Error, Result};

/// Inclusive index range of one labelled anomaly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct AnomalySegment {
    pub start: usize,
    pub end: usize,
}

impl AnomalySegment {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start > end {
            return Err(Error::Parameter(format!("segment start {start} after end {end}")));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: usize) -> bool {
        (self.start..=self.end).contains(&t)
    }
}

/// Maximal runs of `true` in a label sequence.
pub fn segments_from_labels(labels: &[bool]) -> Vec<AnomalySegment> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &l) in labels.iter().enumerate() {
        match (l, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(AnomalySegment { start: s, end: i - 1 });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(AnomalySegment {
            start: s,
            end: labels.len() - 1,
        });
    }
    out
}

/// Point labels of length `len` covering `segments`.
pub fn labels_from_segments(segments: &[AnomalySegment], len: usize) -> Result<Vec<bool>> {
    let mut labels = vec![false; len];
    for s in segments {
        if s.end >= len {
            return Err(Error::SegmentOutOfRange {
                start: s.start,
                end: s.end,
                len,
            });
        }
        labels[s.start..=s.end].fill(true);
    }
    Ok(labels)
}

/// Marks every segment with at least one positive prediction as fully positive.
pub fn point_adjust(pred: &[bool], segments: &[AnomalySegment]) -> Result<Vec<bool>> {
    let mut out = pred.to_vec();
    for s in segments {
        if s.start > s.end || s.end >= pred.len() {
            return Err(Error::SegmentOutOfRange {
                start: s.start,
                end: s.end,
                len: pred.len(),
            });
        }
        if pred[s.start..=s.end].iter().any(|&p| p) {
            out[s.start..=s.end].fill(true);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
        }
    }
}

impl std::ops::Add for Confusion {
    type Output = Confusion;
    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Pointwise confusion counts of `pred` against `labels`.
pub fn confusion(pred: &[bool], labels: &[bool]) -> Result<Confusion> {
    if pred.len() != labels.len() {
        return Err(Error::dim(
            "precision_recall_f1",
            format!("{} predictions for {} labels", pred.len(), labels.len()),
        ));
    }
    let mut c = Confusion::default();
    for (&p, &l) in pred.iter().zip(labels) {
        match (p, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

/// Confusion counts and metrics for already adjusted predictions.
pub fn precision_recall_f1(adjusted: &[bool], labels: &[bool]) -> Result<(Confusion, Metrics)> {
    let c = confusion(adjusted, labels)?;
    Ok((c, c.metrics()))
}

/// Thresholded predictions -> point-adjusted confusion counts.
pub fn evaluate_predictions(pred: &[bool], labels: &[bool]) -> Result<Confusion> {
    let adjusted = point_adjust(pred, &segments_from_labels(labels))?;
    confusion(&adjusted, labels)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Averaging {
    /// Sum counts over channels, then compute metrics.
    #[default]
    Micro,
    /// Mean of per-channel precision, recall and F1.
    Macro,
}

impl FromStr for Averaging {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Self::Micro),
            "macro" => Ok(Self::Macro),
            other => Err(Error::Parameter(format!("unknown averaging {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelReport {
    pub channel: String,
    pub counts: Confusion,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub channels: Vec<ChannelReport>,
    pub totals: Confusion,
    pub metrics: Metrics,
    pub averaging: Averaging,
}

/// Combines per-channel results into one report.
pub fn aggregate(channels: Vec<ChannelReport>, averaging: Averaging) -> EvalReport {
    let totals = channels.iter().fold(Confusion::default(), |acc, c| acc + c.counts);
    let metrics = match averaging {
        Averaging::Micro => totals.metrics(),
        Averaging::Macro => {
            let n = channels.len().max(1) as f64;
            let sum = channels.iter().fold((0.0, 0.0, 0.0), |(p, r, f), c| {
                let m = c.counts.metrics();
                (p + m.precision, r + m.recall, f + m.f1)
            });
            Metrics {
                precision: sum.0 / n,
                recall: sum.1 / n,
                f1: sum.2 / n,
            }
        }
    };
    EvalReport {
        channels,
        totals,
        metrics,
        averaging,
    }
}

impl EvalReport {
    /// `channel,tp,fp,fn,precision,recall,f1` rows with a trailing aggregate row.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["channel", "tp", "fp", "fn", "precision", "recall", "f1"])?;
        let mut row = |name: &str, c: &Confusion, m: Metrics| {
            w.write_record([
                name.to_string(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                format!("{:.6}", m.precision),
                format!("{:.6}", m.recall),
                format!("{:.6}", m.f1),
            ])
        };
        for c in &self.channels {
            row(&c.channel, &c.counts, c.counts.metrics())?;
        }
        row("aggregate", &self.totals, self.metrics)?;
        w.flush()?;
        Ok(())
    }

    /// Human-readable `key: value` summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.channels {
            let m = c.counts.metrics();
            s.push_str(&format!(
                "{}: tp={} fp={} fn={} precision={:.4} recall={:.4} f1={:.4}\n",
                c.channel, c.counts.tp, c.counts.fp, c.counts.fn_, m.precision, m.recall, m.f1
            ));
        }
        s.push_str(&format!(
            "aggregate ({:?}): tp={} fp={} fn={} precision={:.4} recall={:.4} f1={:.4}\n",
            self.averaging, self.totals.tp, self.totals.fp, self.totals.fn_, self.metrics.precision, self.metrics.recall, self.metrics.f1
        ));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(s: &str) -> Vec<bool> {
        s.chars().map(|c| c == '1').collect()
    }

    #[test]
    fn single_hit_fills_segment() {
        let pred = bits("0000010000");
        let adjusted = point_adjust(&pred, &[AnomalySegment::new(3, 6).unwrap()]).unwrap();
        assert_eq!(adjusted, bits("0001111000"));
    }

    #[test]
    fn untouched_segments_and_saturation() {
        let seg = [AnomalySegment::new(3, 6).unwrap()];
        let pred = bits("1100000011");
        assert_eq!(point_adjust(&pred, &seg).unwrap(), pred);
        let ones = vec![true; 10];
        assert_eq!(point_adjust(&ones, &seg).unwrap(), ones);
    }

    #[test]
    fn out_of_range_segment() {
        let err = point_adjust(&[false; 4], &[AnomalySegment { start: 2, end: 4 }]).unwrap_err();
        assert!(matches!(err, Error::SegmentOutOfRange { .. }));
    }

    #[test]
    fn table_f1_values_follow_from_precision_and_recall() {
        assert!((f1_score(0.9539, 0.9019) - 0.9272).abs() < 5e-5);
        assert!((f1_score(0.9419, 0.9815) - 0.9613).abs() < 5e-5);
    }

    #[test]
    fn perfect_prediction() {
        let labels = bits("0011100110");
        let (c, m) = precision_recall_f1(&labels, &labels).unwrap();
        assert_eq!(c, Confusion { tp: 5, fp: 0, fn_: 0 });
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_conventions() {
        let c = Confusion::default();
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.0, 0.0, 0.0));
    }

    #[test]
    fn micro_aggregate_hand_count() {
        let r = aggregate(
            vec![
                ChannelReport {
                    channel: "a".into(),
                    counts: Confusion { tp: 1, fp: 0, fn_: 0 },
                },
                ChannelReport {
                    channel: "b".into(),
                    counts: Confusion { tp: 0, fp: 1, fn_: 1 },
                },
            ],
            Averaging::Micro,
        );
        assert_eq!((r.metrics.precision, r.metrics.recall, r.metrics.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn single_channel_aggregate_matches_channel() {
        let counts = Confusion { tp: 7, fp: 2, fn_: 3 };
        let r = aggregate(
            vec![ChannelReport {
                channel: "a".into(),
                counts,
            }],
            Averaging::Micro,
        );
        assert_eq!(r.metrics, counts.metrics());
        let r = aggregate(r.channels, Averaging::Macro);
        assert_eq!(r.metrics, counts.metrics());
    }

    #[test]
    fn segments_round_trip() {
        let labels = bits("0110001111010");
        let segs = segments_from_labels(&labels);
        assert_eq!(segs.len(), 3);
        assert_eq!(labels_from_segments(&segs, labels.len()).unwrap(), labels);
    }

    #[test]
    fn csv_has_aggregate_row() {
        let r = aggregate(
            vec![ChannelReport {
                channel: "P-1".into(),
                counts: Confusion { tp: 3, fp: 0, fn_: 0 },
            }],
            Averaging::Micro,
        );
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "channel,tp,fp,fn,precision,recall,f1\nP-1,3,0,0,1.000000,1.000000,1.000000\naggregate,3,0,0,1.000000,1.000000,1.000000\n"
        );
    }
}
