//! MAE, precision-recall curves over 256 thresholds, and maximum F-measure.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const THRESHOLDS: usize = 256;
pub const DEFAULT_BETA_SQ: f64 = 0.3;

/// Threshold `k / 255`; a pixel is positive when its prediction is at least the threshold.
pub fn threshold(k: usize) -> f64 {
    k as f64 / (THRESHOLDS - 1) as f64
}

fn check_shapes(pred: &Tensor<f32>, mask: &Tensor<f32>) -> Result<()> {
    if pred.shape() != mask.shape() {
        return Err(Error::validation(format!(
            "prediction shape {:?} does not match mask {:?}",
            pred.shape(),
            mask.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::validation("empty prediction"));
    }
    Ok(())
}

pub fn mae(pred: &Tensor<f32>, mask: &Tensor<f32>) -> Result<f64> {
    check_shapes(pred, mask)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&p, &m)| (p as f64 - m as f64).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Per-image MAE and confusion counts at every threshold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl Counts {
    fn zeros() -> Self {
        Self {
            tp: vec![0; THRESHOLDS],
            fp: vec![0; THRESHOLDS],
            fn_: vec![0; THRESHOLDS],
        }
    }

    fn add(&mut self, other: &Counts) {
        for k in 0..THRESHOLDS {
            self.tp[k] += other.tp[k];
            self.fp[k] += other.fp[k];
            self.fn_[k] += other.fn_[k];
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub mae: f64,
    pub counts: Counts,
}

impl EvalRecord {
    /// `mask` must be binary; pixels at or above 0.5 are foreground.
    pub fn new(pred: &Tensor<f32>, mask: &Tensor<f32>) -> Result<Self> {
        check_shapes(pred, mask)?;
        let mae = mae(pred, mask)?;
        // Histogram of the highest threshold index each prediction clears.
        let mut pos_hist = [0u64; THRESHOLDS];
        let mut neg_hist = [0u64; THRESHOLDS];
        let mut positives = 0u64;
        for (&p, &m) in pred.data().iter().zip(mask.data()) {
            let top = highest_cleared(p as f64);
            if m >= 0.5 {
                positives += 1;
                if let Some(k) = top {
                    pos_hist[k] += 1;
                }
            } else if let Some(k) = top {
                neg_hist[k] += 1;
            }
        }
        let mut counts = Counts::zeros();
        let (mut tp, mut fp) = (0u64, 0u64);
        for k in (0..THRESHOLDS).rev() {
            tp += pos_hist[k];
            fp += neg_hist[k];
            counts.tp[k] = tp;
            counts.fp[k] = fp;
            counts.fn_[k] = positives - tp;
        }
        Ok(Self { mae, counts })
    }
}

/// Largest `k` with `p >= k / 255`, or `None` when `p` is below every threshold.
fn highest_cleared(p: f64) -> Option<usize> {
    if p.is_nan() || p < 0.0 {
        return None;
    }
    let mut k = ((p * 255.0).floor() as usize).min(THRESHOLDS - 1);
    // Guard against rounding of k / 255 in either direction.
    while k > 0 && p < threshold(k) {
        k -= 1;
    }
    while k + 1 < THRESHOLDS && p >= threshold(k + 1) {
        k += 1;
    }
    Some(k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Counts pooled over the dataset before forming ratios.
    Micro,
    /// Per-image precision and recall averaged over images.
    Macro,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

fn ratios(tp: u64, fp: u64, fn_: u64) -> (f64, f64) {
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    (precision, recall)
}

pub fn pr_curve(records: &[EvalRecord], averaging: Averaging) -> Result<Vec<PrPoint>> {
    if records.is_empty() {
        return Err(Error::validation("precision-recall curve needs at least one record"));
    }
    let points = match averaging {
        Averaging::Micro => {
            let mut total = Counts::zeros();
            records.iter().for_each(|r| total.add(&r.counts));
            (0..THRESHOLDS)
                .map(|k| {
                    let (precision, recall) = ratios(total.tp[k], total.fp[k], total.fn_[k]);
                    PrPoint {
                        threshold: threshold(k),
                        precision,
                        recall,
                    }
                })
                .collect()
        }
        Averaging::Macro => (0..THRESHOLDS)
            .map(|k| {
                let (mut p, mut r) = (0.0, 0.0);
                for rec in records {
                    let (pi, ri) = ratios(rec.counts.tp[k], rec.counts.fp[k], rec.counts.fn_[k]);
                    p += pi;
                    r += ri;
                }
                let n = records.len() as f64;
                PrPoint {
                    threshold: threshold(k),
                    precision: p / n,
                    recall: r / n,
                }
            })
            .collect(),
    };
    Ok(points)
}

pub fn f_measure(precision: f64, recall: f64, beta_sq: f64) -> f64 {
    let den = beta_sq * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + beta_sq) * precision * recall / den
    }
}

pub fn max_f(records: &[EvalRecord], beta_sq: f64, averaging: Averaging) -> Result<f64> {
    Ok(pr_curve(records, averaging)?
        .iter()
        .map(|p| f_measure(p.precision, p.recall, beta_sq))
        .fold(0.0, f64::max))
}

pub fn mean_mae(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::validation("no records"));
    }
    Ok(records.iter().map(|r| r.mae).sum::<f64>() / records.len() as f64)
}

/// Dataset-level summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mae: f64,
    pub max_f: f64,
}

pub fn summarize(records: &[EvalRecord], beta_sq: f64, averaging: Averaging) -> Result<Summary> {
    Ok(Summary {
        mae: mean_mae(records)?,
        max_f: max_f(records, beta_sq, averaging)?,
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::validation(format!("writing csv: {e}"))
}

pub fn write_pr_csv<W: Write>(out: W, curve: &[PrPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "precision", "recall"]).map_err(csv_err)?;
    for p in curve {
        w.write_record([p.threshold.to_string(), p.precision.to_string(), p.recall.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("pr curve", e))
}

pub fn write_summary_csv<W: Write>(out: W, summary: &Summary) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mae", "maxF"]).map_err(csv_err)?;
    w.write_record([summary.mae.to_string(), summary.max_f.to_string()])
        .map_err(csv_err)?;
    w.flush().map_err(|e| Error::io("summary", e))
}

/// Writes `pr_curve.csv` and `summary.csv` into `dir`.
pub fn write_reports(dir: &Path, curve: &[PrPoint], summary: &Summary) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let open = |name: &str| {
        let p = dir.join(name);
        std::fs::File::create(&p).map_err(|e| Error::io(p, e))
    };
    write_pr_csv(open("pr_curve.csv")?, curve)?;
    write_summary_csv(open("summary.csv")?, summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(vec![1, 1, 1, data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn zero_prediction_mae_is_foreground_fraction() {
        let mask = t(&[1.0, 0.0, 0.0, 1.0, 1.0]);
        assert!((mae(&t(&[0.0; 5]), &mask).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(matches!(mae(&t(&[0.0; 4]), &t(&[0.0; 5])), Err(Error::Validation(_))));
    }

    #[test]
    fn thresholds_are_inclusive() {
        assert_eq!(highest_cleared(0.0), Some(0));
        assert_eq!(highest_cleared(1.0), Some(255));
        assert_eq!(highest_cleared(threshold(128)), Some(128));
        assert_eq!(highest_cleared(threshold(128) - 1e-9), Some(127));
    }

    #[test]
    fn perfect_prediction_gives_max_f_one() {
        let m = t(&[1.0, 0.0, 1.0, 0.0]);
        let r = EvalRecord::new(&m, &m).unwrap();
        let curve = pr_curve(std::slice::from_ref(&r), Averaging::Micro).unwrap();
        assert_eq!(curve[0].recall, 1.0);
        for p in &curve[1..] {
            assert_eq!((p.precision, p.recall), (1.0, 1.0));
        }
        assert_eq!(max_f(&[r], DEFAULT_BETA_SQ, Averaging::Micro).unwrap(), 1.0);
    }

    #[test]
    fn f_measure_hand_value() {
        assert!((f_measure(0.8, 0.5, 0.3) - 1.3 * 0.4 / 0.74).abs() < 1e-15);
        assert_eq!(f_measure(0.0, 0.0, 0.3), 0.0);
    }

    #[test]
    fn counts_are_monotone() {
        let r = EvalRecord::new(&t(&[0.1, 0.5, 0.9, 0.3, 0.7]), &t(&[0.0, 1.0, 1.0, 0.0, 1.0])).unwrap();
        for k in 1..THRESHOLDS {
            assert!(r.counts.tp[k] <= r.counts.tp[k - 1]);
            assert!(r.counts.fp[k] <= r.counts.fp[k - 1]);
            assert_eq!(r.counts.tp[k] + r.counts.fn_[k], 3);
        }
    }
}
