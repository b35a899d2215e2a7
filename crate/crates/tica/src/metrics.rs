//! Confusion counting and balanced error rate.
//!
//! `BER = 1 - (TP/(TP+FN) + TN/(TN+FP)) / 2`, computed from pixel tallies
//! pooled over the whole dataset; per-image values are reported alongside
//! for diagnostics. A class with no pixels contributes recall 1 and the
//! report flags the degeneracy.

use ndarray::Array2;
use thiserror::Error;

use crate::data::SamplePair;
use crate::elem::Elem;
use crate::model::{ModelError, SegModel};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction is {pred:?} but ground truth is {gt:?}")]
    ShapeMismatch {
        pred: (usize, usize),
        gt: (usize, usize),
    },
    #[error("no pixels counted")]
    EmptyCounts,
    #[error("model: {0}")]
    Model(#[from] ModelError),
}

/// Pixel tallies of binarized predictions against binary ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

/// Tally `(pred >= threshold)` against binary ground truth into `acc`.
pub fn accumulate<F: Elem>(
    pred: &Array2<F>,
    gt: &Array2<F>,
    threshold: F,
    acc: &mut ConfusionCounts,
) -> Result<(), MetricsError> {
    if pred.dim() != gt.dim() {
        return Err(MetricsError::ShapeMismatch { pred: pred.dim(), gt: gt.dim() });
    }
    for (&p, &y) in pred.iter().zip(gt.iter()) {
        let positive = p >= threshold;
        let is_shadow = y.to_f64() >= 0.5;
        match (positive, is_shadow) {
            (true, true) => acc.tp += 1,
            (true, false) => acc.fp += 1,
            (false, false) => acc.tn += 1,
            (false, true) => acc.fn_ += 1,
        }
    }
    Ok(())
}

/// The balanced error rate and its per-class components.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct BerReport {
    /// Raw fraction in [0,1]; tables render it x100.
    pub ber: f64,
    /// `1 - TP/(TP+FN)`.
    pub ber_shadow: f64,
    /// `1 - TN/(TN+FP)`.
    pub ber_nonshadow: f64,
    pub counts: ConfusionCounts,
    /// No shadow pixels existed (shadow recall defaulted to 1).
    pub degenerate_shadow: bool,
    /// No non-shadow pixels existed.
    pub degenerate_nonshadow: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_image: Vec<f64>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub metadata: serde_json::Value,
}

/// Balanced error rate of a set of confusion counts.
pub fn ber(c: &ConfusionCounts) -> Result<BerReport, MetricsError> {
    if c.total() == 0 {
        return Err(MetricsError::EmptyCounts);
    }
    let degenerate_shadow = c.tp + c.fn_ == 0;
    let degenerate_nonshadow = c.tn + c.fp == 0;
    let shadow_recall = if degenerate_shadow {
        1.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    };
    let nonshadow_recall = if degenerate_nonshadow {
        1.0
    } else {
        c.tn as f64 / (c.tn + c.fp) as f64
    };
    Ok(BerReport {
        ber: 1.0 - 0.5 * (shadow_recall + nonshadow_recall),
        ber_shadow: 1.0 - shadow_recall,
        ber_nonshadow: 1.0 - nonshadow_recall,
        counts: *c,
        degenerate_shadow,
        degenerate_nonshadow,
        per_image: Vec::new(),
        metadata: serde_json::Value::Null,
    })
}

/// Evaluate a model over a labeled dataset: eval-mode predictions, counts
/// pooled over all pixels, plus per-image BERs.
pub fn evaluate<F: Elem>(
    model: &mut SegModel<F>,
    dataset: &[SamplePair<F>],
    threshold: F,
) -> Result<BerReport, MetricsError> {
    if dataset.is_empty() {
        return Err(MetricsError::EmptyCounts);
    }
    let mut pooled = ConfusionCounts::default();
    let mut per_image = Vec::with_capacity(dataset.len());
    for chunk in dataset.chunks(8) {
        let images: Vec<_> = chunk.iter().map(|s| s.image.clone()).collect();
        let preds = model.predict_batch(&images)?;
        for (pred, sample) in preds.iter().zip(chunk.iter()) {
            let mut counts = ConfusionCounts::default();
            accumulate(pred, &sample.mask, threshold, &mut counts)?;
            per_image.push(ber(&counts)?.ber);
            pooled.merge(&counts);
        }
    }
    let mut report = ber(&pooled)?;
    report.per_image = per_image;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn perfect_and_inverted_predictions() {
        let gt = array![[1.0f32, 0.0], [0.0, 1.0]];
        let mut acc = ConfusionCounts::default();
        accumulate(&gt.clone(), &gt, 0.5, &mut acc).unwrap();
        assert_eq!(acc.fp, 0);
        assert_eq!(acc.fn_, 0);
        assert_eq!(ber(&acc).unwrap().ber, 0.0);

        let inverted = gt.mapv(|v| 1.0 - v);
        let mut acc = ConfusionCounts::default();
        accumulate(&inverted, &gt, 0.5, &mut acc).unwrap();
        assert_eq!(acc.tp + acc.tn, 0);
        assert_eq!(ber(&acc).unwrap().ber, 1.0);
    }

    #[test]
    fn hand_tally_2x2() {
        let pred = array![[0.9f64, 0.2], [0.6, 0.4]];
        let gt = array![[1.0f64, 0.0], [0.0, 0.0]];
        let mut acc = ConfusionCounts::default();
        accumulate(&pred, &gt, 0.5, &mut acc).unwrap();
        assert_eq!(
            acc,
            ConfusionCounts { tp: 1, fp: 1, tn: 2, fn_: 0 }
        );
    }

    #[test]
    fn ber_formula_spot_value() {
        let c = ConfusionCounts { tp: 40, fn_: 10, tn: 30, fp: 20 };
        let r = ber(&c).unwrap();
        assert!((r.ber - 0.30).abs() < 1e-12);
        assert!((r.ber_shadow - 0.2).abs() < 1e-12);
        assert!((r.ber_nonshadow - 0.4).abs() < 1e-12);
        assert!((r.ber - 0.5 * (r.ber_shadow + r.ber_nonshadow)).abs() < 1e-15);
    }

    #[test]
    fn ber_scale_invariance_and_complement_symmetry() {
        let c = ConfusionCounts { tp: 7, fn_: 3, tn: 11, fp: 5 };
        let scaled = ConfusionCounts { tp: 21, fn_: 9, tn: 33, fp: 15 };
        assert_eq!(ber(&c).unwrap().ber, ber(&scaled).unwrap().ber);
        let swapped = ConfusionCounts { tp: c.tn, fn_: c.fp, tn: c.tp, fp: c.fn_ };
        assert!((ber(&c).unwrap().ber - ber(&swapped).unwrap().ber).abs() < 1e-15);
    }

    #[test]
    fn degenerate_class_flagged() {
        let c = ConfusionCounts { tp: 0, fn_: 0, tn: 5, fp: 5 };
        let r = ber(&c).unwrap();
        assert!(r.degenerate_shadow);
        assert!((r.ber - 0.25).abs() < 1e-12);
        assert!(matches!(
            ber(&ConfusionCounts::default()),
            Err(MetricsError::EmptyCounts)
        ));
    }

    #[test]
    fn accumulation_is_order_independent() {
        let p1 = array![[0.9f32, 0.1]];
        let g1 = array![[1.0f32, 0.0]];
        let p2 = array![[0.3f32, 0.8]];
        let g2 = array![[1.0f32, 1.0]];
        let mut a = ConfusionCounts::default();
        accumulate(&p1, &g1, 0.5, &mut a).unwrap();
        accumulate(&p2, &g2, 0.5, &mut a).unwrap();
        let mut b = ConfusionCounts::default();
        accumulate(&p2, &g2, 0.5, &mut b).unwrap();
        accumulate(&p1, &g1, 0.5, &mut b).unwrap();
        assert_eq!(a, b);
    }
}
