use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::MosLabel;

/// Per-class TP/FP/FN over labelled ground truth. Index by `MosLabel as usize`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: [u64; 3],
    pub fp: [u64; 3],
    pub fn_: [u64; 3],
}

impl ConfusionCounts {
    /// Adds one frame. Unlabeled ground truth is skipped; an unlabeled
    /// prediction on a labelled point is a miss for the true class.
    pub fn accumulate(&mut self, pred: &[MosLabel], gt: &[MosLabel]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::shape(format!(
                "{} predictions for {} ground-truth labels",
                pred.len(),
                gt.len()
            )));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if g == MosLabel::Unlabeled {
                continue;
            }
            if p == g {
                self.tp[g as usize] += 1;
            } else {
                self.fn_[g as usize] += 1;
                self.fp[p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        for k in 0..3 {
            self.tp[k] += other.tp[k];
            self.fp[k] += other.fp[k];
            self.fn_[k] += other.fn_[k];
        }
    }

    /// `TP / (TP + FP + FN)`; absent when the denominator is 0.
    pub fn iou(&self, class: MosLabel) -> Option<f64> {
        let k = class as usize;
        let den = self.tp[k] + self.fp[k] + self.fn_[k];
        (den > 0).then(|| self.tp[k] as f64 / den as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClass<T> {
    #[serde(rename = "static")]
    pub static_: T,
    pub moving: T,
}

/// The evaluation JSON. Field order is the serialisation order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_iou: PerClass<Option<f64>>,
    pub moving_iou: Option<f64>,
    pub counts: PerClass<ClassCounts>,
    pub frames: usize,
}

impl EvalReport {
    pub fn new(c: &ConfusionCounts, frames: usize) -> Self {
        let cc = |l: MosLabel| ClassCounts {
            tp: c.tp[l as usize],
            fp: c.fp[l as usize],
            fn_: c.fn_[l as usize],
        };
        EvalReport {
            per_class_iou: PerClass {
                static_: c.iou(MosLabel::Static),
                moving: c.iou(MosLabel::Moving),
            },
            moving_iou: c.iou(MosLabel::Moving),
            counts: PerClass {
                static_: cc(MosLabel::Static),
                moving: cc(MosLabel::Moving),
            },
            frames,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use MosLabel::*;

    #[test]
    fn iou_ratio() {
        let c = ConfusionCounts {
            tp: [0, 0, 3],
            fp: [0, 0, 1],
            fn_: [0, 0, 2],
        };
        assert_eq!(c.iou(Moving), Some(0.5));
        assert_eq!(c.iou(Static), None);
    }

    #[test]
    fn perfect_and_disjoint() {
        let gt = [Moving, Static, Unlabeled, Moving];
        let mut c = ConfusionCounts::default();
        c.accumulate(&gt, &gt).unwrap();
        assert_eq!(c.iou(Moving), Some(1.0));
        let mut d = ConfusionCounts::default();
        d.accumulate(&[Static, Moving, Moving, Static], &gt).unwrap();
        assert_eq!(d.iou(Moving), Some(0.0));
        assert!(d.accumulate(&[Static], &gt).is_err());
    }

    #[test]
    fn merge_is_order_free() {
        let gt = [Moving, Static, Moving];
        let mut a = ConfusionCounts::default();
        a.accumulate(&[Moving, Moving, Static], &gt).unwrap();
        let mut b = ConfusionCounts::default();
        b.accumulate(&[Static, Static, Moving], &gt).unwrap();
        let mut ab = a;
        ab.merge(&b);
        let mut ba = b;
        ba.merge(&a);
        assert_eq!(ab, ba);
    }

    #[test]
    fn report_json_shape() {
        let mut c = ConfusionCounts::default();
        c.accumulate(&[Moving, Static], &[Moving, Moving]).unwrap();
        let s = serde_json::to_string(&EvalReport::new(&c, 1)).unwrap();
        assert_eq!(
            s,
            r#"{"per_class_iou":{"static":0.0,"moving":0.5},"moving_iou":0.5,"counts":{"static":{"tp":0,"fp":1,"fn":0},"moving":{"tp":1,"fp":0,"fn":1}},"frames":1}"#
        );
    }
}
