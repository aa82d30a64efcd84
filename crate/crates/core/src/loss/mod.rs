//! Training objectives with analytic gradients, and MOS evaluation.
//!
//! Reductions run in f64. Cells labelled 0 (unlabeled) are excluded
//! everywhere.

mod ce;
mod lovasz;
mod metrics;

pub use ce::{cross_entropy, cross_entropy_grad, CeOutput};
pub use lovasz::{lovasz_softmax, lovasz_softmax_grad, lovasz_softmax_unchecked, present_classes};
pub use metrics::{ClassCounts, ConfusionCounts, EvalReport, PerClass};

use crate::error::{Error, Result};
use crate::io::{MosLabel, MovableLabel};
use crate::tensor::{softmax_channels, Tensor};

/// Class index per BEV cell, row-major. 0 is unlabeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelGrid {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(format!(
                "{} labels for a {height}x{width} grid",
                labels.len()
            )));
        }
        if let Some(v) = labels.iter().find(|v| **v > 2) {
            return Err(Error::invalid(format!("label {v} outside 0..=2")));
        }
        Ok(LabelGrid { height, width, labels })
    }

    pub fn from_mos(height: usize, width: usize, labels: &[MosLabel]) -> Result<Self> {
        Self::new(height, width, labels.iter().map(|l| *l as u8).collect())
    }

    pub fn from_movable(height: usize, width: usize, labels: &[MovableLabel]) -> Result<Self> {
        Self::new(height, width, labels.iter().map(|l| *l as u8).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|l| **l != 0).count()
    }

    pub(crate) fn check(&self, t: &Tensor, what: &str) -> Result<usize> {
        let (c, h, w) = t.dims3()?;
        if (h, w) != (self.height, self.width) {
            return Err(Error::shape(format!(
                "{what} is {h}x{w}, labels are {}x{}",
                self.height, self.width
            )));
        }
        if c < 2 {
            return Err(Error::shape(format!("{what} needs at least 2 classes, has {c}")));
        }
        if let Some(l) = self.labels.iter().find(|l| **l as usize >= c) {
            return Err(Error::shape(format!("label {l} has no channel in {what}")));
        }
        Ok(c)
    }
}

/// Components of the two-head objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub moving_ce: f64,
    pub moving_lovasz: f64,
    pub movable_ce: f64,
    pub movable_lovasz: f64,
    /// Unreduced CE sums, for comparison across grid sizes.
    pub moving_ce_sum: f64,
    pub movable_ce_sum: f64,
    /// Set when a head had no labelled cell; its CE is then 0.
    pub all_unlabeled: bool,
}

impl LossBreakdown {
    pub fn moving(&self) -> f64 {
        self.moving_ce + self.moving_lovasz
    }

    pub fn movable(&self) -> f64 {
        self.movable_ce + self.movable_lovasz
    }

    pub fn total(&self) -> f64 {
        self.moving() + self.movable()
    }
}

/// `(CE + Lovász)` on the moving head plus the same on the movable head.
/// Lovász-Softmax reads the softmax of the logits.
pub fn total_loss(
    moving_logits: &Tensor,
    movable_logits: &Tensor,
    moving_labels: &LabelGrid,
    movable_labels: &LabelGrid,
) -> Result<(f64, LossBreakdown)> {
    let mce = cross_entropy(moving_logits, moving_labels).map_err(|e| e.at("moving"))?;
    let bce = cross_entropy(movable_logits, movable_labels).map_err(|e| e.at("movable"))?;
    let mls = lovasz_softmax(&softmax_channels(moving_logits)?, moving_labels).map_err(|e| e.at("moving"))?;
    let bls = lovasz_softmax(&softmax_channels(movable_logits)?, movable_labels).map_err(|e| e.at("movable"))?;
    let b = LossBreakdown {
        moving_ce: mce.mean,
        moving_lovasz: mls,
        movable_ce: bce.mean,
        movable_lovasz: bls,
        moving_ce_sum: mce.sum,
        movable_ce_sum: bce.sum,
        all_unlabeled: mce.all_unlabeled || bce.all_unlabeled,
    };
    Ok((b.total(), b))
}
