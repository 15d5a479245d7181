//! Intersection-over-union and Dice scores.
//!
//! The default protocol pools TP/FP/FN over every test pixel before taking
//! ratios. Means are over foreground classes only, skipping classes that
//! never occur in either prediction or ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::MetricsProtocol;
use crate::error::{Result, SpadError};
use crate::grid::LabelMap;
use crate::types::BACKGROUND;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl ClassCounts {
    pub fn new(num_classes: usize) -> Self {
        ClassCounts {
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            fn_: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    /// Adds the confusion counts of one prediction/ground-truth pair.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        pred.require_same_shape(gt, "prediction vs ground truth")?;
        let k = self.num_classes();
        for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
            let (p, g) = (p as usize, g as usize);
            if p >= k || g >= k {
                return Err(SpadError::InvalidParam(format!(
                    "label {} outside {k} classes",
                    p.max(g)
                )));
            }
            if p == g {
                self.tp[p] += 1;
            } else {
                self.fp[p] += 1;
                self.fn_[g] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ClassCounts) -> Result<()> {
        if other.num_classes() != self.num_classes() {
            return Err(SpadError::ShapeMismatch("class counts of different sizes".into()));
        }
        for c in 0..self.num_classes() {
            self.tp[c] += other.tp[c];
            self.fp[c] += other.fp[c];
            self.fn_[c] += other.fn_[c];
        }
        Ok(())
    }

    /// `(IoU, Dice)` for class `c`, or `None` when the class never occurs.
    pub fn scores(&self, c: usize) -> Option<(f64, f64)> {
        let (tp, fp, fn_) = (self.tp[c] as f64, self.fp[c] as f64, self.fn_[c] as f64);
        let denom = tp + fp + fn_;
        (denom > 0.0).then(|| (tp / denom, 2.0 * tp / (2.0 * tp + fp + fn_)))
    }
}

/// Scores for one class; `None` marks an undefined value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub iou: Option<f64>,
    pub dice: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: BTreeMap<String, ClassScore>,
    pub mean_iou: Option<f64>,
    pub mean_dice: Option<f64>,
    pub protocol: MetricsProtocol,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

pub fn class_name(c: usize) -> String {
    if c == BACKGROUND as usize {
        "background".into()
    } else {
        format!("class_{c}")
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Dataset-level scores from pooled counts.
pub fn iou_dice(counts: &ClassCounts) -> MetricsReport {
    let k = counts.num_classes();
    let scores: Vec<Option<(f64, f64)>> = (0..k).map(|c| counts.scores(c)).collect();
    let per_class = scores
        .iter()
        .enumerate()
        .map(|(c, s)| {
            (
                class_name(c),
                ClassScore {
                    iou: s.map(|v| v.0),
                    dice: s.map(|v| v.1),
                },
            )
        })
        .collect();
    let fg = || scores.iter().skip(1).flatten();
    MetricsReport {
        per_class,
        mean_iou: mean(fg().map(|s| s.0)),
        mean_dice: mean(fg().map(|s| s.1)),
        protocol: MetricsProtocol::DatasetLevel,
        config_hash: None,
    }
}

/// Averages of per-image scores; each image contributes only the classes it defines.
pub fn per_image_report(per_image: &[ClassCounts], num_classes: usize) -> MetricsReport {
    let mut class_iou: Vec<Vec<f64>> = vec![Vec::new(); num_classes];
    let mut class_dice: Vec<Vec<f64>> = vec![Vec::new(); num_classes];
    let mut image_iou = Vec::new();
    let mut image_dice = Vec::new();
    for counts in per_image {
        let mut fg = Vec::new();
        for c in 0..num_classes {
            if let Some((iou, dice)) = counts.scores(c) {
                class_iou[c].push(iou);
                class_dice[c].push(dice);
                if c != BACKGROUND as usize {
                    fg.push((iou, dice));
                }
            }
        }
        if let Some(v) = mean(fg.iter().map(|s| s.0)) {
            image_iou.push(v);
        }
        if let Some(v) = mean(fg.iter().map(|s| s.1)) {
            image_dice.push(v);
        }
    }
    let per_class = (0..num_classes)
        .map(|c| {
            (
                class_name(c),
                ClassScore {
                    iou: mean(class_iou[c].iter().copied()),
                    dice: mean(class_dice[c].iter().copied()),
                },
            )
        })
        .collect();
    MetricsReport {
        per_class,
        mean_iou: mean(image_iou.into_iter()),
        mean_dice: mean(image_dice.into_iter()),
        protocol: MetricsProtocol::PerImage,
        config_hash: None,
    }
}
