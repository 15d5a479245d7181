//! Domain types shared across the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpadError};
use crate::grid::{Image, LabelMap, Mask};

/// Label id reserved for background. Never a perturbation target.
pub const BACKGROUND: u8 = 0;

/// A grayscale image paired with its label map.
#[derive(Clone, Debug, PartialEq)]
pub struct SegSample {
    pub sample_id: String,
    pub image: Image,
    pub label: LabelMap,
    pub num_classes: usize,
}

impl SegSample {
    /// Builds a sample, rejecting it if any invariant is violated.
    pub fn new(
        sample_id: impl Into<String>,
        image: Image,
        label: LabelMap,
        num_classes: usize,
    ) -> Result<Self> {
        let sample = SegSample {
            sample_id: sample_id.into(),
            image,
            label,
            num_classes,
        };
        validate_sample(&sample)?;
        Ok(sample)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.image.shape()
    }
}

/// Checks shape agreement, intensity range and label range.
pub fn validate_sample(sample: &SegSample) -> Result<()> {
    sample.image.require_same_shape(&sample.label, "image vs label")?;
    if sample.num_classes < 2 || sample.num_classes > 256 {
        return Err(SpadError::InvalidParam(format!(
            "class count {} outside 2..=256",
            sample.num_classes
        )));
    }
    let w = sample.image.width();
    for (i, &v) in sample.image.as_slice().iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(SpadError::IntensityOutOfRange {
                row: i / w,
                col: i % w,
                value: v,
            });
        }
    }
    for (i, &l) in sample.label.as_slice().iter().enumerate() {
        if l as usize >= sample.num_classes {
            return Err(SpadError::LabelOutOfRange {
                row: i / w,
                col: i % w,
                value: l,
                classes: sample.num_classes,
            });
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskRole {
    Scd,
    Bcd,
    Merged,
}

/// A perturbation mask. Only semantic (ScD) masks carry anchors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PerturbMask {
    mask: Mask,
    anchors: Option<Mask>,
    role: MaskRole,
}

impl PerturbMask {
    pub fn scd(mask: Mask, anchors: Mask) -> Result<Self> {
        mask.require_same_shape(&anchors, "scd mask vs anchors")?;
        if !mask.is_disjoint_from(&anchors) {
            return Err(SpadError::InvalidParam(
                "anchor pixels overlap the perturbation mask".into(),
            ));
        }
        Ok(PerturbMask {
            mask,
            anchors: Some(anchors),
            role: MaskRole::Scd,
        })
    }

    pub fn bcd(mask: Mask) -> Self {
        PerturbMask {
            mask,
            anchors: None,
            role: MaskRole::Bcd,
        }
    }

    pub fn merged(mask: Mask) -> Self {
        PerturbMask {
            mask,
            anchors: None,
            role: MaskRole::Merged,
        }
    }

    pub fn empty(height: usize, width: usize, role: MaskRole) -> Self {
        let blank = Mask::filled(height, width, false);
        PerturbMask {
            anchors: (role == MaskRole::Scd).then(|| blank.clone()),
            mask: blank,
            role,
        }
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn anchors(&self) -> Option<&Mask> {
        self.anchors.as_ref()
    }

    pub fn role(&self) -> MaskRole {
        self.role
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.shape()
    }
}

/// Corruption parameters in force for one training epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub epoch: usize,
    pub sigma: f64,
    pub target_count: usize,
}
