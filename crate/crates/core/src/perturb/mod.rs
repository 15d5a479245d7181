//! Training-time corruption of the conditioning image.
//!
//! Two masks are built from the ground-truth label map:
//!
//! * the semantic mask covers a random subset of foreground targets, minus a
//!   random fraction of each target kept clean as anchors;
//! * the boundary mask is a narrow band around label transitions.
//!
//! The masks are merged by union and a single zero-mean Gaussian field is
//! added on the merged support, so overlapping pixels receive one draw.

mod boundary;

pub use boundary::{canny_edges, label_boundary, CANNY_HIGH_FRACTION, CANNY_LOW_FRACTION};

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{BoundaryMethod, SpadConfig, TargetGranularity};
use crate::error::{Result, SpadError};
use crate::grid::{Grid, Image, LabelMap, Mask};
use crate::types::{MaskRole, PerturbMask, ScheduleState, SegSample, BACKGROUND};

/// One perturbable object: a foreground class, or one connected component of it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Target {
    pub id: u32,
    pub class: u8,
    /// Row-major pixel indices.
    pub pixels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetSet {
    pub granularity: TargetGranularity,
    pub targets: Vec<Target>,
}

impl TargetSet {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn ids(&self) -> Vec<u32> {
        self.targets.iter().map(|t| t.id).collect()
    }
}

/// Lists the foreground targets present in `label`. Background is never a target.
pub fn enumerate_targets(
    label: &LabelMap,
    granularity: TargetGranularity,
    num_classes: usize,
) -> TargetSet {
    let targets = match granularity {
        TargetGranularity::Class => {
            let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
            for (i, &l) in label.as_slice().iter().enumerate() {
                if l != BACKGROUND && (l as usize) < num_classes {
                    per_class[l as usize].push(i);
                }
            }
            per_class
                .into_iter()
                .enumerate()
                .filter(|(_, px)| !px.is_empty())
                .map(|(class, pixels)| Target {
                    id: class as u32,
                    class: class as u8,
                    pixels,
                })
                .collect()
        }
        TargetGranularity::Component => connected_components(label, num_classes),
    };
    TargetSet {
        granularity,
        targets,
    }
}

/// 4-connected same-class foreground components, numbered from 1 in raster order.
fn connected_components(label: &LabelMap, num_classes: usize) -> Vec<Target> {
    let (h, w) = label.shape();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        let class = label.as_slice()[start];
        if seen[start] || class == BACKGROUND || class as usize >= num_classes {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            pixels.push(i);
            for (r, c) in label.neighbors4(i / w, i % w) {
                let j = r * w + c;
                if !seen[j] && label.as_slice()[j] == class {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        pixels.sort_unstable();
        out.push(Target {
            id: out.len() as u32 + 1,
            class,
            pixels,
        });
    }
    out
}

/// Uniform sample without replacement of `min(count, |targets|)` targets, in id order.
pub fn select_targets<R: Rng + ?Sized>(targets: &TargetSet, count: usize, rng: &mut R) -> TargetSet {
    let n = targets.len();
    let k = count.min(n);
    let mut picks = index::sample(rng, n, k).into_vec();
    picks.sort_unstable();
    TargetSet {
        granularity: targets.granularity,
        targets: picks.into_iter().map(|i| targets.targets[i].clone()).collect(),
    }
}

/// Number of anchors kept for a target of `size` pixels (round half up).
pub fn anchor_count(size: usize, anchor_ratio: f64) -> usize {
    ((anchor_ratio * size as f64) + 0.5).floor() as usize
}

/// Semantic mask: the union of the selected targets with a random
/// `anchor_ratio` fraction of every target held out as clean anchors.
pub fn build_scd_mask<R: Rng + ?Sized>(
    label: &LabelMap,
    selected: &TargetSet,
    anchor_ratio: f64,
    rng: &mut R,
) -> Result<PerturbMask> {
    if !(anchor_ratio > 0.0 && anchor_ratio < 1.0) {
        return Err(SpadError::InvalidParam(format!(
            "anchor_ratio {anchor_ratio} must lie in (0, 1)"
        )));
    }
    let (h, w) = label.shape();
    let mut mask = Mask::filled(h, w, false);
    let mut anchors = Mask::filled(h, w, false);
    for target in &selected.targets {
        let n = target.pixels.len();
        let k = anchor_count(n, anchor_ratio);
        for &p in &target.pixels {
            if p >= h * w {
                return Err(SpadError::ShapeMismatch(format!(
                    "target {} references pixel {p} outside a {h}x{w} label",
                    target.id
                )));
            }
            mask.as_mut_slice()[p] = true;
        }
        for i in index::sample(rng, n, k) {
            let p = target.pixels[i];
            mask.as_mut_slice()[p] = false;
            anchors.as_mut_slice()[p] = true;
        }
    }
    PerturbMask::scd(mask, anchors)
}

/// Boundary mask: label transitions dilated by `band_half_width` (Chebyshev).
pub fn build_bcd_mask(
    label: &LabelMap,
    band_half_width: usize,
    method: BoundaryMethod,
) -> Result<PerturbMask> {
    if band_half_width < 1 {
        return Err(SpadError::InvalidParam(
            "band_half_width must be at least 1".into(),
        ));
    }
    let edges = match method {
        BoundaryMethod::Morphological => label_boundary(label),
        BoundaryMethod::Canny => canny_edges(label),
    };
    Ok(PerturbMask::bcd(edges.dilate(band_half_width)))
}

/// Union of two masks. Anchors are not carried into the merged mask, so an
/// anchor covered by the other mask ends up perturbed.
pub fn merge_masks(a: &PerturbMask, b: &PerturbMask) -> Result<PerturbMask> {
    Ok(PerturbMask::merged(a.mask().union(b.mask())?))
}

/// Adds i.i.d. `N(0, sigma^2)` noise on mask pixels; everything else is copied
/// bit-for-bit. One draw per masked pixel in row-major order.
pub fn apply_perturbation<R: Rng + ?Sized>(
    image: &Image,
    mask: &PerturbMask,
    sigma: f64,
    rng: &mut R,
    clamp: bool,
) -> Result<Image> {
    image.require_same_shape(mask.mask(), "image vs perturbation mask")?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(SpadError::InvalidParam(format!(
            "sigma must be non-negative, got {sigma}"
        )));
    }
    let mut out = image.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).expect("sigma checked above");
    for (v, &m) in out.as_mut_slice().iter_mut().zip(mask.mask().as_slice()) {
        if m {
            let noisy = *v + normal.sample(rng) as f32;
            *v = if clamp { noisy.clamp(0.0, 1.0) } else { noisy };
        }
    }
    Ok(out)
}

/// Result of corrupting one conditioning image.
#[derive(Clone, Debug)]
pub struct PerturbOutcome {
    pub image: Image,
    pub merged: PerturbMask,
    pub scd: Option<PerturbMask>,
    pub bcd: Option<PerturbMask>,
}

/// Full pipeline for one sample in one epoch: target selection, semantic
/// mask, boundary mask, union, then noise at the epoch's intensity.
pub fn perturb_condition<R: Rng + ?Sized>(
    sample: &SegSample,
    state: &ScheduleState,
    config: &SpadConfig,
    rng: &mut R,
) -> Result<PerturbOutcome> {
    let (h, w) = sample.shape();
    let scd = if config.enable_scd {
        let all = enumerate_targets(&sample.label, config.target_granularity, sample.num_classes);
        let chosen = select_targets(&all, state.target_count, rng);
        Some(build_scd_mask(&sample.label, &chosen, config.anchor_ratio, rng)?)
    } else {
        None
    };
    let bcd = if config.enable_bcd {
        Some(build_bcd_mask(
            &sample.label,
            config.band_half_width,
            config.boundary_method,
        )?)
    } else {
        None
    };
    let merged = match (&scd, &bcd) {
        (Some(s), Some(b)) => merge_masks(s, b)?,
        (Some(m), None) | (None, Some(m)) => PerturbMask::merged(m.mask().clone()),
        (None, None) => PerturbMask::empty(h, w, MaskRole::Merged),
    };
    let image = apply_perturbation(
        &sample.image,
        &merged,
        state.sigma,
        rng,
        config.clamp_condition,
    )?;
    Ok(PerturbOutcome {
        image,
        merged,
        scd,
        bcd,
    })
}

/// Grid of per-pixel component ids (0 for background); handy for inspection.
pub fn component_map(targets: &TargetSet, height: usize, width: usize) -> Grid<u32> {
    let mut out = Grid::new(height, width);
    for t in &targets.targets {
        for &p in &t.pixels {
            out.as_mut_slice()[p] = t.id;
        }
    }
    out
}
