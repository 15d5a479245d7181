//! Side-by-side rendering of one training condition.

use crate::config::SpadConfig;
use crate::data::encode_rgb_png;
use crate::error::Result;
use crate::grid::LabelMap;
use crate::perturb::{perturb_condition, PerturbOutcome};
use crate::schedule::schedule_for_epoch;
use crate::seed::sample_rng;
use crate::types::SegSample;

const PALETTE: [[u8; 3]; 8] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
];

pub fn label_color(class: u8) -> [u8; 3] {
    PALETTE[class as usize % PALETTE.len()]
}

fn gray(v: f32) -> [u8; 3] {
    let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    [g, g, g]
}

/// RGB bytes of a label map in the preview palette.
pub fn colorize_labels(label: &LabelMap) -> Vec<u8> {
    label.as_slice().iter().flat_map(|&l| label_color(l)).collect()
}

/// The perturbation a training run would apply to `sample` at `epoch`.
pub fn preview_outcome(
    sample: &SegSample,
    config: &SpadConfig,
    epoch: usize,
) -> Result<PerturbOutcome> {
    let state = schedule_for_epoch(epoch, config)?;
    let mut rng = sample_rng(config.training.seed, "perturb", &sample.sample_id, epoch);
    perturb_condition(sample, &state, config, &mut rng)
}

/// Four panels left to right: input, ScD mask (red) with anchors (green),
/// BcD band (blue), perturbed condition.
pub fn perturb_preview_png(sample: &SegSample, config: &SpadConfig, epoch: usize) -> Result<Vec<u8>> {
    let out = preview_outcome(sample, config, epoch)?;
    let (h, w) = sample.shape();
    let panel = |r: usize, c: usize, which: usize| -> [u8; 3] {
        let base = gray(*sample.image.get(r, c));
        match which {
            0 => base,
            1 => {
                let anchor = out.scd.as_ref().and_then(|m| m.anchors()).is_some_and(|a| *a.get(r, c));
                let in_scd = out.scd.as_ref().is_some_and(|m| *m.mask().get(r, c));
                if anchor {
                    [40, 220, 40]
                } else if in_scd {
                    [220, 40, 40]
                } else {
                    base
                }
            }
            2 => {
                if out.bcd.as_ref().is_some_and(|m| *m.mask().get(r, c)) {
                    [40, 80, 230]
                } else {
                    base
                }
            }
            _ => gray(*out.image.get(r, c)),
        }
    };
    let gap = 2;
    let total_w = 4 * w + 3 * gap;
    let mut rgb = vec![255u8; 3 * total_w * h];
    for which in 0..4 {
        let x0 = which * (w + gap);
        for r in 0..h {
            for c in 0..w {
                let px = panel(r, c, which);
                let i = 3 * (r * total_w + x0 + c);
                rgb[i..i + 3].copy_from_slice(&px);
            }
        }
    }
    encode_rgb_png(&rgb, total_w, h)
}
