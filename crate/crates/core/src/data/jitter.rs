use std::f64::consts::PI;

use rand::Rng;

use crate::error::Result;
use crate::grid::{Grid, LabelMap};
use crate::types::BACKGROUND;

/// Smooth field in [-1, 1] built from a few random plane waves.
fn displacement_field<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Grid<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let amp = rng.random_range(0.5..1.0);
            let fy = rng.random_range(-2.0..2.0) / h as f64;
            let fx = rng.random_range(-2.0..2.0) / w as f64;
            let phase = rng.random_range(0.0..2.0 * PI);
            (amp, fy, fx, phase)
        })
        .collect();
    let total: f64 = waves.iter().map(|w| w.0).sum();
    Grid::from_fn(h, w, |r, c| {
        let v = waves
            .iter()
            .map(|&(a, fy, fx, ph)| a * (2.0 * PI * (fy * r as f64 + fx * c as f64) + ph).sin())
            .sum::<f64>()
            / total;
        (2.0 * v).clamp(-1.0, 1.0)
    })
}

/// Chebyshev distance from (r, c) to the nearest pixel whose membership in
/// `class` differs from `inside`, together with that pixel's label. Searches
/// up to `radius`.
fn nearest_other(
    label: &LabelMap,
    r: usize,
    c: usize,
    class: u8,
    inside: bool,
    radius: usize,
) -> Option<(usize, u8)> {
    let (h, w) = label.shape();
    for d in 1..=radius {
        let r0 = r.saturating_sub(d);
        let r1 = (r + d).min(h - 1);
        let c0 = c.saturating_sub(d);
        let c1 = (c + d).min(w - 1);
        for rr in r0..=r1 {
            for cc in c0..=c1 {
                if rr.abs_diff(r) != d && cc.abs_diff(c) != d {
                    continue;
                }
                let l = *label.get(rr, cc);
                if (l == class) != inside {
                    return Some((d, l));
                }
            }
        }
    }
    None
}

/// Dilates or erodes every foreground region by up to `magnitude` pixels,
/// following a smooth random displacement field per class.
pub fn inject_boundary_jitter<R: Rng + ?Sized>(
    label: &LabelMap,
    magnitude: usize,
    rng: &mut R,
) -> Result<LabelMap> {
    if magnitude == 0 {
        return Ok(label.clone());
    }
    let (h, w) = label.shape();
    let classes: Vec<u8> = {
        let mut seen = [false; 256];
        label.as_slice().iter().for_each(|&l| seen[l as usize] = true);
        (1..=255u8).filter(|&c| seen[c as usize] && c != BACKGROUND).collect()
    };
    let mut out = label.clone();
    let j = magnitude as f64;
    let shift = |f: f64| (j * f).round() as i64;
    for &class in &classes {
        let field = displacement_field(h, w, rng);
        for r in 0..h {
            for c in 0..w {
                let e = shift(*field.get(r, c));
                let inside = *label.get(r, c) == class;
                if inside && e < 0 {
                    if let Some((d, other)) = nearest_other(label, r, c, class, true, magnitude) {
                        if d as i64 <= -e {
                            out.set(r, c, other);
                        }
                    }
                } else if !inside && e > 0 {
                    if let Some((d, _)) = nearest_other(label, r, c, class, false, magnitude) {
                        if d as i64 <= e {
                            out.set(r, c, class);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
