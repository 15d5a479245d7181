//! Boundary extraction from label maps.

use crate::grid::{Grid, LabelMap, Mask};
use crate::types::BACKGROUND;

/// Canny hysteresis thresholds as fractions of the strongest suppressed response.
pub const CANNY_LOW_FRACTION: f32 = 0.6;
pub const CANNY_HIGH_FRACTION: f32 = 0.8;

/// Foreground pixels with at least one 4-neighbour carrying a different label.
///
/// Only foreground pixels are marked, so a lone object on background yields
/// its inner perimeter ring. Interfaces between two foreground classes mark
/// both sides.
pub fn label_boundary(label: &LabelMap) -> Mask {
    let (h, w) = label.shape();
    Grid::from_fn(h, w, |r, c| {
        let l = *label.get(r, c);
        l != BACKGROUND && label.neighbors4(r, c).any(|(rr, cc)| *label.get(rr, cc) != l)
    })
}

/// High-threshold Canny edges of a label map treated as an intensity image.
///
/// Labels are already noise-free, so the usual Gaussian pre-blur is skipped:
/// Sobel gradients, non-maximum suppression along the quantised gradient
/// direction, then hysteresis with thresholds relative to the maximum response.
pub fn canny_edges(label: &LabelMap) -> Mask {
    let (h, w) = label.shape();
    let at = |r: isize, c: isize| -> f32 {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        *label.get(r, c) as f32
    };
    let mut gx = Grid::<f32>::new(h, w);
    let mut gy = Grid::<f32>::new(h, w);
    let mut mag = Grid::<f32>::new(h, w);
    for r in 0..h {
        for c in 0..w {
            let (ri, ci) = (r as isize, c as isize);
            let dx = (at(ri - 1, ci + 1) + 2.0 * at(ri, ci + 1) + at(ri + 1, ci + 1))
                - (at(ri - 1, ci - 1) + 2.0 * at(ri, ci - 1) + at(ri + 1, ci - 1));
            let dy = (at(ri + 1, ci - 1) + 2.0 * at(ri + 1, ci) + at(ri + 1, ci + 1))
                - (at(ri - 1, ci - 1) + 2.0 * at(ri - 1, ci) + at(ri - 1, ci + 1));
            gx.set(r, c, dx);
            gy.set(r, c, dy);
            mag.set(r, c, dx.hypot(dy));
        }
    }

    let mag_at = |r: isize, c: isize| -> f32 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            *mag.get(r as usize, c as usize)
        }
    };
    let mut thin = Grid::<f32>::new(h, w);
    let mut peak = 0.0f32;
    for r in 0..h {
        for c in 0..w {
            let m = *mag.get(r, c);
            if m == 0.0 {
                continue;
            }
            let angle = gy.get(r, c).atan2(*gx.get(r, c)).to_degrees();
            let angle = if angle < 0.0 { angle + 180.0 } else { angle };
            // Neighbour offsets (dr, dc) along the gradient direction.
            let (dr, dc) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let (ri, ci) = (r as isize, c as isize);
            if m >= mag_at(ri + dr, ci + dc) && m >= mag_at(ri - dr, ci - dc) {
                thin.set(r, c, m);
                peak = peak.max(m);
            }
        }
    }

    let mut edges = Mask::filled(h, w, false);
    if peak == 0.0 {
        return edges;
    }
    let low = CANNY_LOW_FRACTION * peak;
    let high = CANNY_HIGH_FRACTION * peak;
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if *thin.get(r, c) >= high && !*edges.get(r, c) {
                edges.set(r, c, true);
                stack.push((r, c));
                while let Some((cr, cc)) = stack.pop() {
                    for nr in cr.saturating_sub(1)..=(cr + 1).min(h - 1) {
                        for nc in cc.saturating_sub(1)..=(cc + 1).min(w - 1) {
                            if !*edges.get(nr, nc) && *thin.get(nr, nc) >= low {
                                edges.set(nr, nc, true);
                                stack.push((nr, nc));
                            }
                        }
                    }
                }
            }
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(side: usize, top: usize, len: usize) -> LabelMap {
        Grid::from_fn(side, side, |r, c| {
            u8::from((top..top + len).contains(&r) && (top..top + len).contains(&c))
        })
    }

    #[test]
    fn square_boundary_is_inner_ring() {
        let b = label_boundary(&square(12, 4, 4));
        assert_eq!(b.count(), 12);
        assert!(!*b.get(5, 5));
        assert!(*b.get(4, 4) && *b.get(7, 5));
        assert!(!*b.get(3, 4));
    }

    #[test]
    fn uniform_label_has_no_edges() {
        let l = LabelMap::filled(10, 10, 0);
        assert_eq!(label_boundary(&l).count(), 0);
        assert_eq!(canny_edges(&l).count(), 0);
        let l = LabelMap::filled(10, 10, 2);
        assert_eq!(canny_edges(&l).count(), 0);
    }

    #[test]
    fn canny_edges_hug_the_transition() {
        let l = square(16, 5, 6);
        let edges = canny_edges(&l);
        assert!(edges.count() > 0);
        let near = label_boundary(&l).dilate(1);
        assert!(edges.is_subset_of(&near));
    }
}
