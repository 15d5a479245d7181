//! Feature-map kernels with hand-written backward passes.
//!
//! Activations are channel-major `(c, h, w)` buffers. Convolutions keep a
//! zero-padded copy of their input so the backward pass can reuse it.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type the network can run in (`f32` for training, `f64` for checks).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    fn f64(self) -> f64 {
        self.to_f64().expect("finite")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Offsets of a convolution's weights `[co][ci][k][k]` and bias `[co]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv {
    pub ci: usize,
    pub co: usize,
    pub k: usize,
    pub w: usize,
    pub b: usize,
}

/// Offsets of a dense layer's weights `[o][i]` and bias `[o]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Linear {
    pub i: usize,
    pub o: usize,
    pub w: usize,
    pub b: usize,
}

#[inline]
fn axpy<F: Real>(a: F, x: &[F], y: &mut [F]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
fn dot<F: Real>(x: &[F], y: &[F]) -> F {
    let mut acc = F::zero();
    for (&a, &b) in x.iter().zip(y) {
        acc += a * b;
    }
    acc
}

pub(crate) fn pad1<F: Real>(x: &[F], c: usize, h: usize, w: usize) -> Vec<F> {
    let pw = w + 2;
    let plane = (h + 2) * pw;
    let mut out = vec![F::zero(); c * plane];
    for ch in 0..c {
        for y in 0..h {
            let src = &x[(ch * h + y) * w..(ch * h + y + 1) * w];
            let dst = ch * plane + (y + 1) * pw + 1;
            out[dst..dst + w].copy_from_slice(src);
        }
    }
    out
}

fn crop1<F: Real>(xp: &[F], c: usize, h: usize, w: usize) -> Vec<F> {
    let pw = w + 2;
    let plane = (h + 2) * pw;
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            let src = ch * plane + (y + 1) * pw + 1;
            out.extend_from_slice(&xp[src..src + w]);
        }
    }
    out
}

/// 3x3 convolution, stride 1, zero padding 1. `xpad` comes from [`pad1`].
pub(crate) fn conv3_forward<F: Real>(p: &[F], cv: &Conv, xpad: &[F], h: usize, w: usize) -> Vec<F> {
    let pw = w + 2;
    let plane = (h + 2) * pw;
    let hw = h * w;
    let mut out = vec![F::zero(); cv.co * hw];
    for o in 0..cv.co {
        let ob = &mut out[o * hw..(o + 1) * hw];
        ob.iter_mut().for_each(|v| *v = p[cv.b + o]);
        for i in 0..cv.ci {
            let ib = &xpad[i * plane..(i + 1) * plane];
            let wbase = cv.w + (o * cv.ci + i) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = p[wbase + ky * 3 + kx];
                    for y in 0..h {
                        let s = (y + ky) * pw + kx;
                        axpy(wv, &ib[s..s + w], &mut ob[y * w..(y + 1) * w]);
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3_backward<F: Real>(
    p: &[F],
    grads: &mut [F],
    cv: &Conv,
    xpad: &[F],
    gout: &[F],
    h: usize,
    w: usize,
    need_input_grad: bool,
) -> Option<Vec<F>> {
    let pw = w + 2;
    let plane = (h + 2) * pw;
    let hw = h * w;
    let mut dxpad = if need_input_grad {
        vec![F::zero(); cv.ci * plane]
    } else {
        Vec::new()
    };
    for o in 0..cv.co {
        let go = &gout[o * hw..(o + 1) * hw];
        grads[cv.b + o] += go.iter().copied().sum::<F>();
        for i in 0..cv.ci {
            let ib = &xpad[i * plane..(i + 1) * plane];
            let wbase = cv.w + (o * cv.ci + i) * 9;
            for ky in 0..3 {
                for kx in 0..3 {
                    let mut acc = F::zero();
                    for y in 0..h {
                        let s = (y + ky) * pw + kx;
                        acc += dot(&go[y * w..(y + 1) * w], &ib[s..s + w]);
                    }
                    grads[wbase + ky * 3 + kx] += acc;
                    if need_input_grad {
                        let wv = p[wbase + ky * 3 + kx];
                        let db = &mut dxpad[i * plane..(i + 1) * plane];
                        for y in 0..h {
                            let s = (y + ky) * pw + kx;
                            axpy(wv, &go[y * w..(y + 1) * w], &mut db[s..s + w]);
                        }
                    }
                }
            }
        }
    }
    need_input_grad.then(|| crop1(&dxpad, cv.ci, h, w))
}

/// Pointwise (1x1) convolution.
pub(crate) fn conv1_forward<F: Real>(p: &[F], cv: &Conv, x: &[F], hw: usize) -> Vec<F> {
    let mut out = vec![F::zero(); cv.co * hw];
    for o in 0..cv.co {
        let ob = &mut out[o * hw..(o + 1) * hw];
        ob.iter_mut().for_each(|v| *v = p[cv.b + o]);
        for i in 0..cv.ci {
            axpy(p[cv.w + o * cv.ci + i], &x[i * hw..(i + 1) * hw], ob);
        }
    }
    out
}

pub(crate) fn conv1_backward<F: Real>(
    p: &[F],
    grads: &mut [F],
    cv: &Conv,
    x: &[F],
    gout: &[F],
    hw: usize,
) -> Vec<F> {
    let mut dx = vec![F::zero(); cv.ci * hw];
    for o in 0..cv.co {
        let go = &gout[o * hw..(o + 1) * hw];
        grads[cv.b + o] += go.iter().copied().sum::<F>();
        for i in 0..cv.ci {
            let xi = &x[i * hw..(i + 1) * hw];
            grads[cv.w + o * cv.ci + i] += dot(go, xi);
            axpy(p[cv.w + o * cv.ci + i], go, &mut dx[i * hw..(i + 1) * hw]);
        }
    }
    dx
}

pub(crate) fn linear_forward<F: Real>(p: &[F], l: &Linear, x: &[F]) -> Vec<F> {
    (0..l.o)
        .map(|o| p[l.b + o] + dot(&p[l.w + o * l.i..l.w + (o + 1) * l.i], x))
        .collect()
}

pub(crate) fn linear_backward<F: Real>(grads: &mut [F], l: &Linear, x: &[F], gout: &[F]) {
    for o in 0..l.o {
        grads[l.b + o] += gout[o];
        axpy(gout[o], x, &mut grads[l.w + o * l.i..l.w + (o + 1) * l.i]);
    }
}

pub(crate) fn relu_inplace<F: Real>(x: &mut [F]) {
    for v in x.iter_mut() {
        if *v < F::zero() {
            *v = F::zero();
        }
    }
}

/// Zeroes gradient entries where the activation output was not positive.
pub(crate) fn relu_backward_inplace<F: Real>(g: &mut [F], activated: &[F]) {
    for (gv, &a) in g.iter_mut().zip(activated) {
        if a <= F::zero() {
            *gv = F::zero();
        }
    }
}

/// 2x2 average pooling.
pub(crate) fn avgpool2<F: Real>(x: &[F], c: usize, h: usize, w: usize) -> Vec<F> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = F::of(0.25);
    let mut out = vec![F::zero(); c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let i = (ch * h + 2 * y) * w + 2 * xx;
                out[(ch * oh + y) * ow + xx] = (x[i] + x[i + 1] + x[i + w] + x[i + w + 1]) * quarter;
            }
        }
    }
    out
}

pub(crate) fn avgpool2_backward<F: Real>(g: &[F], c: usize, h: usize, w: usize) -> Vec<F> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = F::of(0.25);
    let mut dx = vec![F::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let v = g[(ch * oh + y) * ow + xx] * quarter;
                let i = (ch * h + 2 * y) * w + 2 * xx;
                dx[i] = v;
                dx[i + 1] = v;
                dx[i + w] = v;
                dx[i + w + 1] = v;
            }
        }
    }
    dx
}

/// Nearest-neighbour 2x upsampling of a `(c, h, w)` map.
pub(crate) fn upsample2<F: Real>(x: &[F], c: usize, h: usize, w: usize) -> Vec<F> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![F::zero(); c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                out[(ch * oh + y) * ow + xx] = x[(ch * h + y / 2) * w + xx / 2];
            }
        }
    }
    out
}

/// Gradient of [`upsample2`]; `h, w` are the small (input) dimensions.
pub(crate) fn upsample2_backward<F: Real>(g: &[F], c: usize, h: usize, w: usize) -> Vec<F> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![F::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                dx[(ch * h + y / 2) * w + xx / 2] += g[(ch * oh + y) * ow + xx];
            }
        }
    }
    dx
}

/// Sinusoidal embedding of a timestep.
pub(crate) fn timestep_embedding<F: Real>(t: usize, dim: usize) -> Vec<F> {
    let half = dim / 2;
    let mut out = vec![F::zero(); dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        let arg = t as f64 * freq;
        out[i] = F::of(arg.sin());
        out[half + i] = F::of(arg.cos());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 3x3 convolution with explicit bounds checks, as a reference.
    fn naive_conv3(p: &[f64], cv: &Conv, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; cv.co * h * w];
        for o in 0..cv.co {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut acc = p[cv.b + o];
                    for i in 0..cv.ci {
                        for ky in -1..=1isize {
                            for kx in -1..=1isize {
                                let (yy, xs) = (y + ky, xx + kx);
                                if yy >= 0 && xs >= 0 && yy < h as isize && xs < w as isize {
                                    let wi = cv.w + ((o * cv.ci + i) * 3 + (ky + 1) as usize) * 3 + (kx + 1) as usize;
                                    acc += p[wi] * x[(i * h + yy as usize) * w + xs as usize];
                                }
                            }
                        }
                    }
                    out[(o * h + y as usize) * w + xx as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv3_matches_naive() {
        let (ci, co, h, w) = (2, 3, 5, 4);
        let cv = Conv { ci, co, k: 3, w: 0, b: ci * co * 9 };
        let p: Vec<f64> = (0..cv.b + co).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let x: Vec<f64> = (0..ci * h * w).map(|i| ((i * 13 % 7) as f64 - 3.0) / 3.0).collect();
        let fast = conv3_forward(&p, &cv, &pad1(&x, ci, h, w), h, w);
        let slow = naive_conv3(&p, &cv, &x, h, w);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv3_backward_matches_finite_differences() {
        let (ci, co, h, w) = (2, 2, 4, 3);
        let cv = Conv { ci, co, k: 3, w: 0, b: ci * co * 9 };
        let mut p: Vec<f64> = (0..cv.b + co).map(|i| ((i * 29 % 13) as f64 - 6.0) / 9.0).collect();
        let x: Vec<f64> = (0..ci * h * w).map(|i| ((i * 17 % 5) as f64 - 2.0) / 2.0).collect();
        let gout: Vec<f64> = (0..co * h * w).map(|i| ((i * 7 % 3) as f64 - 1.0) / 2.0).collect();
        let loss = |p: &[f64], x: &[f64]| -> f64 {
            conv3_forward(p, &cv, &pad1(x, ci, h, w), h, w).iter().zip(&gout).map(|(a, b)| a * b).sum()
        };
        let mut g = vec![0.0; p.len()];
        let dx = conv3_backward(&p, &mut g, &cv, &pad1(&x, ci, h, w), &gout, h, w, true).unwrap();
        let eps = 1e-6;
        for j in 0..p.len() {
            let orig = p[j];
            p[j] = orig + eps;
            let up = loss(&p, &x);
            p[j] = orig - eps;
            let dn = loss(&p, &x);
            p[j] = orig;
            assert!(((up - dn) / (2.0 * eps) - g[j]).abs() < 1e-6);
        }
        let mut xm = x.clone();
        for j in 0..x.len() {
            xm[j] = x[j] + eps;
            let up = loss(&p, &xm);
            xm[j] = x[j] - eps;
            let dn = loss(&p, &xm);
            xm[j] = x[j];
            assert!(((up - dn) / (2.0 * eps) - dx[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn pool_and_upsample_are_adjoint() {
        // <pool(x), y> == <x, pool_backward(y)> and likewise for upsampling.
        let (c, h, w) = (2, 4, 6);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..c * h * w / 4).map(|i| (i as f64).cos()).collect();
        let lhs: f64 = avgpool2(&x, c, h, w).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&avgpool2_backward(&y, c, h, w)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        let lhs: f64 = upsample2(&y, c, h / 2, w / 2).iter().zip(&x).map(|(a, b)| a * b).sum();
        let rhs: f64 = y.iter().zip(&upsample2_backward(&x, c, h / 2, w / 2)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn embedding_is_bounded_and_distinct() {
        let a: Vec<f64> = timestep_embedding(1, 16);
        let b: Vec<f64> = timestep_embedding(2, 16);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(a, b);
    }
}
