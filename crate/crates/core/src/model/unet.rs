//! Encoder-decoder denoiser.
//!
//! Inputs are the one-hot noisy label (K channels) concatenated with a
//! convolutional stem applied to the conditioning image. Each resolution
//! level is a two-convolution block whose first convolution receives an
//! additive per-channel bias from the timestep embedding. The decoder
//! upsamples, concatenates the matching encoder skip, and a 1x1 head emits
//! logits over the K classes of the clean label.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpadError};
use crate::grid::{Image, LabelMap};

use super::ops::{self, Conv, Linear, Real};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub base_channels: usize,
    pub depth: usize,
    pub timestep_embed_dim: usize,
    pub num_classes: usize,
    pub condition_channels: usize,
}

impl PredictorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(SpadError::InvalidParam(format!("depth {} < 2", self.depth)));
        }
        if self.base_channels == 0 || self.timestep_embed_dim == 0 || self.condition_channels == 0 {
            return Err(SpadError::InvalidParam("predictor widths must be positive".into()));
        }
        if self.condition_channels != 1 {
            return Err(SpadError::InvalidParam("only grayscale conditioning is supported".into()));
        }
        if self.num_classes < 2 {
            return Err(SpadError::InvalidParam("need at least two classes".into()));
        }
        Ok(())
    }

    /// Input side lengths must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.depth - 1)
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Clone, Debug)]
struct Block {
    conv1: Conv,
    temb: Linear,
    conv2: Conv,
}

/// Parameter layout of the network. Weights live in a separate flat buffer.
#[derive(Clone, Debug)]
pub struct UNet {
    spec: PredictorSpec,
    stem: Conv,
    enc: Vec<Block>,
    /// `dec[l]` produces level-`l` features from level `l + 1`.
    dec: Vec<Block>,
    head: Conv,
    num_params: usize,
}

struct Alloc(usize);

impl Alloc {
    fn conv(&mut self, ci: usize, co: usize, k: usize) -> Conv {
        let w = self.0;
        let b = w + co * ci * k * k;
        self.0 = b + co;
        Conv { ci, co, k, w, b }
    }

    fn linear(&mut self, i: usize, o: usize) -> Linear {
        let w = self.0;
        let b = w + o * i;
        self.0 = b + o;
        Linear { i, o, w, b }
    }

    fn block(&mut self, ci: usize, co: usize, temb: usize) -> Block {
        Block {
            conv1: self.conv(ci, co, 3),
            temb: self.linear(temb, co),
            conv2: self.conv(co, co, 3),
        }
    }
}

struct BlockCache<F> {
    xpad: Vec<F>,
    a1: Vec<F>,
    a1pad: Vec<F>,
    a2: Vec<F>,
    h: usize,
    w: usize,
}

/// Activations retained for the backward pass.
pub struct ForwardCache<F> {
    cond_pad: Vec<F>,
    stem_out: Vec<F>,
    temb: Vec<F>,
    enc: Vec<BlockCache<F>>,
    dec: Vec<BlockCache<F>>,
    head_in: Vec<F>,
    h: usize,
    w: usize,
}

impl UNet {
    pub fn new(spec: PredictorSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.timestep_embed_dim;
        let mut a = Alloc(0);
        let stem = a.conv(spec.condition_channels, spec.base_channels, 3);
        let mut enc = Vec::with_capacity(spec.depth);
        for l in 0..spec.depth {
            let ci = if l == 0 {
                spec.num_classes + spec.base_channels
            } else {
                spec.channels(l - 1)
            };
            enc.push(a.block(ci, spec.channels(l), d));
        }
        let mut dec = Vec::with_capacity(spec.depth - 1);
        for l in 0..spec.depth - 1 {
            dec.push(a.block(spec.channels(l + 1) + spec.channels(l), spec.channels(l), d));
        }
        let head = a.conv(spec.channels(0), spec.num_classes, 1);
        Ok(UNet {
            spec,
            stem,
            enc,
            dec,
            head,
            num_params: a.0,
        })
    }

    pub fn spec(&self) -> &PredictorSpec {
        &self.spec
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    /// He-normal convolution weights, scaled-normal dense weights, zero biases.
    pub fn init_params<F: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        let mut p = vec![F::zero(); self.num_params];
        let mut fill = |off: usize, n: usize, std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            for v in &mut p[off..off + n] {
                *v = F::of(dist.sample(rng));
            }
        };
        let conv_init = |cv: &Conv, fill: &mut dyn FnMut(usize, usize, f64), gain: f64| {
            let fan_in = (cv.ci * cv.k * cv.k) as f64;
            fill(cv.w, cv.co * cv.ci * cv.k * cv.k, (gain / fan_in).sqrt());
        };
        conv_init(&self.stem, &mut fill, 2.0);
        for b in self.enc.iter().chain(&self.dec) {
            conv_init(&b.conv1, &mut fill, 2.0);
            fill(b.temb.w, b.temb.i * b.temb.o, (1.0 / b.temb.i as f64).sqrt());
            conv_init(&b.conv2, &mut fill, 2.0);
        }
        conv_init(&self.head, &mut fill, 1.0);
        p
    }

    fn check_inputs(&self, xt: &LabelMap, cond: &Image) -> Result<()> {
        xt.require_same_shape(cond, "noisy label vs condition")?;
        let m = self.spec.spatial_multiple();
        let (h, w) = xt.shape();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(SpadError::ShapeMismatch(format!(
                "{h}x{w} input is not divisible by {m} for depth {}",
                self.spec.depth
            )));
        }
        if let Some(&l) = xt.as_slice().iter().find(|&&l| l as usize >= self.spec.num_classes) {
            return Err(SpadError::InvalidParam(format!("label {l} outside the class range")));
        }
        Ok(())
    }

    fn block_forward<F: Real>(&self, p: &[F], b: &Block, x: &[F], temb: &[F], h: usize, w: usize) -> BlockCache<F> {
        let xpad = ops::pad1(x, b.conv1.ci, h, w);
        let mut a1 = ops::conv3_forward(p, &b.conv1, &xpad, h, w);
        let bias = ops::linear_forward(p, &b.temb, temb);
        let hw = h * w;
        for (o, &bv) in bias.iter().enumerate() {
            a1[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v += bv);
        }
        ops::relu_inplace(&mut a1);
        let a1pad = ops::pad1(&a1, b.conv1.co, h, w);
        let mut a2 = ops::conv3_forward(p, &b.conv2, &a1pad, h, w);
        ops::relu_inplace(&mut a2);
        BlockCache { xpad, a1, a1pad, a2, h, w }
    }

    /// Returns the input gradient of the block.
    #[allow(clippy::too_many_arguments)]
    fn block_backward<F: Real>(
        &self,
        p: &[F],
        grads: &mut [F],
        b: &Block,
        cache: &BlockCache<F>,
        temb: &[F],
        mut g: Vec<F>,
        need_input_grad: bool,
    ) -> Option<Vec<F>> {
        let (h, w) = (cache.h, cache.w);
        let hw = h * w;
        ops::relu_backward_inplace(&mut g, &cache.a2);
        let mut g1 = ops::conv3_backward(p, grads, &b.conv2, &cache.a1pad, &g, h, w, true).expect("requested");
        ops::relu_backward_inplace(&mut g1, &cache.a1);
        let gbias: Vec<F> = (0..b.conv1.co)
            .map(|o| g1[o * hw..(o + 1) * hw].iter().copied().sum())
            .collect();
        ops::linear_backward(grads, &b.temb, temb, &gbias);
        ops::conv3_backward(p, grads, &b.conv1, &cache.xpad, &g1, h, w, need_input_grad)
    }

    /// Logits `(K, h, w)` for the clean label, plus the cache for [`UNet::backward`].
    pub fn forward<F: Real>(
        &self,
        p: &[F],
        xt: &LabelMap,
        cond: &Image,
        t: usize,
    ) -> Result<(Vec<F>, ForwardCache<F>)> {
        if p.len() != self.num_params {
            return Err(SpadError::ShapeMismatch(format!(
                "{} parameters supplied, network has {}",
                p.len(),
                self.num_params
            )));
        }
        self.check_inputs(xt, cond)?;
        let (h, w) = xt.shape();
        let hw = h * w;
        let k = self.spec.num_classes;
        let base = self.spec.base_channels;
        let temb = ops::timestep_embedding::<F>(t, self.spec.timestep_embed_dim);

        let cond_vals: Vec<F> = cond.as_slice().iter().map(|&v| F::of(v as f64)).collect();
        let cond_pad = ops::pad1(&cond_vals, 1, h, w);
        let mut stem_out = ops::conv3_forward(p, &self.stem, &cond_pad, h, w);
        ops::relu_inplace(&mut stem_out);

        let mut x = vec![F::zero(); (k + base) * hw];
        for (i, &l) in xt.as_slice().iter().enumerate() {
            x[l as usize * hw + i] = F::one();
        }
        x[k * hw..].copy_from_slice(&stem_out);

        let mut enc = Vec::with_capacity(self.spec.depth);
        let (mut ch, mut cw) = (h, w);
        for (l, b) in self.enc.iter().enumerate() {
            if l > 0 {
                let prev: &BlockCache<F> = &enc[l - 1];
                x = ops::avgpool2(&prev.a2, b.conv1.ci, ch, cw);
                ch /= 2;
                cw /= 2;
            }
            enc.push(self.block_forward(p, b, &x, &temb, ch, cw));
        }

        let mut dec: Vec<BlockCache<F>> = Vec::with_capacity(self.spec.depth - 1);
        let mut y = enc[self.spec.depth - 1].a2.clone();
        for l in (0..self.spec.depth - 1).rev() {
            let b = &self.dec[l];
            let up_c = self.spec.channels(l + 1);
            let up = ops::upsample2(&y, up_c, ch, cw);
            ch *= 2;
            cw *= 2;
            let mut z = up;
            z.extend_from_slice(&enc[l].a2);
            let cache = self.block_forward(p, b, &z, &temb, ch, cw);
            y = cache.a2.clone();
            dec.push(cache);
        }
        // dec was filled from the deepest level upward; index it by level.
        dec.reverse();

        let logits = ops::conv1_forward(p, &self.head, &y, hw);
        Ok((
            logits,
            ForwardCache {
                cond_pad,
                stem_out,
                temb,
                enc,
                dec,
                head_in: y,
                h,
                w,
            },
        ))
    }

    /// Accumulates parameter gradients given the logits gradient.
    pub fn backward<F: Real>(&self, p: &[F], cache: &ForwardCache<F>, dlogits: &[F], grads: &mut [F]) {
        let hw = cache.h * cache.w;
        let depth = self.spec.depth;
        let k = self.spec.num_classes;
        let temb = &cache.temb;

        // Gradient arriving at each encoder level's output via the skip connections.
        let mut enc_out: Vec<Vec<F>> = cache.enc.iter().map(|c| vec![F::zero(); c.a2.len()]).collect();

        let mut g = ops::conv1_backward(p, grads, &self.head, &cache.head_in, dlogits, hw);
        for (l, c) in cache.dec.iter().enumerate().take(depth - 1) {
            let gz = self
                .block_backward(p, grads, &self.dec[l], c, temb, g, true)
                .expect("requested");
            let up_c = self.spec.channels(l + 1);
            let (g_up, g_skip) = gz.split_at(up_c * c.h * c.w);
            enc_out[l].iter_mut().zip(g_skip).for_each(|(a, &b)| *a += b);
            g = ops::upsample2_backward(g_up, up_c, c.h / 2, c.w / 2);
        }
        enc_out[depth - 1].iter_mut().zip(&g).for_each(|(a, &b)| *a += b);

        let mut carry: Option<Vec<F>> = None;
        for l in (0..depth).rev() {
            let mut go = std::mem::take(&mut enc_out[l]);
            if let Some(c) = carry.take() {
                go.iter_mut().zip(&c).for_each(|(a, &b)| *a += b);
            }
            let c = &cache.enc[l];
            let gx = self
                .block_backward(p, grads, &self.enc[l], c, temb, go, true)
                .expect("requested");
            if l > 0 {
                let prev = &cache.enc[l - 1];
                carry = Some(ops::avgpool2_backward(&gx, self.enc[l].conv1.ci, prev.h, prev.w));
            } else {
                // Input is [one-hot state | stem features]; only the stem has parameters.
                let mut g_stem = gx[k * hw..].to_vec();
                ops::relu_backward_inplace(&mut g_stem, &cache.stem_out);
                ops::conv3_backward(p, grads, &self.stem, &cache.cond_pad, &g_stem, cache.h, cache.w, false);
            }
        }
    }
}

/// Softmax over the class axis of `(K, h, w)` logits, returned pixel-major.
pub fn softmax_pixels<F: Real>(logits: &[F], k: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; hw * k];
    for i in 0..hw {
        let mut mx = f64::NEG_INFINITY;
        for c in 0..k {
            mx = mx.max(logits[c * hw + i].f64());
        }
        let mut z = 0.0;
        for c in 0..k {
            let e = (logits[c * hw + i].f64() - mx).exp();
            out[i * k + c] = e;
            z += e;
        }
        for c in 0..k {
            out[i * k + c] /= z;
        }
    }
    out
}
