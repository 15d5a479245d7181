//! Conditional denoiser and its training signal.
//!
//! The network reads the noisy label `x_t`, the conditioning image and the
//! timestep, and predicts a distribution over the clean label `x_0`. The
//! reverse transition is that prediction pushed through the exact posterior
//! (see [`crate::diffusion::reverse_from_x0`]); at `t = 1` the clean-label
//! prediction is used directly.

mod adam;
mod checkpoint;
mod ops;
mod unet;

pub use adam::{Adam, AdamState};
pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use ops::Real;
pub use unet::{softmax_pixels, ForwardCache, PredictorSpec, UNet};

use rand::Rng;

use crate::config::SpadConfig;
use crate::diffusion::{self, CategoricalField, DiffusionSpec, ReversePredictor, PROB_FLOOR};
use crate::error::{Result, SpadError};
use crate::grid::{Image, LabelMap};

/// Recorded in manifests and checkpoints.
pub const PARAMETERIZATION: &str = "x0-prediction mapped through the exact posterior";

/// Exact number of trainable scalars for `spec`.
pub fn count_parameters(spec: &PredictorSpec) -> Result<usize> {
    Ok(UNet::new(spec.clone())?.num_params())
}

impl PredictorSpec {
    pub fn from_config(config: &SpadConfig) -> Self {
        PredictorSpec {
            base_channels: config.model.base_channels,
            depth: config.model.depth,
            timestep_embed_dim: config.model.timestep_embed_dim,
            num_classes: config.diffusion.num_classes,
            condition_channels: 1,
        }
    }
}

/// Reverse transition for step `t` given the network's clean-label distribution.
fn transition_from_x0(
    xt: &LabelMap,
    x0_probs: Vec<f64>,
    t: usize,
    spec: &DiffusionSpec,
) -> Result<CategoricalField> {
    let (h, w) = xt.shape();
    let field = CategoricalField::from_vec(h, w, spec.num_classes(), x0_probs)?;
    if t == 1 {
        Ok(field)
    } else {
        diffusion::reverse_from_x0(xt, &field, t, spec)
    }
}

fn check_timestep(t: usize, spec: &DiffusionSpec) -> Result<()> {
    if t < 1 || t > spec.steps() {
        return Err(SpadError::InvalidTimestep {
            t,
            lo: 1,
            hi: spec.steps(),
        });
    }
    Ok(())
}

/// A network together with its weights.
#[derive(Clone, Debug)]
pub struct Denoiser<F: Real = f32> {
    net: UNet,
    params: Vec<F>,
}

impl<F: Real> Denoiser<F> {
    pub fn new(net: UNet, params: Vec<F>) -> Result<Self> {
        if params.len() != net.num_params() {
            return Err(SpadError::ShapeMismatch(format!(
                "{} weights for a network with {} parameters",
                params.len(),
                net.num_params()
            )));
        }
        Ok(Denoiser { net, params })
    }

    pub fn initialized<R: Rng + ?Sized>(spec: PredictorSpec, rng: &mut R) -> Result<Self> {
        let net = UNet::new(spec)?;
        let params = net.init_params(rng);
        Ok(Denoiser { net, params })
    }

    pub fn net(&self) -> &UNet {
        &self.net
    }

    pub fn spec(&self) -> &PredictorSpec {
        self.net.spec()
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    /// Predicted distribution of the clean label, pixel-major.
    pub fn predict_x0(&self, xt: &LabelMap, condition: &Image, t: usize) -> Result<CategoricalField> {
        let (logits, _) = self.net.forward(&self.params, xt, condition, t)?;
        let (h, w) = xt.shape();
        let k = self.spec().num_classes;
        CategoricalField::from_vec(h, w, k, softmax_pixels(&logits, k, h * w))
    }

    /// Loss for one example; parameter gradients are added into `grads`.
    pub fn loss_and_grad(
        &self,
        x0: &LabelMap,
        xt: &LabelMap,
        condition: &Image,
        t: usize,
        spec: &DiffusionSpec,
        grads: &mut [F],
    ) -> Result<f64> {
        loss_and_grad(&self.net, &self.params, x0, xt, condition, t, spec, 0.0, grads)
    }

    /// As [`Denoiser::loss_and_grad`], plus `aux_weight` times the cross-entropy of
    /// the predicted clean label at `t >= 2`.
    #[allow(clippy::too_many_arguments)]
    pub fn hybrid_loss_and_grad(
        &self,
        x0: &LabelMap,
        xt: &LabelMap,
        condition: &Image,
        t: usize,
        spec: &DiffusionSpec,
        aux_weight: f64,
        grads: &mut [F],
    ) -> Result<f64> {
        loss_and_grad(&self.net, &self.params, x0, xt, condition, t, spec, aux_weight, grads)
    }

    /// Loss for one example without gradients.
    pub fn loss(
        &self,
        x0: &LabelMap,
        xt: &LabelMap,
        condition: &Image,
        t: usize,
        spec: &DiffusionSpec,
    ) -> Result<f64> {
        let pred = self.predict_reverse(xt, condition, t, spec)?;
        diffusion::diffusion_loss(&pred, x0, xt, t, spec)
    }
}

impl<F: Real> ReversePredictor for Denoiser<F> {
    fn predict_reverse(
        &self,
        xt: &LabelMap,
        condition: &Image,
        t: usize,
        spec: &DiffusionSpec,
    ) -> Result<CategoricalField> {
        check_timestep(t, spec)?;
        if spec.num_classes() != self.spec().num_classes {
            return Err(SpadError::InvalidParam(format!(
                "diffusion has {} classes, predictor {}",
                spec.num_classes(),
                self.spec().num_classes
            )));
        }
        let x0 = self.predict_x0(xt, condition, t)?;
        transition_from_x0(xt, x0.as_slice().to_vec(), t, spec)
    }
}

/// Diffusion loss of the network's reverse transition and its gradient.
///
/// For `t >= 2`, with `a_j = q(x_t | x_{t-1} = j)`, `m_j = abar p_j + (1 - abar)/K`
/// and `S = sum_j a_j m_j`, the per-pixel loss is
/// `sum_j q_j ln q_j - sum_j q_j ln(a_j m_j) + ln S`, so
/// `dL/dp_j = abar (a_j / S - q_j / m_j)`. At `t = 1` it is cross-entropy.
/// A positive `aux_weight` adds that multiple of the x0 cross-entropy for `t >= 2`.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_grad<F: Real>(
    net: &UNet,
    params: &[F],
    x0: &LabelMap,
    xt: &LabelMap,
    condition: &Image,
    t: usize,
    spec: &DiffusionSpec,
    aux_weight: f64,
    grads: &mut [F],
) -> Result<f64> {
    check_timestep(t, spec)?;
    let k = spec.num_classes();
    if k != net.spec().num_classes {
        return Err(SpadError::InvalidParam("class count mismatch".into()));
    }
    x0.require_same_shape(xt, "x_0 vs x_t")?;
    if grads.len() != params.len() {
        return Err(SpadError::ShapeMismatch("gradient buffer size".into()));
    }
    let (logits, cache) = net.forward(params, xt, condition, t)?;
    let (h, w) = xt.shape();
    let hw = h * w;
    let probs = softmax_pixels(&logits, k, hw);
    let n = hw as f64;
    let mut total = 0.0;
    let mut dlogits = vec![F::zero(); k * hw];
    let mut g = vec![0.0; k];

    if t == 1 {
        for (i, &l) in x0.as_slice().iter().enumerate() {
            let p = &probs[i * k..(i + 1) * k];
            total -= p[l as usize].max(PROB_FLOOR).ln();
            for c in 0..k {
                let onehot = if c == l as usize { 1.0 } else { 0.0 };
                dlogits[c * hw + i] = F::of((p[c] - onehot) / n);
            }
        }
    } else {
        let alpha_t = spec.step_alpha(t);
        let abar = spec.alpha_bar(t - 1);
        let leak_prior = (1.0 - abar) / k as f64;
        let leak_step = (1.0 - alpha_t) / k as f64;
        let mut q = vec![0.0; k];
        let mut a = vec![0.0; k];
        let mut m = vec![0.0; k];
        for i in 0..hw {
            let p = &probs[i * k..(i + 1) * k];
            let xt_i = xt.as_slice()[i] as usize;
            diffusion::posterior_pixel(xt_i, x0.as_slice()[i] as usize, alpha_t, abar, &mut q);
            let mut s = 0.0;
            for j in 0..k {
                a[j] = if j == xt_i { alpha_t + leak_step } else { leak_step };
                m[j] = abar * p[j] + leak_prior;
                s += a[j] * m[j];
            }
            let s = s.max(PROB_FLOOR);
            let pred: Vec<f64> = (0..k).map(|j| a[j] * m[j] / s).collect();
            total += diffusion::kl_pixel(&q, &pred);
            let mut dot = 0.0;
            for j in 0..k {
                g[j] = abar * (a[j] / s - q[j] / m[j].max(PROB_FLOOR));
                dot += p[j] * g[j];
            }
            let l0 = x0.as_slice()[i] as usize;
            if aux_weight > 0.0 {
                total -= aux_weight * p[l0].max(PROB_FLOOR).ln();
            }
            for j in 0..k {
                let onehot = if j == l0 { 1.0 } else { 0.0 };
                let ce = aux_weight * (p[j] - onehot);
                dlogits[j * hw + i] = F::of((p[j] * (g[j] - dot) + ce) / n);
            }
        }
    }
    net.backward(params, &cache, &dlogits, grads);
    Ok(total / n)
}
