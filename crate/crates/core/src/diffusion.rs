//! Categorical diffusion over label maps.
//!
//! The forward kernel mixes each pixel's one-hot label toward the uniform
//! distribution: `q(x_t | x_{t-1}) = a_t * onehot + (1 - a_t) / K`, which
//! composes to `q(x_t | x_0) = abar_t * onehot(x_0) + (1 - abar_t) / K`.
//! Training compares the predicted reverse transition with the exact
//! posterior `q(x_{t-1} | x_t, x_0)` by KL divergence, and with the label by
//! cross-entropy at `t = 1`.

use rand::Rng;
use std::f64::consts::PI;

use crate::error::{Result, SpadError};
use crate::grid::{Image, LabelMap};

/// Probability floor applied before logarithms and divisions.
pub const PROB_FLOOR: f64 = 1e-12;
/// Offset of the cosine retention schedule.
pub const COSINE_OFFSET: f64 = 0.008;

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSpec {
    alpha_bar: Vec<f64>,
    num_classes: usize,
}

impl DiffusionSpec {
    /// Wraps a custom retention schedule. `alpha_bar[0]` must be 1 and the
    /// sequence must be non-increasing within `[0, 1]`.
    pub fn from_alpha_bar(alpha_bar: Vec<f64>, num_classes: usize) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(SpadError::InvalidParam("need at least one diffusion step".into()));
        }
        if num_classes < 2 {
            return Err(SpadError::InvalidParam(format!("need K >= 2, got {num_classes}")));
        }
        if alpha_bar[0] != 1.0 {
            return Err(SpadError::InvalidParam("alpha_bar[0] must equal 1".into()));
        }
        for (t, pair) in alpha_bar.windows(2).enumerate() {
            if !(0.0..=1.0).contains(&pair[1]) || pair[1] > pair[0] {
                return Err(SpadError::InvalidParam(format!(
                    "alpha_bar must be non-increasing in [0, 1] (step {})",
                    t + 1
                )));
            }
        }
        Ok(DiffusionSpec {
            alpha_bar,
            num_classes,
        })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Per-step retention `abar_t / abar_{t-1}`; taken as 1 once the chain is fully mixed.
    pub fn step_alpha(&self, t: usize) -> f64 {
        let prev = self.alpha_bar[t - 1];
        if prev > 0.0 {
            (self.alpha_bar[t] / prev).min(1.0)
        } else {
            1.0
        }
    }

    fn check_t(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.steps() {
            Err(SpadError::InvalidTimestep {
                t,
                lo,
                hi: self.steps(),
            })
        } else {
            Ok(())
        }
    }
}

/// Cosine retention schedule with `T` steps.
pub fn make_alpha_bar(steps: usize, num_classes: usize) -> Result<DiffusionSpec> {
    if steps < 1 {
        return Err(SpadError::InvalidParam("T must be at least 1".into()));
    }
    let s = COSINE_OFFSET;
    let f = |t: usize| {
        let x = ((t as f64 / steps as f64) + s) / (1.0 + s) * PI / 2.0;
        x.cos().powi(2)
    };
    let f0 = f(0);
    let alpha_bar = (0..=steps)
        .map(|t| if t == 0 { 1.0 } else { (f(t) / f0).clamp(0.0, 1.0) })
        .collect();
    DiffusionSpec::from_alpha_bar(alpha_bar, num_classes)
}

/// Per-pixel categorical distributions over `K` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalField {
    height: usize,
    width: usize,
    num_classes: usize,
    probs: Vec<f64>,
}

impl CategoricalField {
    pub fn from_vec(height: usize, width: usize, num_classes: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != height * width * num_classes {
            return Err(SpadError::ShapeMismatch(format!(
                "{} probabilities for {height}x{width}x{num_classes}",
                probs.len()
            )));
        }
        Ok(CategoricalField {
            height,
            width,
            num_classes,
            probs,
        })
    }

    pub fn one_hot(labels: &LabelMap, num_classes: usize) -> Self {
        let mut probs = vec![0.0; labels.len() * num_classes];
        for (i, &l) in labels.as_slice().iter().enumerate() {
            probs[i * num_classes + l as usize] = 1.0;
        }
        CategoricalField {
            height: labels.height(),
            width: labels.width(),
            num_classes,
            probs,
        }
    }

    pub fn uniform(height: usize, width: usize, num_classes: usize) -> Self {
        CategoricalField {
            height,
            width,
            num_classes,
            probs: vec![1.0 / num_classes as f64; height * width * num_classes],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.probs[index * self.num_classes..(index + 1) * self.num_classes]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Checks non-negativity and sum-to-one within `tol` at every pixel.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for (i, px) in self.probs.chunks(self.num_classes).enumerate() {
            let sum: f64 = px.iter().sum();
            if px.iter().any(|&p| p.is_nan() || p < 0.0) || (sum - 1.0).abs() > tol {
                return Err(SpadError::InvalidParam(format!(
                    "pixel {i} is not a distribution (sum {sum})"
                )));
            }
        }
        Ok(())
    }

    pub fn argmax(&self) -> LabelMap {
        let data = self
            .probs
            .chunks(self.num_classes)
            .map(|px| {
                let mut best = 0;
                for k in 1..px.len() {
                    if px[k] > px[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        LabelMap::from_vec(self.height, self.width, data).expect("shape preserved")
    }

    /// Draws one label per pixel by inverse-CDF sampling.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LabelMap {
        let data = self
            .probs
            .chunks(self.num_classes)
            .map(|px| sample_index(px, rng) as u8)
            .collect();
        LabelMap::from_vec(self.height, self.width, data).expect("shape preserved")
    }
}

fn sample_index<R: Rng + ?Sized>(px: &[f64], rng: &mut R) -> usize {
    let total: f64 = px.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, &p) in px.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // Rounding can leave u at the very top of the range.
    px.iter().rposition(|&p| p > 0.0).unwrap_or(px.len() - 1)
}

fn check_labels(labels: &LabelMap, k: usize) -> Result<()> {
    match labels.as_slice().iter().position(|&l| l as usize >= k) {
        Some(i) => Err(SpadError::LabelOutOfRange {
            row: i / labels.width(),
            col: i % labels.width(),
            value: labels.as_slice()[i],
            classes: k,
        }),
        None => Ok(()),
    }
}

/// `abar * onehot(x0) + (1 - abar) / K` for one pixel.
pub fn marginal_pixel(x0: usize, alpha_bar: f64, out: &mut [f64]) {
    let k = out.len();
    let base = (1.0 - alpha_bar) / k as f64;
    out.iter_mut().for_each(|p| *p = base);
    out[x0] += alpha_bar;
}

/// Forward marginal `q(x_t | x_0)` at step `t` in `1..=T`.
pub fn q_xt_given_x0(x0: &LabelMap, t: usize, spec: &DiffusionSpec) -> Result<CategoricalField> {
    spec.check_t(t, 1)?;
    let k = spec.num_classes();
    check_labels(x0, k)?;
    Ok(marginal_field(x0, spec.alpha_bar(t), k))
}

/// Forward marginal for an arbitrary retention value.
pub fn marginal_field(x0: &LabelMap, alpha_bar: f64, k: usize) -> CategoricalField {
    let mut probs = vec![0.0; x0.len() * k];
    for (i, &l) in x0.as_slice().iter().enumerate() {
        marginal_pixel(l as usize, alpha_bar, &mut probs[i * k..(i + 1) * k]);
    }
    CategoricalField {
        height: x0.height(),
        width: x0.width(),
        num_classes: k,
        probs,
    }
}

/// Draws `x_t ~ q(x_t | x_0)`.
pub fn sample_xt<R: Rng + ?Sized>(
    x0: &LabelMap,
    t: usize,
    spec: &DiffusionSpec,
    rng: &mut R,
) -> Result<LabelMap> {
    Ok(q_xt_given_x0(x0, t, spec)?.sample(rng))
}

/// Unnormalised reverse weights `q(x_t | x_{t-1}=k) * prior_k` written into `out`
/// and normalised, where `prior` is the distribution of `x_{t-1}`.
fn posterior_from_prior(xt: usize, alpha_t: f64, prior: &[f64], out: &mut [f64]) {
    let k = out.len();
    let leak = (1.0 - alpha_t) / k as f64;
    let mut sum = 0.0;
    for j in 0..k {
        let like = if j == xt { alpha_t + leak } else { leak };
        out[j] = like * prior[j];
        sum += out[j];
    }
    let sum = sum.max(PROB_FLOOR);
    out.iter_mut().for_each(|p| *p /= sum);
}

/// Posterior for one pixel.
pub fn posterior_pixel(xt: usize, x0: usize, alpha_t: f64, alpha_bar_prev: f64, out: &mut [f64]) {
    let mut prior = vec![0.0; out.len()];
    marginal_pixel(x0, alpha_bar_prev, &mut prior);
    posterior_from_prior(xt, alpha_t, &prior, out);
}

/// Exact posterior `q(x_{t-1} | x_t, x_0)` for `t` in `2..=T`.
pub fn q_posterior(
    xt: &LabelMap,
    x0: &LabelMap,
    t: usize,
    spec: &DiffusionSpec,
) -> Result<CategoricalField> {
    spec.check_t(t, 2)?;
    xt.require_same_shape(x0, "x_t vs x_0")?;
    let k = spec.num_classes();
    check_labels(xt, k)?;
    check_labels(x0, k)?;
    let alpha_t = spec.step_alpha(t);
    let abar_prev = spec.alpha_bar(t - 1);
    let mut probs = vec![0.0; xt.len() * k];
    let mut prior = vec![0.0; k];
    for (i, (&a, &b)) in xt.as_slice().iter().zip(x0.as_slice()).enumerate() {
        marginal_pixel(b as usize, abar_prev, &mut prior);
        posterior_from_prior(a as usize, alpha_t, &prior, &mut probs[i * k..(i + 1) * k]);
    }
    CategoricalField::from_vec(xt.height(), xt.width(), k, probs)
}

/// Reverse transition implied by a predicted clean-label distribution:
/// `p(x_{t-1} | x_t) ∝ q(x_t | x_{t-1}) * sum_j q(x_{t-1} | x_0 = j) p(x_0 = j)`.
///
/// A one-hot prediction reproduces [`q_posterior`] exactly.
pub fn reverse_from_x0(
    xt: &LabelMap,
    x0_probs: &CategoricalField,
    t: usize,
    spec: &DiffusionSpec,
) -> Result<CategoricalField> {
    spec.check_t(t, 2)?;
    let k = spec.num_classes();
    if x0_probs.shape() != xt.shape() || x0_probs.num_classes() != k {
        return Err(SpadError::ShapeMismatch("x_t vs predicted x_0".into()));
    }
    let alpha_t = spec.step_alpha(t);
    let abar_prev = spec.alpha_bar(t - 1);
    let mut probs = vec![0.0; xt.len() * k];
    let mut prior = vec![0.0; k];
    for (i, &a) in xt.as_slice().iter().enumerate() {
        let p0 = x0_probs.pixel(i);
        for j in 0..k {
            prior[j] = abar_prev * p0[j] + (1.0 - abar_prev) / k as f64;
        }
        posterior_from_prior(a as usize, alpha_t, &prior, &mut probs[i * k..(i + 1) * k]);
    }
    CategoricalField::from_vec(xt.height(), xt.width(), k, probs)
}

/// Mean per-pixel KL(posterior ‖ pred) for `t >= 2`; mean cross-entropy
/// `-log pred[x_0]` at `t = 1`.
pub fn diffusion_loss(
    pred: &CategoricalField,
    x0: &LabelMap,
    xt: &LabelMap,
    t: usize,
    spec: &DiffusionSpec,
) -> Result<f64> {
    spec.check_t(t, 1)?;
    let k = spec.num_classes();
    if pred.shape() != x0.shape() || pred.num_classes() != k {
        return Err(SpadError::ShapeMismatch("prediction vs labels".into()));
    }
    check_labels(x0, k)?;
    let n = x0.len().max(1) as f64;
    if t == 1 {
        let total: f64 = x0
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &l)| -pred.pixel(i)[l as usize].max(PROB_FLOOR).ln())
            .sum();
        return Ok(total / n);
    }
    let post = q_posterior(xt, x0, t, spec)?;
    let mut total = 0.0;
    for i in 0..x0.len() {
        total += kl_pixel(post.pixel(i), pred.pixel(i));
    }
    Ok((total / n).max(0.0))
}

pub(crate) fn kl_pixel(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .filter(|(&qk, _)| qk > 0.0)
        .map(|(&qk, &pk)| qk * (qk.max(PROB_FLOOR).ln() - pk.max(PROB_FLOOR).ln()))
        .sum()
}

/// Anything that can emit the reverse transition `p(x_{t-1} | x_t, condition)`.
///
/// At `t = 1` the returned field is read as the distribution of the final label.
pub trait ReversePredictor {
    fn predict_reverse(
        &self,
        xt: &LabelMap,
        condition: &Image,
        t: usize,
        spec: &DiffusionSpec,
    ) -> Result<CategoricalField>;
}

impl<P: ReversePredictor + ?Sized> ReversePredictor for &P {
    fn predict_reverse(
        &self,
        xt: &LabelMap,
        condition: &Image,
        t: usize,
        spec: &DiffusionSpec,
    ) -> Result<CategoricalField> {
        (**self).predict_reverse(xt, condition, t, spec)
    }
}

/// Ancestral sampling from a uniform `x_T` down to the argmax at `t = 1`.
pub fn reverse_sample<P, R>(
    model: &P,
    condition: &Image,
    spec: &DiffusionSpec,
    rng: &mut R,
) -> Result<LabelMap>
where
    P: ReversePredictor + ?Sized,
    R: Rng + ?Sized,
{
    let (h, w) = condition.shape();
    let k = spec.num_classes();
    let mut xt = CategoricalField::uniform(h, w, k).sample(rng);
    for t in (2..=spec.steps()).rev() {
        let probs = model.predict_reverse(&xt, condition, t, spec)?;
        check_prediction(&probs, h, w, k)?;
        xt = probs.sample(rng);
    }
    let last = model.predict_reverse(&xt, condition, 1, spec)?;
    check_prediction(&last, h, w, k)?;
    Ok(last.argmax())
}

fn check_prediction(p: &CategoricalField, h: usize, w: usize, k: usize) -> Result<()> {
    if p.shape() != (h, w) || p.num_classes() != k {
        return Err(SpadError::PredictorFailure(format!(
            "expected {h}x{w}x{k} prediction, got {}x{}x{}",
            p.height,
            p.width,
            p.num_classes
        )));
    }
    Ok(())
}

/// Stub that always predicts a single class.
#[derive(Clone, Debug)]
pub struct ConstantPredictor {
    pub class: u8,
}

impl ReversePredictor for ConstantPredictor {
    fn predict_reverse(&self, xt: &LabelMap, _: &Image, _: usize, spec: &DiffusionSpec) -> Result<CategoricalField> {
        let labels = LabelMap::filled(xt.height(), xt.width(), self.class);
        Ok(CategoricalField::one_hot(&labels, spec.num_classes()))
    }
}

/// Stub that knows the clean label and emits the exact posterior toward it.
#[derive(Clone, Debug)]
pub struct PosteriorOracle {
    pub x0: LabelMap,
}

impl ReversePredictor for PosteriorOracle {
    fn predict_reverse(&self, xt: &LabelMap, _: &Image, t: usize, spec: &DiffusionSpec) -> Result<CategoricalField> {
        if t == 1 {
            Ok(CategoricalField::one_hot(&self.x0, spec.num_classes()))
        } else {
            q_posterior(xt, &self.x0, t, spec)
        }
    }
}
