use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpadError};
use crate::grid::{Image, LabelMap};
use crate::seed::rng_from;
use crate::types::SegSample;

use super::corpus::CorpusSample;
use super::jitter::inject_boundary_jitter;

/// Parameters of the synthetic corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomConfig {
    pub n_samples: usize,
    /// The last `n_test` indices form the test split.
    pub n_test: usize,
    pub size: usize,
    pub num_classes: usize,
    /// Inclusive range of blobs drawn per foreground class.
    pub blobs_per_class: (usize, usize),
    /// Typical blob radius as a fraction of the image side.
    pub blob_scale: f64,
    pub intensity_per_class: Vec<f64>,
    pub texture_noise_std: f64,
    pub contrast: f64,
    pub boundary_jitter_px: usize,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            n_samples: 250,
            n_test: 50,
            size: 64,
            num_classes: 4,
            blobs_per_class: (1, 2),
            blob_scale: 0.12,
            intensity_per_class: vec![0.2, 0.45, 0.65, 0.85],
            texture_noise_std: 0.1,
            contrast: 0.7,
            boundary_jitter_px: 2,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SpadError::InvalidParam(m));
        if self.num_classes < 2 || self.num_classes > 255 {
            return bad(format!("num_classes {} outside 2..=255", self.num_classes));
        }
        if self.size < 32 {
            return bad(format!("size {} < 32", self.size));
        }
        if self.intensity_per_class.len() != self.num_classes {
            return bad(format!(
                "{} intensities for {} classes",
                self.intensity_per_class.len(),
                self.num_classes
            ));
        }
        if self.intensity_per_class.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("intensities must lie in [0, 1]".into());
        }
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return bad(format!("contrast {} outside (0, 1]", self.contrast));
        }
        if !(self.texture_noise_std >= 0.0 && self.texture_noise_std.is_finite()) {
            return bad("texture_noise_std must be non-negative".into());
        }
        if !(self.blob_scale > 0.0 && self.blob_scale <= 0.5) {
            return bad(format!("blob_scale {} outside (0, 0.5]", self.blob_scale));
        }
        if self.blobs_per_class.0 > self.blobs_per_class.1 {
            return bad("blobs_min exceeds blobs_max".into());
        }
        if self.n_test > self.n_samples {
            return bad("n_test exceeds n_samples".into());
        }
        Ok(())
    }

    pub fn sample_id(index: usize) -> String {
        format!("phantom_{index:05}")
    }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// A blob is a union of ellipses that all contain the blob centre.
fn random_blob<R: Rng + ?Sized>(rng: &mut R, size: f64, scale: f64) -> Vec<Ellipse> {
    let r = scale * size;
    let cy = rng.random_range(0.15..0.85) * size;
    let cx = rng.random_range(0.15..0.85) * size;
    let parts = rng.random_range(1..=3);
    (0..parts)
        .map(|_| {
            let off = rng.random_range(0.0..0.25) * r;
            let dir = rng.random_range(0.0..2.0 * PI);
            let theta = rng.random_range(0.0..PI);
            Ellipse {
                cy: cy + off * dir.sin(),
                cx: cx + off * dir.cos(),
                a: rng.random_range(0.5..1.0) * r,
                b: rng.random_range(0.5..1.0) * r,
                cos: theta.cos(),
                sin: theta.sin(),
            }
        })
        .collect()
}

fn render_labels<R: Rng + ?Sized>(config: &PhantomConfig, rng: &mut R) -> LabelMap {
    let n = config.size;
    let mut label = LabelMap::new(n, n);
    // Later classes are painted over earlier ones, which produces overlaps.
    for class in 1..config.num_classes {
        let count = rng.random_range(config.blobs_per_class.0..=config.blobs_per_class.1);
        for _ in 0..count {
            let blob = random_blob(rng, n as f64, config.blob_scale);
            for r in 0..n {
                for c in 0..n {
                    let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
                    if blob.iter().any(|e| e.contains(y, x)) {
                        label.set(r, c, class as u8);
                    }
                }
            }
        }
    }
    label
}

fn render_image<R: Rng + ?Sized>(config: &PhantomConfig, label: &LabelMap, rng: &mut R) -> Image {
    let bg = config.intensity_per_class[0];
    let noise = (config.texture_noise_std > 0.0)
        .then(|| Normal::new(0.0, config.texture_noise_std).expect("std checked"));
    label.map(|&l| {
        let base = bg + config.contrast * (config.intensity_per_class[l as usize] - bg);
        let v = base + noise.as_ref().map_or(0.0, |d| d.sample(rng));
        // Quantise to 8 bits so the PNG round trip is exact.
        ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
    })
}

/// Renders sample `index` with its exact (un-jittered) label.
pub fn generate_phantom(config: &PhantomConfig, index: usize) -> Result<SegSample> {
    config.validate()?;
    let mut rng = rng_from(config.seed, "phantom", &[&(index as u64).to_le_bytes()]);
    let label = render_labels(config, &mut rng);
    let image = render_image(config, &label, &mut rng);
    SegSample::new(PhantomConfig::sample_id(index), image, label, config.num_classes)
}

/// Sample `index` together with its boundary-jittered training label.
pub fn generate_phantom_pair(config: &PhantomConfig, index: usize) -> Result<CorpusSample> {
    let clean = generate_phantom(config, index)?;
    let mut rng = rng_from(config.seed, "jitter", &[&(index as u64).to_le_bytes()]);
    let train = inject_boundary_jitter(&clean.label, config.boundary_jitter_px, &mut rng)?;
    Ok(CorpusSample {
        id: clean.sample_id,
        image: clean.image,
        label_clean: clean.label,
        label_train: train,
    })
}

pub fn generate_corpus_samples(config: &PhantomConfig) -> Result<Vec<CorpusSample>> {
    config.validate()?;
    (0..config.n_samples)
        .map(|i| generate_phantom_pair(config, i))
        .collect()
}

/// Quantised intensity a noise-free phantom shows for `class`.
pub fn clean_intensity(config: &PhantomConfig, class: usize) -> f32 {
    let bg = config.intensity_per_class[0];
    let v = bg + config.contrast * (config.intensity_per_class[class] - bg);
    ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
}
