//! Run configuration and its flat `key = value` text form.
//!
//! The text form is one assignment per line. `#` starts a comment, blank
//! lines are ignored, and nested sections use dotted keys
//! (`training.epochs = 30`). Unknown or repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::PhantomConfig;
use crate::error::{Result, SpadError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMethod {
    Morphological,
    Canny,
}

impl BoundaryMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundaryMethod::Morphological => "morphological",
            BoundaryMethod::Canny => "canny",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetGranularity {
    Class,
    Component,
}

impl TargetGranularity {
    pub fn as_str(&self) -> &'static str {
        match self {
            TargetGranularity::Class => "class",
            TargetGranularity::Component => "component",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricsProtocol {
    DatasetLevel,
    PerImage,
}

impl MetricsProtocol {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricsProtocol::DatasetLevel => "dataset-level",
            MetricsProtocol::PerImage => "per-image",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
    /// Weight of an extra cross-entropy term on the predicted clean label at `t >= 2`.
    #[serde(default)]
    pub aux_ce_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub depth: usize,
    pub timestep_embed_dim: usize,
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpadConfig {
    pub sigma_max: f64,
    pub beta: f64,
    pub m: usize,
    pub gamma: f64,
    pub anchor_ratio: f64,
    pub band_half_width: usize,
    pub boundary_method: BoundaryMethod,
    pub target_granularity: TargetGranularity,
    pub clamp_condition: bool,
    pub enable_scd: bool,
    pub enable_bcd: bool,
    pub enable_pas: bool,
    pub metrics_protocol: MetricsProtocol,
    pub diffusion: DiffusionConfig,
    pub training: TrainingConfig,
    pub model: ModelConfig,
}

impl Default for SpadConfig {
    fn default() -> Self {
        SpadConfig {
            sigma_max: 0.5,
            beta: 0.2,
            m: 3,
            gamma: 0.1,
            anchor_ratio: 0.3,
            band_half_width: 2,
            boundary_method: BoundaryMethod::Morphological,
            target_granularity: TargetGranularity::Class,
            clamp_condition: false,
            enable_scd: true,
            enable_bcd: true,
            enable_pas: true,
            metrics_protocol: MetricsProtocol::DatasetLevel,
            diffusion: DiffusionConfig {
                steps: 100,
                num_classes: 4,
            },
            training: TrainingConfig {
                epochs: 30,
                batch_size: 8,
                learning_rate: 4e-4,
                weight_decay: 1e-5,
                seed: 0,
                checkpoint_every: 5,
                aux_ce_weight: 0.0,
            },
            model: ModelConfig {
                base_channels: 32,
                depth: 3,
                timestep_embed_dim: 32,
            },
        }
    }
}

impl SpadConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SpadError::InvalidParam(msg));
        if !(self.anchor_ratio > 0.0 && self.anchor_ratio < 1.0) {
            return bad(format!("anchor_ratio {} must lie in (0, 1)", self.anchor_ratio));
        }
        if !(self.sigma_max > 0.0 && self.sigma_max.is_finite()) {
            return bad(format!("sigma_max {} must be positive", self.sigma_max));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta {} must be non-negative", self.beta));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma {} must be non-negative", self.gamma));
        }
        if self.band_half_width < 1 {
            return bad("band_half_width must be at least 1".into());
        }
        if self.diffusion.steps < 1 {
            return bad("diffusion.steps must be at least 1".into());
        }
        if !(2..=256).contains(&self.diffusion.num_classes) {
            return bad(format!(
                "diffusion.num_classes {} outside 2..=256",
                self.diffusion.num_classes
            ));
        }
        let t = &self.training;
        if t.batch_size == 0 {
            return bad("training.batch_size must be positive".into());
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return bad("training.learning_rate must be positive".into());
        }
        if !(t.weight_decay >= 0.0 && t.weight_decay.is_finite()) {
            return bad("training.weight_decay must be non-negative".into());
        }
        if !(t.aux_ce_weight >= 0.0 && t.aux_ce_weight.is_finite()) {
            return bad("training.aux_ce_weight must be non-negative".into());
        }
        let m = &self.model;
        if m.depth < 2 || m.base_channels == 0 || m.timestep_embed_dim == 0 {
            return bad("model needs depth >= 2 and positive widths".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// The complete contents of a config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FileConfig {
    pub spad: SpadConfig,
    pub phantom: PhantomConfig,
}

/// One `key = value` line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits flat config text into assignments. Syntax errors only; keys are not interpreted.
pub fn parse_assignments(text: &str) -> Result<Vec<Assignment>> {
    let mut out = Vec::new();
    let mut seen = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(SpadError::Config {
                line,
                message: format!("expected `key = value`, found {content:?}"),
            });
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty()
            || !key
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
        {
            return Err(SpadError::Config {
                line,
                message: format!("invalid key {key:?}"),
            });
        }
        if value.is_empty() {
            return Err(SpadError::Config {
                line,
                message: format!("missing value for {key}"),
            });
        }
        if let Some(prev) = seen.insert(key.to_string(), line) {
            return Err(SpadError::Config {
                line,
                message: format!("duplicate key {key} (first set on line {prev})"),
            });
        }
        out.push(Assignment {
            line,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(out)
}

fn parse_value<T: FromStr>(a: &Assignment) -> Result<T> {
    a.value.parse().map_err(|_| SpadError::Config {
        line: a.line,
        message: format!("cannot parse {:?} for {}", a.value, a.key),
    })
}

fn parse_bool(a: &Assignment) -> Result<bool> {
    match a.value.as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(SpadError::Config {
            line: a.line,
            message: format!("expected a boolean for {}, found {:?}", a.key, a.value),
        }),
    }
}

fn parse_list(a: &Assignment) -> Result<Vec<f64>> {
    a.value
        .split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| SpadError::Config {
                line: a.line,
                message: format!("cannot parse list element {s:?} for {}", a.key),
            })
        })
        .collect()
}

fn parse_enum<T>(a: &Assignment, options: &[(&str, T)]) -> Result<T>
where
    T: Copy,
{
    options
        .iter()
        .find(|(name, _)| *name == a.value)
        .map(|(_, v)| *v)
        .ok_or_else(|| SpadError::Config {
            line: a.line,
            message: format!(
                "{} must be one of {:?}, found {:?}",
                a.key,
                options.iter().map(|(n, _)| *n).collect::<Vec<_>>(),
                a.value
            ),
        })
}

impl FileConfig {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = FileConfig::default();
        for a in parse_assignments(text)? {
            cfg.apply(&a)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SpadError::io(path, e))?;
        Self::parse(&text)
    }

    fn apply(&mut self, a: &Assignment) -> Result<()> {
        let s = &mut self.spad;
        let p = &mut self.phantom;
        match a.key.as_str() {
            "sigma_max" => s.sigma_max = parse_value(a)?,
            "beta" => s.beta = parse_value(a)?,
            "m" => s.m = parse_value(a)?,
            "gamma" => s.gamma = parse_value(a)?,
            "anchor_ratio" => s.anchor_ratio = parse_value(a)?,
            "band_half_width" => s.band_half_width = parse_value(a)?,
            "boundary_method" => {
                s.boundary_method = parse_enum(
                    a,
                    &[
                        ("morphological", BoundaryMethod::Morphological),
                        ("canny", BoundaryMethod::Canny),
                    ],
                )?
            }
            "target_granularity" => {
                s.target_granularity = parse_enum(
                    a,
                    &[
                        ("class", TargetGranularity::Class),
                        ("component", TargetGranularity::Component),
                    ],
                )?
            }
            "metrics_protocol" => {
                s.metrics_protocol = parse_enum(
                    a,
                    &[
                        ("dataset-level", MetricsProtocol::DatasetLevel),
                        ("per-image", MetricsProtocol::PerImage),
                    ],
                )?
            }
            "clamp_condition" => s.clamp_condition = parse_bool(a)?,
            "enable_scd" => s.enable_scd = parse_bool(a)?,
            "enable_bcd" => s.enable_bcd = parse_bool(a)?,
            "enable_pas" => s.enable_pas = parse_bool(a)?,
            "diffusion.steps" => s.diffusion.steps = parse_value(a)?,
            "diffusion.num_classes" => s.diffusion.num_classes = parse_value(a)?,
            "training.epochs" => s.training.epochs = parse_value(a)?,
            "training.batch_size" => s.training.batch_size = parse_value(a)?,
            "training.learning_rate" => s.training.learning_rate = parse_value(a)?,
            "training.weight_decay" => s.training.weight_decay = parse_value(a)?,
            "training.seed" => s.training.seed = parse_value(a)?,
            "training.checkpoint_every" => s.training.checkpoint_every = parse_value(a)?,
            "training.aux_ce_weight" => s.training.aux_ce_weight = parse_value(a)?,
            "model.base_channels" => s.model.base_channels = parse_value(a)?,
            "model.depth" => s.model.depth = parse_value(a)?,
            "model.timestep_embed_dim" => s.model.timestep_embed_dim = parse_value(a)?,
            "phantom.n_samples" => p.n_samples = parse_value(a)?,
            "phantom.n_test" => p.n_test = parse_value(a)?,
            "phantom.size" => p.size = parse_value(a)?,
            "phantom.num_classes" => p.num_classes = parse_value(a)?,
            "phantom.blobs_min" => p.blobs_per_class.0 = parse_value(a)?,
            "phantom.blobs_max" => p.blobs_per_class.1 = parse_value(a)?,
            "phantom.blob_scale" => p.blob_scale = parse_value(a)?,
            "phantom.intensities" => p.intensity_per_class = parse_list(a)?,
            "phantom.texture_noise_std" => p.texture_noise_std = parse_value(a)?,
            "phantom.contrast" => p.contrast = parse_value(a)?,
            "phantom.boundary_jitter_px" => p.boundary_jitter_px = parse_value(a)?,
            "phantom.seed" => p.seed = parse_value(a)?,
            other => {
                return Err(SpadError::Config {
                    line: a.line,
                    message: format!("unknown key {other}"),
                })
            }
        }
        Ok(())
    }

    /// Renders the config in the flat text form accepted by [`FileConfig::parse`].
    pub fn to_text(&self) -> String {
        let s = &self.spad;
        let p = &self.phantom;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("sigma_max", s.sigma_max.to_string());
        put("beta", s.beta.to_string());
        put("m", s.m.to_string());
        put("gamma", s.gamma.to_string());
        put("anchor_ratio", s.anchor_ratio.to_string());
        put("band_half_width", s.band_half_width.to_string());
        put("boundary_method", s.boundary_method.as_str().into());
        put("target_granularity", s.target_granularity.as_str().into());
        put("metrics_protocol", s.metrics_protocol.as_str().into());
        put("clamp_condition", s.clamp_condition.to_string());
        put("enable_scd", s.enable_scd.to_string());
        put("enable_bcd", s.enable_bcd.to_string());
        put("enable_pas", s.enable_pas.to_string());
        put("diffusion.steps", s.diffusion.steps.to_string());
        put("diffusion.num_classes", s.diffusion.num_classes.to_string());
        put("training.epochs", s.training.epochs.to_string());
        put("training.batch_size", s.training.batch_size.to_string());
        put("training.learning_rate", s.training.learning_rate.to_string());
        put("training.weight_decay", s.training.weight_decay.to_string());
        put("training.seed", s.training.seed.to_string());
        put("training.checkpoint_every", s.training.checkpoint_every.to_string());
        put("training.aux_ce_weight", s.training.aux_ce_weight.to_string());
        put("model.base_channels", s.model.base_channels.to_string());
        put("model.depth", s.model.depth.to_string());
        put("model.timestep_embed_dim", s.model.timestep_embed_dim.to_string());
        put("phantom.n_samples", p.n_samples.to_string());
        put("phantom.n_test", p.n_test.to_string());
        put("phantom.size", p.size.to_string());
        put("phantom.num_classes", p.num_classes.to_string());
        put("phantom.blobs_min", p.blobs_per_class.0.to_string());
        put("phantom.blobs_max", p.blobs_per_class.1.to_string());
        put("phantom.blob_scale", p.blob_scale.to_string());
        put(
            "phantom.intensities",
            p.intensity_per_class
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(", "),
        );
        put("phantom.texture_noise_std", p.texture_noise_std.to_string());
        put("phantom.contrast", p.contrast.to_string());
        put("phantom.boundary_jitter_px", p.boundary_jitter_px.to_string());
        put("phantom.seed", p.seed.to_string());
        out
    }
}
