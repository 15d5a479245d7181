use std::path::Path;

use crate::config::{MetricsProtocol, SpadConfig};
use crate::data::{encode_label_png, Corpus};
use crate::diffusion::{make_alpha_bar, reverse_sample, DiffusionSpec, ReversePredictor};
use crate::error::{Result, SpadError};
use crate::grid::LabelMap;
use crate::metrics::{iou_dice, per_image_report, ClassCounts, MetricsReport};
use crate::model::{Checkpoint, Denoiser, UNet};
use crate::seed::sample_rng;
use crate::types::SegSample;

pub const METRICS_FILE: &str = "metrics.json";
pub const PREDICTIONS_DIR: &str = "predictions";

#[derive(Clone, Debug)]
pub struct EvalOptions {
    /// Seed of the ancestral sampling streams.
    pub seed: u64,
    pub write_predictions: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            seed: 0,
            write_predictions: true,
        }
    }
}

/// Rebuilds the trained denoiser stored in a checkpoint.
pub fn load_denoiser(ckpt: &Checkpoint) -> Result<Denoiser> {
    let net = UNet::new(ckpt.header.predictor.clone())?;
    Denoiser::new(net, ckpt.params.clone())
}

/// One ancestral sample for a single image, conditioned on the clean image.
pub fn predict_sample<P: ReversePredictor + ?Sized>(
    model: &P,
    sample: &SegSample,
    spec: &DiffusionSpec,
    seed: u64,
) -> Result<LabelMap> {
    let mut rng = sample_rng(seed, "sample", &sample.sample_id, 0);
    reverse_sample(model, &sample.image, spec, &mut rng)
}

/// Scores predictors on the test split. `make` supplies the predictor for
/// each sample, which lets stubs see the sample they are scored on.
pub fn evaluate_with<'a, F>(
    make: F,
    corpus: &Corpus,
    spec: &DiffusionSpec,
    protocol: MetricsProtocol,
    config_hash: Option<String>,
    out_dir: &Path,
    options: &EvalOptions,
) -> Result<MetricsReport>
where
    F: Fn(&SegSample) -> Result<Box<dyn ReversePredictor + 'a>>,
{
    let k = corpus.manifest.num_classes;
    if spec.num_classes() != k {
        return Err(SpadError::Corpus(format!(
            "diffusion has {} classes, corpus {k}",
            spec.num_classes()
        )));
    }
    let test = corpus.test_samples();
    if test.is_empty() {
        return Err(SpadError::Corpus("corpus has no test samples".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| SpadError::io(out_dir, e))?;
    let pred_dir = out_dir.join(PREDICTIONS_DIR);
    if options.write_predictions {
        std::fs::create_dir_all(&pred_dir).map_err(|e| SpadError::io(&pred_dir, e))?;
    }
    let mut pooled = ClassCounts::new(k);
    let mut per_image = Vec::with_capacity(test.len());
    for sample in &test {
        let model = make(sample)?;
        let pred = predict_sample(model.as_ref(), sample, spec, options.seed)?;
        let mut counts = ClassCounts::new(k);
        counts.accumulate(&pred, &sample.label)?;
        pooled.merge(&counts)?;
        per_image.push(counts);
        if options.write_predictions {
            let p = pred_dir.join(format!("{}.png", sample.sample_id));
            std::fs::write(&p, encode_label_png(&pred)?).map_err(|e| SpadError::io(&p, e))?;
        }
    }
    let mut report = match protocol {
        MetricsProtocol::DatasetLevel => iou_dice(&pooled),
        MetricsProtocol::PerImage => per_image_report(&per_image, k),
    };
    report.config_hash = config_hash;
    let mut text = serde_json::to_string_pretty(&report)
        .map_err(|e| SpadError::SchemaViolation(e.to_string()))?;
    text.push('\n');
    let p = out_dir.join(METRICS_FILE);
    std::fs::write(&p, text).map_err(|e| SpadError::io(&p, e))?;
    Ok(report)
}

/// Evaluates a trained checkpoint. `config`, when given, must hash to the
/// checkpoint's recorded config.
pub fn evaluate(
    ckpt: &Checkpoint,
    config: Option<&SpadConfig>,
    corpus: &Corpus,
    out_dir: &Path,
    options: &EvalOptions,
) -> Result<MetricsReport> {
    if let Some(cfg) = config {
        ckpt.verify_config(cfg)?;
    }
    ckpt.verify_config(&ckpt.header.config)?;
    if ckpt.header.corpus_hash != corpus.manifest.content_hash {
        log::warn!(
            "checkpoint was trained on corpus {}, evaluating on {}",
            ckpt.header.corpus_hash,
            corpus.manifest.content_hash
        );
    }
    let cfg = &ckpt.header.config;
    let spec = make_alpha_bar(cfg.diffusion.steps, cfg.diffusion.num_classes)?;
    let model = load_denoiser(ckpt)?;
    evaluate_with(
        |_| Ok(Box::new(&model) as Box<dyn ReversePredictor + '_>),
        corpus,
        &spec,
        cfg.metrics_protocol,
        Some(ckpt.header.config_hash.clone()),
        out_dir,
        options,
    )
}
