use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::SpadConfig;
use crate::data::Corpus;
use crate::error::{Result, SpadError};
use crate::manifest::{read_manifest, write_manifest, RunManifest, RunStatus};
use crate::metrics::MetricsReport;
use crate::model::Checkpoint;

use super::evaluate::{evaluate, EvalOptions};
use super::train::{train, TrainOptions, MANIFEST_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Baseline,
    ScdPas,
    BcdPas,
    ScdBcdNopas,
    Full,
}

impl AblationVariant {
    /// Table order.
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::Baseline,
        AblationVariant::ScdPas,
        AblationVariant::BcdPas,
        AblationVariant::ScdBcdNopas,
        AblationVariant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Baseline => "baseline",
            AblationVariant::ScdPas => "scd_pas",
            AblationVariant::BcdPas => "bcd_pas",
            AblationVariant::ScdBcdNopas => "scd_bcd_nopas",
            AblationVariant::Full => "full",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    /// (enable_scd, enable_bcd, enable_pas)
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            AblationVariant::Baseline => (false, false, false),
            AblationVariant::ScdPas => (true, false, true),
            AblationVariant::BcdPas => (false, true, true),
            AblationVariant::ScdBcdNopas => (true, true, false),
            AblationVariant::Full => (true, true, true),
        }
    }

    pub fn apply(self, base: &SpadConfig) -> SpadConfig {
        let (scd, bcd, pas) = self.flags();
        SpadConfig {
            enable_scd: scd,
            enable_bcd: bcd,
            enable_pas: pas,
            ..base.clone()
        }
    }
}

/// Result of one trained and evaluated run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub metrics: MetricsReport,
}

/// Train then evaluate; the manifest is rewritten with the final metrics.
pub fn train_and_evaluate(
    config: &SpadConfig,
    corpus: &Corpus,
    out_dir: &Path,
    train_options: &TrainOptions,
) -> Result<RunResult> {
    let outcome = train(config, corpus, out_dir, train_options)?;
    let ckpt = Checkpoint::read(&outcome.checkpoint)?;
    let eval_options = EvalOptions {
        seed: config.training.seed,
        write_predictions: true,
    };
    let metrics = evaluate(&ckpt, Some(config), corpus, out_dir, &eval_options)?;
    let mut manifest = outcome.manifest;
    if metrics.config_hash.as_deref() != Some(manifest.config_hash.as_str()) {
        return Err(SpadError::HashMismatch {
            expected: manifest.config_hash.clone(),
            found: metrics.config_hash.clone().unwrap_or_default(),
        });
    }
    manifest.final_metrics = Some(metrics.clone());
    write_manifest(&manifest, &out_dir.join(MANIFEST_FILE))?;
    Ok(RunResult {
        dir: out_dir.to_path_buf(),
        manifest,
        metrics,
    })
}

/// A finished run in `dir` made from exactly `config`, if there is one.
fn completed_run(config: &SpadConfig, dir: &Path) -> Option<RunResult> {
    let manifest = read_manifest(&dir.join(MANIFEST_FILE)).ok()?;
    let metrics = manifest.final_metrics.clone()?;
    (manifest.status == RunStatus::Complete && manifest.config_hash == config.hash()).then(|| {
        RunResult {
            dir: dir.to_path_buf(),
            manifest,
            metrics,
        }
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: AblationVariant,
    pub seeds: Vec<u64>,
    pub config_hashes: Vec<String>,
    pub miou: Vec<f64>,
    pub mdice: Vec<f64>,
    pub miou_mean: f64,
    pub miou_std: f64,
    pub mdice_mean: f64,
    pub mdice_std: f64,
}

#[derive(Clone, Debug, Default)]
pub struct AblateOptions {
    /// Reuse finished runs whose manifest matches the derived config.
    pub reuse: bool,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains and evaluates every variant for every seed under
/// `out_dir/{variant}/seed_{n}`, then writes `ablation.csv`,
/// `ablation.json` and `ablation.svg`.
pub fn ablate(
    base: &SpadConfig,
    corpus: &Corpus,
    seeds: &[u64],
    out_dir: &Path,
    options: &AblateOptions,
) -> Result<Vec<VariantSummary>> {
    if seeds.is_empty() {
        return Err(SpadError::InvalidParam("ablation needs at least one seed".into()));
    }
    let mut summaries = Vec::new();
    for variant in AblationVariant::ALL {
        let mut s = VariantSummary {
            variant,
            seeds: seeds.to_vec(),
            config_hashes: Vec::new(),
            miou: Vec::new(),
            mdice: Vec::new(),
            miou_mean: 0.0,
            miou_std: 0.0,
            mdice_mean: 0.0,
            mdice_std: 0.0,
        };
        for &seed in seeds {
            let mut cfg = variant.apply(base);
            cfg.training.seed = seed;
            let dir = out_dir.join(variant.name()).join(format!("seed_{seed}"));
            let run = match options.reuse.then(|| completed_run(&cfg, &dir)).flatten() {
                Some(r) => {
                    log::info!("reusing {}", dir.display());
                    r
                }
                None => {
                    log::info!("running {} seed {seed}", variant.name());
                    train_and_evaluate(&cfg, corpus, &dir, &TrainOptions::default())?
                }
            };
            if run.metrics.config_hash.as_deref() != Some(run.manifest.config_hash.as_str()) {
                return Err(SpadError::HashMismatch {
                    expected: run.manifest.config_hash.clone(),
                    found: run.metrics.config_hash.clone().unwrap_or_default(),
                });
            }
            s.config_hashes.push(run.manifest.config_hash.clone());
            s.miou.push(run.metrics.mean_iou.unwrap_or(0.0));
            s.mdice.push(run.metrics.mean_dice.unwrap_or(0.0));
        }
        (s.miou_mean, s.miou_std) = mean_std(&s.miou);
        (s.mdice_mean, s.mdice_std) = mean_std(&s.mdice);
        summaries.push(s);
    }
    write_outputs(&summaries, out_dir)?;
    Ok(summaries)
}

pub fn ablation_csv(summaries: &[VariantSummary]) -> String {
    let mut out = String::from("variant,n_seeds,miou_mean,miou_std,mdice_mean,mdice_std,config_hashes\n");
    for s in summaries {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{}",
            s.variant.name(),
            s.seeds.len(),
            s.miou_mean,
            s.miou_std,
            s.mdice_mean,
            s.mdice_std,
            s.config_hashes.join(";")
        );
    }
    out
}

fn write_outputs(summaries: &[VariantSummary], out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| SpadError::io(out_dir, e))?;
    let put = |name: &str, text: String| {
        let p = out_dir.join(name);
        std::fs::write(&p, text).map_err(|e| SpadError::io(&p, e))
    };
    put("ablation.csv", ablation_csv(summaries))?;
    let json = serde_json::to_string_pretty(summaries)
        .map_err(|e| SpadError::SchemaViolation(e.to_string()))?;
    put("ablation.json", json + "\n")?;
    put("ablation.svg", super::plot::bar_chart_svg(summaries))
}
