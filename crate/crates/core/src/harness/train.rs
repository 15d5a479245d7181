use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::config::SpadConfig;
use crate::data::Corpus;
use crate::diffusion::{make_alpha_bar, sample_xt, DiffusionSpec};
use crate::error::{Result, SpadError};
use crate::manifest::{write_manifest, EpochRecord, LabelSources, RunManifest, RunStatus, MANIFEST_FORMAT};
use crate::model::{Adam, Checkpoint, CheckpointHeader, Denoiser, PredictorSpec, PARAMETERIZATION};
use crate::perturb::perturb_condition;
use crate::schedule::schedule_for_epoch;
use crate::seed::{rng_from, sample_rng};
use crate::types::{ScheduleState, SegSample};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Wall-clock record, kept out of the manifest so reruns stay byte-identical.
pub const TIMING_FILE: &str = "timing.json";

#[derive(Clone, Debug, Default, serde::Serialize)]
struct Timing {
    started_unix: f64,
    finished_unix: Option<f64>,
    epoch_seconds: Vec<f64>,
}

fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn write_timing(dir: &Path, timing: &Timing) -> Result<()> {
    let path = dir.join(TIMING_FILE);
    let text = serde_json::to_string_pretty(timing).expect("timing serializes");
    std::fs::write(&path, text + "\n").map_err(|e| SpadError::io(&path, e))
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Continue from `checkpoint.bin` in the output directory if present.
    pub resume: bool,
    /// Stop (with a checkpoint) once this many epochs are complete.
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub manifest: RunManifest,
    pub checkpoint: PathBuf,
}

/// Conditioning image for one training example.
pub fn training_condition(
    sample: &SegSample,
    state: &ScheduleState,
    config: &SpadConfig,
    seed: u64,
) -> Result<crate::grid::Image> {
    if !config.enable_scd && !config.enable_bcd {
        return Ok(sample.image.clone());
    }
    let mut rng = sample_rng(seed, "perturb", &sample.sample_id, state.epoch);
    Ok(perturb_condition(sample, state, config, &mut rng)?.image)
}

fn new_manifest(config: &SpadConfig, corpus: &Corpus, num_params: usize) -> RunManifest {
    RunManifest {
        format: MANIFEST_FORMAT.to_string(),
        status: RunStatus::InProgress,
        config: config.clone(),
        config_hash: config.hash(),
        seed: config.training.seed,
        corpus_hash: corpus.manifest.content_hash.clone(),
        train_ids: corpus.manifest.train_ids.clone(),
        test_ids: corpus.manifest.test_ids.clone(),
        label_sources: LabelSources {
            train: "labels_train".into(),
            eval: "labels_clean".into(),
        },
        parameterization: PARAMETERIZATION.to_string(),
        metrics_protocol: config.metrics_protocol,
        num_params,
        epochs: Vec::new(),
        final_metrics: None,
    }
}

fn check_compatible(config: &SpadConfig, corpus: &Corpus) -> Result<()> {
    config.validate()?;
    if config.diffusion.num_classes != corpus.manifest.num_classes {
        return Err(SpadError::Corpus(format!(
            "config has {} classes, corpus {}",
            config.diffusion.num_classes, corpus.manifest.num_classes
        )));
    }
    if corpus.manifest.train_ids.is_empty() {
        return Err(SpadError::Corpus("corpus has no training samples".into()));
    }
    Ok(())
}

/// One pass over the training split; returns the mean per-example loss.
fn run_epoch(
    model: &mut Denoiser,
    adam: &mut Adam,
    train: &[SegSample],
    state: &ScheduleState,
    config: &SpadConfig,
    spec: &DiffusionSpec,
) -> Result<f64> {
    let seed = config.training.seed;
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng_from(seed, "shuffle", &[&(state.epoch as u64).to_le_bytes()]));
    let mut grads = vec![0f32; model.params().len()];
    let mut total = 0.0;
    for batch in order.chunks(config.training.batch_size) {
        grads.iter_mut().for_each(|g| *g = 0.0);
        for &i in batch {
            let sample = &train[i];
            let cond = training_condition(sample, state, config, seed)?;
            let mut rng = sample_rng(seed, "timestep", &sample.sample_id, state.epoch);
            let t = rng.random_range(1..=spec.steps());
            let xt = sample_xt(&sample.label, t, spec, &mut rng)?;
            total += model.hybrid_loss_and_grad(
                &sample.label,
                &xt,
                &cond,
                t,
                spec,
                config.training.aux_ce_weight,
                &mut grads,
            )?;
        }
        let scale = 1.0 / batch.len() as f32;
        grads.iter_mut().for_each(|g| *g *= scale);
        if grads.iter().any(|g| !g.is_finite()) {
            return Ok(f64::NAN);
        }
        adam.step(model.params_mut(), &grads);
    }
    Ok(total / train.len() as f64)
}

fn save(
    dir: &Path,
    model: &Denoiser,
    adam: &Adam,
    manifest: &RunManifest,
) -> Result<PathBuf> {
    let ckpt = Checkpoint {
        header: CheckpointHeader {
            predictor: model.spec().clone(),
            config_hash: manifest.config_hash.clone(),
            config: manifest.config.clone(),
            parameterization: PARAMETERIZATION.to_string(),
            epochs_completed: manifest.epochs.len(),
            seed: manifest.seed,
            corpus_hash: manifest.corpus_hash.clone(),
            epoch_log: manifest.epochs.clone(),
        },
        params: model.params().to_vec(),
        optimizer: Some(adam.state.clone()),
    };
    let path = dir.join(CHECKPOINT_FILE);
    ckpt.write(&path)?;
    write_manifest(manifest, &dir.join(MANIFEST_FILE))?;
    Ok(path)
}

/// Trains a denoiser on the corpus' training split, writing `manifest.json`
/// and `checkpoint.bin` into `out_dir`.
pub fn train(
    config: &SpadConfig,
    corpus: &Corpus,
    out_dir: &Path,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    check_compatible(config, corpus)?;
    std::fs::create_dir_all(out_dir).map_err(|e| SpadError::io(out_dir, e))?;
    let spec = make_alpha_bar(config.diffusion.steps, config.diffusion.num_classes)?;
    let pspec = PredictorSpec::from_config(config);
    let seed = config.training.seed;
    let mut model = Denoiser::initialized(pspec, &mut rng_from(seed, "init", &[]))?;
    let mut adam = Adam::new(
        model.params().len(),
        config.training.learning_rate,
        config.training.weight_decay,
    );
    let mut manifest = new_manifest(config, corpus, model.params().len());

    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    if options.resume && ckpt_path.exists() {
        let ckpt = Checkpoint::read(&ckpt_path)?;
        ckpt.verify_config(config)?;
        if ckpt.header.corpus_hash != manifest.corpus_hash {
            return Err(SpadError::HashMismatch {
                expected: ckpt.header.corpus_hash,
                found: manifest.corpus_hash,
            });
        }
        if ckpt.params.len() != model.params().len() {
            return Err(SpadError::Checkpoint("parameter count differs from config".into()));
        }
        model.params_mut().copy_from_slice(&ckpt.params);
        adam.state = ckpt
            .optimizer
            .ok_or_else(|| SpadError::Checkpoint("no optimizer state to resume from".into()))?;
        manifest.epochs = ckpt.header.epoch_log;
        log::info!("resuming after epoch {}", manifest.epochs.len());
    }

    let train_set = corpus.train_samples();
    let start = manifest.epochs.len();
    let mut timing = Timing {
        started_unix: unix_now(),
        ..Timing::default()
    };
    for epoch in start..config.training.epochs {
        if options.stop_after.is_some_and(|n| epoch >= n) {
            let path = save(out_dir, &model, &adam, &manifest)?;
            write_timing(out_dir, &timing)?;
            return Ok(TrainOutcome { manifest, checkpoint: path });
        }
        let state = schedule_for_epoch(epoch, config)?;
        let tick = std::time::Instant::now();
        let loss = run_epoch(&mut model, &mut adam, &train_set, &state, config, &spec)?;
        if !loss.is_finite() {
            manifest.status = RunStatus::Diverged;
            write_manifest(&manifest, &out_dir.join(MANIFEST_FILE))?;
            return Err(SpadError::DivergenceDetected { epoch, loss });
        }
        timing.epoch_seconds.push(tick.elapsed().as_secs_f64());
        log::info!(
            "epoch {epoch}: sigma {:.4}, targets {}, loss {loss:.5}",
            state.sigma,
            state.target_count
        );
        manifest.epochs.push(EpochRecord {
            epoch,
            sigma: state.sigma,
            target_count: state.target_count,
            train_loss: loss,
        });
        let every = config.training.checkpoint_every;
        if every > 0 && (epoch + 1) % every == 0 && epoch + 1 < config.training.epochs {
            save(out_dir, &model, &adam, &manifest)?;
        }
    }
    manifest.status = RunStatus::Complete;
    let path = save(out_dir, &model, &adam, &manifest)?;
    timing.finished_unix = Some(unix_now());
    write_timing(out_dir, &timing)?;
    Ok(TrainOutcome { manifest, checkpoint: path })
}
