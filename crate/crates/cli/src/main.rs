use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use spad::config::{FileConfig, SpadConfig};
use spad::data::{
    decode_image_png, encode_label_png, generate_corpus_samples, read_corpus, write_corpus,
    encode_rgb_png,
};
use spad::diffusion::{make_alpha_bar, ConstantPredictor, PosteriorOracle, ReversePredictor};
use spad::harness::{
    ablate, colorize_labels, evaluate, evaluate_with, load_denoiser, perturb_preview_png,
    predict_sample, train_and_evaluate, AblateOptions, EvalOptions, TrainOptions,
};
use spad::model::Checkpoint;
use spad::schedule::schedule_csv;
use spad::types::SegSample;
use spad::{Result, SpadError};

#[derive(Parser)]
#[command(name = "spad", version, about = "Perturbation-scheduled diffusion segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the run seed (the phantom seed for generate-data).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictorKind {
    Checkpoint,
    Oracle,
    ConstantBackground,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phantom corpus.
    GenerateData {
        #[command(flatten)]
        common: Common,
    },
    /// Write the per-epoch noise intensity and target count table.
    Schedule {
        #[command(flatten)]
        common: Common,
        /// Defaults to training.epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Render input, ScD mask, BcD band and perturbed condition side by side.
    PerturbPreview {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// Sample id; defaults to the first training sample.
        #[arg(long)]
        sample: Option<String>,
        /// One or more comma-separated epochs.
        #[arg(long = "epoch", value_delimiter = ',', default_value = "0")]
        epochs: Vec<usize>,
    },
    /// Train, then evaluate on the test split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint (or a stub predictor) on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "checkpoint")]
        predictor: PredictorKind,
    },
    /// Segment a single 8-bit grayscale PNG.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Run every ablation variant for every seed.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Skip runs that already finished with the same config.
        #[arg(long)]
        reuse: bool,
    },
}

fn load_config(common: &Common) -> Result<FileConfig> {
    let mut cfg = match &common.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.spad.training.seed = seed;
    }
    Ok(cfg)
}

fn run_config(common: &Common) -> Result<SpadConfig> {
    let cfg = load_config(common)?.spad;
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| SpadError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| SpadError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { common } => {
            let mut cfg = load_config(&common)?;
            if let Some(seed) = common.seed {
                cfg.phantom.seed = seed;
            }
            let samples = generate_corpus_samples(&cfg.phantom)?;
            let m = write_corpus(
                &samples,
                cfg.phantom.n_test,
                cfg.phantom.num_classes,
                Some(&cfg.phantom),
                &common.out,
            )?;
            println!("{} samples, content hash {}", samples.len(), m.content_hash);
        }
        Command::Schedule { common, epochs } => {
            let cfg = run_config(&common)?;
            let csv = schedule_csv(epochs.unwrap_or(cfg.training.epochs), &cfg)?;
            mkdir(&common.out)?;
            write(&common.out.join("schedule.csv"), &csv)?;
            print!("{csv}");
        }
        Command::PerturbPreview {
            common,
            corpus,
            sample,
            epochs,
        } => {
            let cfg = run_config(&common)?;
            let corpus = read_corpus(&corpus, true)?;
            let train = corpus.train_samples();
            let chosen = match &sample {
                Some(id) => train.iter().find(|s| &s.sample_id == id),
                None => train.first(),
            }
            .ok_or_else(|| SpadError::Corpus(format!("no training sample {sample:?}")))?;
            mkdir(&common.out)?;
            for epoch in epochs {
                let png = perturb_preview_png(chosen, &cfg, epoch)?;
                let name = format!("preview_{}_epoch{epoch:03}.png", chosen.sample_id);
                write(&common.out.join(name), png)?;
            }
        }
        Command::Train {
            common,
            corpus,
            resume,
        } => {
            let cfg = run_config(&common)?;
            let corpus = read_corpus(&corpus, true)?;
            let options = TrainOptions {
                resume,
                stop_after: None,
            };
            let r = train_and_evaluate(&cfg, &corpus, &common.out, &options)?;
            println!(
                "mIoU {:.4}  mDice {:.4}",
                r.metrics.mean_iou.unwrap_or(0.0),
                r.metrics.mean_dice.unwrap_or(0.0)
            );
        }
        Command::Eval {
            common,
            corpus,
            checkpoint,
            predictor,
        } => {
            let corpus = read_corpus(&corpus, true)?;
            let report = match predictor {
                PredictorKind::Checkpoint => {
                    let path = checkpoint.ok_or_else(|| {
                        SpadError::InvalidParam("--checkpoint is required".into())
                    })?;
                    let ckpt = Checkpoint::read(&path)?;
                    let config = match &common.config {
                        Some(_) => Some(run_config(&common)?),
                        None => None,
                    };
                    let options = EvalOptions {
                        seed: common.seed.unwrap_or(ckpt.header.seed),
                        write_predictions: true,
                    };
                    evaluate(&ckpt, config.as_ref(), &corpus, &common.out, &options)?
                }
                stub => {
                    let cfg = run_config(&common)?;
                    let spec = make_alpha_bar(cfg.diffusion.steps, corpus.manifest.num_classes)?;
                    let make = |s: &SegSample| -> Result<Box<dyn ReversePredictor>> {
                        Ok(match stub {
                            PredictorKind::Oracle => Box::new(PosteriorOracle { x0: s.label.clone() }),
                            _ => Box::new(ConstantPredictor { class: 0 }),
                        })
                    };
                    let options = EvalOptions {
                        seed: cfg.training.seed,
                        write_predictions: true,
                    };
                    evaluate_with(
                        make,
                        &corpus,
                        &spec,
                        cfg.metrics_protocol,
                        Some(cfg.hash()),
                        &common.out,
                        &options,
                    )?
                }
            };
            println!(
                "mIoU {:.4}  mDice {:.4}",
                report.mean_iou.unwrap_or(0.0),
                report.mean_dice.unwrap_or(0.0)
            );
        }
        Command::Sample {
            common,
            checkpoint,
            image,
        } => {
            let ckpt = Checkpoint::read(&checkpoint)?;
            if common.config.is_some() {
                ckpt.verify_config(&run_config(&common)?)?;
            }
            let bytes = std::fs::read(&image).map_err(|e| SpadError::Io {
                path: image.clone(),
                source: e,
            })?;
            let img = decode_image_png(&bytes)?;
            let (h, w) = img.shape();
            let stem = image
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "image".into());
            let k = ckpt.header.predictor.num_classes;
            let sample = SegSample::new(stem.clone(), img, spad::grid::LabelMap::new(h, w), k)?;
            let cfg = &ckpt.header.config;
            let spec = make_alpha_bar(cfg.diffusion.steps, cfg.diffusion.num_classes)?;
            let model = load_denoiser(&ckpt)?;
            let pred = predict_sample(&model, &sample, &spec, common.seed.unwrap_or(ckpt.header.seed))?;
            mkdir(&common.out)?;
            write(&common.out.join(format!("{stem}_label.png")), encode_label_png(&pred)?)?;
            write(
                &common.out.join(format!("{stem}_color.png")),
                encode_rgb_png(&colorize_labels(&pred), w, h)?,
            )?;
        }
        Command::Ablate {
            common,
            corpus,
            seeds,
            reuse,
        } => {
            let cfg = run_config(&common)?;
            let corpus = read_corpus(&corpus, true)?;
            let rows = ablate(&cfg, &corpus, &seeds, &common.out, &AblateOptions { reuse })?;
            for r in rows {
                println!(
                    "{:<14} mIoU {:.4} ± {:.4}  mDice {:.4} ± {:.4}",
                    r.variant.name(),
                    r.miou_mean,
                    r.miou_std,
                    r.mdice_mean,
                    r.mdice_std
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
