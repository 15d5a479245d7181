mod common;

use std::sync::OnceLock;

use spad::data::Corpus;
use spad::diffusion::{make_alpha_bar, ConstantPredictor, PosteriorOracle, ReversePredictor};
use spad::harness::{
    ablate, evaluate, evaluate_with, train, AblateOptions, AblationVariant, EvalOptions,
    TrainOptions, CHECKPOINT_FILE, MANIFEST_FILE, METRICS_FILE, TIMING_FILE,
};
use spad::manifest::{read_manifest, RunStatus};
use spad::model::Checkpoint;
use spad::types::SegSample;
use spad::SpadError;

fn corpus() -> &'static Corpus {
    static CORPUS: OnceLock<(tempfile::TempDir, Corpus)> = OnceLock::new();
    &CORPUS
        .get_or_init(|| {
            let dir = tempfile::tempdir().unwrap();
            let corpus = common::write_phantom_corpus(&common::tiny_phantom(6, 3, 32, 3), dir.path());
            (dir, corpus)
        })
        .1
}

#[test]
fn zero_epochs_gives_untrained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(&common::tiny_config(3, 0), corpus(), dir.path(), &TrainOptions::default()).unwrap();
    assert!(out.manifest.epochs.is_empty());
    assert_eq!(out.manifest.status, RunStatus::Complete);
    let ckpt = Checkpoint::read(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ckpt.header.epochs_completed, 0);
    assert_eq!(ckpt.params.len(), out.manifest.num_params);
}

#[test]
fn training_is_deterministic() {
    let cfg = common::tiny_config(3, 2);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    train(&cfg, corpus(), a.path(), &TrainOptions::default()).unwrap();
    train(&cfg, corpus(), b.path(), &TrainOptions::default()).unwrap();
    for f in [MANIFEST_FILE, CHECKPOINT_FILE] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let timing: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.path().join(TIMING_FILE)).unwrap()).unwrap();
    assert_eq!(timing["epoch_seconds"].as_array().unwrap().len(), 2);
    assert!(timing["finished_unix"].as_f64().unwrap() >= timing["started_unix"].as_f64().unwrap());
}

#[test]
fn auxiliary_cross_entropy_changes_training() {
    let mut cfg = common::tiny_config(3, 1);
    let a = tempfile::tempdir().unwrap();
    let plain = train(&cfg, corpus(), a.path(), &TrainOptions::default()).unwrap().manifest;
    cfg.training.aux_ce_weight = 0.5;
    let b = tempfile::tempdir().unwrap();
    let hybrid = train(&cfg, corpus(), b.path(), &TrainOptions::default()).unwrap().manifest;
    assert_ne!(plain.config_hash, hybrid.config_hash);
    assert!(hybrid.epochs[0].train_loss > plain.epochs[0].train_loss);
}

#[test]
fn manifest_records_the_schedule() {
    let mut cfg = common::tiny_config(3, 6);
    cfg.training.checkpoint_every = 0;
    let dir = tempfile::tempdir().unwrap();
    let m = train(&cfg, corpus(), dir.path(), &TrainOptions::default()).unwrap().manifest;
    assert_eq!(m.epochs.len(), 6);
    for (p, rec) in m.epochs.iter().enumerate() {
        assert_eq!(rec.epoch, p);
        let sigma = 0.5 / (1.0 + 0.2 * p as f64);
        assert!((rec.sigma - sigma).abs() < 1e-12);
        assert_eq!(rec.target_count, (3.0 / (1.0 + 0.1 * p as f64)).floor() as usize);
        assert!(rec.train_loss.is_finite() && rec.train_loss >= 0.0);
    }
    assert_eq!(m.label_sources.train, "labels_train");
    assert_eq!(m.label_sources.eval, "labels_clean");
    assert_eq!(m.train_ids, corpus().manifest.train_ids);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let cfg = common::tiny_config(3, 3);
    let whole = tempfile::tempdir().unwrap();
    train(&cfg, corpus(), whole.path(), &TrainOptions::default()).unwrap();

    let split = tempfile::tempdir().unwrap();
    let first = TrainOptions { resume: false, stop_after: Some(1) };
    let partial = train(&cfg, corpus(), split.path(), &first).unwrap();
    assert_eq!(partial.manifest.epochs.len(), 1);
    assert_eq!(partial.manifest.status, RunStatus::InProgress);
    let rest = TrainOptions { resume: true, stop_after: None };
    train(&cfg, corpus(), split.path(), &rest).unwrap();

    for f in [MANIFEST_FILE, CHECKPOINT_FILE] {
        assert_eq!(std::fs::read(whole.path().join(f)).unwrap(), std::fs::read(split.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn resume_refuses_a_different_config() {
    let cfg = common::tiny_config(3, 2);
    let dir = tempfile::tempdir().unwrap();
    train(&cfg, corpus(), dir.path(), &TrainOptions { resume: false, stop_after: Some(1) }).unwrap();
    let mut other = cfg.clone();
    other.training.learning_rate = 1e-3;
    let err = train(&other, corpus(), dir.path(), &TrainOptions { resume: true, stop_after: None }).unwrap_err();
    assert!(matches!(err, SpadError::HashMismatch { .. }));
}

#[test]
fn divergence_is_flagged() {
    let mut cfg = common::tiny_config(3, 3);
    cfg.training.learning_rate = 1e30;
    let dir = tempfile::tempdir().unwrap();
    let err = train(&cfg, corpus(), dir.path(), &TrainOptions::default()).unwrap_err();
    assert!(matches!(err, SpadError::DivergenceDetected { .. }), "{err}");
    let m = read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.status, RunStatus::Diverged);
}

fn stub_eval(oracle: bool, dir: &std::path::Path) -> spad::metrics::MetricsReport {
    let spec = make_alpha_bar(20, 3).unwrap();
    let make = |s: &SegSample| -> spad::Result<Box<dyn ReversePredictor>> {
        Ok(if oracle {
            Box::new(PosteriorOracle { x0: s.label.clone() })
        } else {
            Box::new(ConstantPredictor { class: 0 })
        })
    };
    evaluate_with(make, corpus(), &spec, spad::config::MetricsProtocol::DatasetLevel, None, dir, &EvalOptions::default()).unwrap()
}

#[test]
fn oracle_predictor_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let r = stub_eval(true, dir.path());
    assert_eq!(r.mean_iou, Some(1.0));
    assert_eq!(r.mean_dice, Some(1.0));
    assert_eq!(std::fs::read_dir(dir.path().join("predictions")).unwrap().count(), 3);
}

#[test]
fn background_predictor_has_zero_foreground_iou() {
    let dir = tempfile::tempdir().unwrap();
    let r = stub_eval(false, dir.path());
    assert_eq!(r.mean_iou, Some(0.0));
    for (name, s) in &r.per_class {
        if name != "background" {
            assert!(s.iou.is_none_or(|v| v == 0.0), "{name}");
        }
    }
}

#[test]
fn evaluation_is_deterministic_and_hash_checked() {
    let cfg = common::tiny_config(3, 1);
    let run = tempfile::tempdir().unwrap();
    let out = train(&cfg, corpus(), run.path(), &TrainOptions::default()).unwrap();
    let ckpt = Checkpoint::read(&out.checkpoint).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let opts = EvalOptions::default();
    let ra = evaluate(&ckpt, Some(&cfg), corpus(), a.path(), &opts).unwrap();
    evaluate(&ckpt, Some(&cfg), corpus(), b.path(), &opts).unwrap();
    assert_eq!(
        std::fs::read(a.path().join(METRICS_FILE)).unwrap(),
        std::fs::read(b.path().join(METRICS_FILE)).unwrap()
    );
    assert_eq!(ra.config_hash.as_deref(), Some(cfg.hash().as_str()));
    let mut other = cfg.clone();
    other.beta = 0.3;
    assert!(matches!(
        evaluate(&ckpt, Some(&other), corpus(), a.path(), &opts),
        Err(SpadError::HashMismatch { .. })
    ));
}

#[test]
fn variants_expand_to_their_flags() {
    let base = common::tiny_config(3, 1);
    let flags = |v: AblationVariant| {
        let c = v.apply(&base);
        (c.enable_scd, c.enable_bcd, c.enable_pas)
    };
    assert!(!flags(AblationVariant::Baseline).0);
    assert!(!flags(AblationVariant::Baseline).1);
    assert_eq!(flags(AblationVariant::ScdBcdNopas), (true, true, false));
    assert_eq!(flags(AblationVariant::Full), (true, true, true));
    assert_eq!(flags(AblationVariant::ScdPas), (true, false, true));
    assert_eq!(flags(AblationVariant::BcdPas), (false, true, true));
    let names: Vec<_> = AblationVariant::ALL.iter().map(|v| v.name()).collect();
    assert_eq!(names, ["baseline", "scd_pas", "bcd_pas", "scd_bcd_nopas", "full"]);
}

#[test]
fn ablation_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let rows = ablate(&common::tiny_config(3, 1), corpus(), &[7], dir.path(), &AblateOptions::default()).unwrap();
    assert_eq!(rows.len(), 5);
    let csv = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 6);
    for (line, v) in lines[1..].iter().zip(AblationVariant::ALL) {
        assert!(line.starts_with(&format!("{},1,", v.name())));
    }
    for r in &rows {
        assert!((0.0..=1.0).contains(&r.miou_mean) && (0.0..=1.0).contains(&r.mdice_mean));
        assert_eq!(r.miou_std, 0.0);
    }
    let svg = std::fs::read_to_string(dir.path().join("ablation.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("scd_bcd_nopas"));
    let again = ablate(
        &common::tiny_config(3, 1),
        corpus(),
        &[7],
        dir.path(),
        &AblateOptions { reuse: true },
    )
    .unwrap();
    assert_eq!(again[4].miou, rows[4].miou);
}
