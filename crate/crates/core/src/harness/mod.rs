//! Orchestration: training, evaluation, ablation and previews.

mod ablate;
mod evaluate;
mod plot;
mod preview;
mod train;

pub use ablate::{
    ablate, ablation_csv, train_and_evaluate, AblateOptions, AblationVariant, RunResult,
    VariantSummary,
};
pub use evaluate::{
    evaluate, evaluate_with, load_denoiser, predict_sample, EvalOptions, METRICS_FILE,
    PREDICTIONS_DIR,
};
pub use plot::bar_chart_svg;
pub use preview::{colorize_labels, label_color, perturb_preview_png, preview_outcome};
pub use train::{
    train, training_condition, TrainOptions, TrainOutcome, CHECKPOINT_FILE, MANIFEST_FILE, TIMING_FILE,
};
