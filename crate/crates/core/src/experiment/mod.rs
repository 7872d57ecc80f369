//! Speaker-independent cross-validation: fold plans, training, soft-voted
//! speaker scores, metrics and report files.

mod crossval;
mod folds;
mod metrics;
mod report;
mod train;

pub use crossval::{run_cross_validation, CrossValidation, CvConfig, ModelConfig};
pub use folds::{make_folds, Fold, FoldPlan};
pub use metrics::{accuracy, auc, mean_std, soft_vote};
pub use report::{
    emit_report, read_results, ConfigSummary, EvaluationReport, RunMetrics, ScoreRow, ECHO_FILE, PC_GITA_REFERENCE,
    RESULTS_FILE, SUMMARY_FILE, TABLE_FILE,
};
pub use train::{
    evaluate_loss, predict_probs, speaker_score, speaker_scores, train_model, Dataset, Example, SpeakerScore,
};

/// Combines values into one seed with the splitmix64 finalizer.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x243F_6A88_85A3_08D3;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}
