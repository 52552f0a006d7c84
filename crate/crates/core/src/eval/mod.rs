//! Evaluation: background fidelity, contrastive alignment, detector-score
//! aggregation and human-moderation rates.

mod alignment;
mod fidelity;
mod moderation;
mod scores;

use thiserror::Error;

pub use alignment::{
    alignment_report, cosine, delta_clip, similarity, AlignmentReport, EmbeddingProvider,
    MockEmbedder, PromptPair,
};
pub use fidelity::{
    background_mask, fidelity_report, gaussian_kernel_1d, grayscale, lpips_bg, psnr_bg, ssim_bg,
    BackgroundMask, FidelityReport, PerceptualDistanceProvider, RandomProjectionLpips,
    DYNAMIC_RANGE, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW,
};
pub use moderation::{
    moderation_rates, read_judgments, Condition, JudgmentRecord, ModerationReport, Response,
    StudyCategory,
};
pub use scores::{
    aggregate_detector_scores, DetectorScoreTable, RowSuppression, ScoreRow, ScoreSummary,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no background pixels left to evaluate")]
    EmptyBackground,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("provider failure: {0}")]
    Provider(String),
    #[error("no judgments for the selected condition")]
    NoJudgments,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
