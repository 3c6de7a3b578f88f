//! Decision scores, equal error rate, DET curves and score-file I/O.
//!
//! Scores follow the convention "higher means more bona fide"; an utterance is
//! accepted as bona fide when `score >= threshold`.

mod eer;
mod scores;

pub use eer::{compute_eer, det_curve, det_points, eer_from_scores, split_by_label, DetPoint, EerResult};
pub use scores::{
    read_scores, score_from_logits, write_det, write_scores, ScoreEntry, ScoreRead, ScoreSet,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("both bona fide and spoof scores are required")]
    SingleClass,
    #[error("scores must be finite")]
    NonFinite,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate utterance id `{0}`")]
    DuplicateId(String),
    #[error("label file: {0}")]
    Labels(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
