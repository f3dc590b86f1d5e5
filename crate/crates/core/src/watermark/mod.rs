//! Green-list and Gumbel watermarks, detection statistics, and post-hoc
//! rollback for generations that leave the history inconsistent.

mod detect;
mod generate;
mod scheme;

pub use detect::{auroc, phi, score_ids, score_text, strength, strength_of, ScoreTrace};
pub use generate::{
    embed_watermark, generate_plain, EventOutcome, Generation, InconsistencyEvent, RollbackState,
    DEFAULT_MAX_ROLLBACKS,
};
pub use scheme::{derive_vector, SchemeConfig, SchemeKind};

use crate::tokenizer::{TokenId, TokenizerError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WatermarkError {
    #[error("invalid watermark config: {0}")]
    Config(String),
    #[error("prompt does not round-trip")]
    InconsistentPrompt,
    #[error("insufficient context: {tokens} tokens, need at least {needed}")]
    InsufficientContext { tokens: usize, needed: usize },
    #[error("no scored positions")]
    NoScoredPositions,
    #[error("no candidate left at step {step}")]
    NoCandidates { step: usize },
    #[error("rollback budget exhausted after {max} rollbacks")]
    RollbackBudget {
        max: usize,
        partial_text: String,
        partial_tokens: Vec<TokenId>,
    },
    #[error(transparent)]
    Lm(#[from] crate::lm::LmError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}
