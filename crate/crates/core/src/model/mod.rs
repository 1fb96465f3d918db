//! Domain types shared by every other module.

mod asset;
mod idea;
mod run;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use asset::{digest_hex, ImageAsset, MediaType, HASH_ALGORITHM};
pub use idea::{DraftImage, FeedbackNote, Idea, IdeaSegment, MemoryRecord, PromptCandidate, PROMPT_WORD_BUDGET};
pub use run::{new_run, Event, Failure, IterationRecord, RunConfig, RunState, RunStatus, SeedPolicy, TransitionError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid idea: {0}")]
    InvalidIdea(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("image asset has no bytes")]
    EmptyAsset,
    #[error("digest mismatch: expected {expected}, computed {actual}")]
    DigestMismatch { expected: String, actual: String },
    #[error("prompt text is empty")]
    EmptyPrompt,
    #[error("feedback text is empty")]
    EmptyFeedback,
    #[error("iteration mismatch: {0}")]
    IterationMismatch(String),
}

/// Which of the four model calls a request belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Gen,
    Select,
    Feedback,
    Revise,
}

impl Purpose {
    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::Gen => "gen",
            Purpose::Select => "select",
            Purpose::Feedback => "feedback",
            Purpose::Revise => "revise",
        }
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Audit entry for one logical model call, kept in the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmCallRecord {
    pub purpose: Purpose,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Transport attempts across all asks, including retries.
    pub attempts: u32,
    /// True when the first answer was unusable and the request was re-sent.
    pub reasked: bool,
}
