//! Run configuration and the trajectory state machine.
//!
//! A [`RunState`] is an immutable snapshot. [`RunState::advance`] validates an
//! [`Event`] against the current status and returns the next snapshot:
//!
//! ```text
//! initialized -> prompting -> generating -> selecting -+-> finished
//!                    ^                                 |
//!                    +---------- reflecting <----------+
//! ```
//!
//! Any non-terminal status may move to `failed`; a failed run can be moved
//! back to the step that failed with [`Event::Recover`].

use std::fmt;

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};

use super::{DraftImage, FeedbackNote, Idea, LmmCallRecord, MemoryRecord, ModelError, PromptCandidate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    Fixed(u64),
    PerCallRandom,
}

impl SeedPolicy {
    /// Seed for draft `index` of iteration `iteration`: `s + t*N + n` under a
    /// fixed policy, `None` when each call draws its own seed.
    pub fn draft_seed(self, iteration: u32, index: u32, n_candidates: u32) -> Option<u64> {
        match self {
            SeedPolicy::Fixed(base) => Some(
                base.wrapping_add(u64::from(iteration) * u64::from(n_candidates))
                    .wrapping_add(u64::from(index)),
            ),
            SeedPolicy::PerCallRandom => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Prompts (and drafts) per iteration.
    pub n_candidates: u32,
    /// Iterations including the final one, which produces no feedback.
    pub max_iterations: u32,
    pub lmm_backend: String,
    pub generator_backend: String,
    /// Condition generation on the idea's first image when it has one.
    #[serde(default)]
    pub img2img: bool,
    #[serde(default = "default_strength")]
    pub img2img_strength: f64,
    pub seed_policy: SeedPolicy,
    #[serde(default)]
    pub retry_limit: u32,
}

fn default_strength() -> f64 {
    1.0
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_candidates: 3,
            max_iterations: 3,
            lmm_backend: "mock".into(),
            generator_backend: "mock".into(),
            img2img: false,
            img2img_strength: default_strength(),
            seed_policy: SeedPolicy::PerCallRandom,
            retry_limit: 3,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_candidates < 1 {
            return Err(ModelError::InvalidConfig("n_candidates must be at least 1".into()));
        }
        if self.max_iterations < 1 {
            return Err(ModelError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.img2img_strength > 0.0 && self.img2img_strength <= 1.0) {
            return Err(ModelError::InvalidConfig(format!(
                "img2img_strength must be in (0, 1], got {}",
                self.img2img_strength
            )));
        }
        if self.lmm_backend.trim().is_empty() || self.generator_backend.trim().is_empty() {
            return Err(ModelError::InvalidConfig("backend ids must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Initialized,
    Prompting,
    Generating,
    Selecting,
    Reflecting,
    Finished,
    Failed,
}

impl RunStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunStatus::Finished | RunStatus::Failed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Initialized => "initialized",
            RunStatus::Prompting => "prompting",
            RunStatus::Generating => "generating",
            RunStatus::Selecting => "selecting",
            RunStatus::Reflecting => "reflecting",
            RunStatus::Finished => "finished",
            RunStatus::Failed => "failed",
        }
    }
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything produced during one iteration, in step order.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: u32,
    pub prompts: Vec<PromptCandidate>,
    pub drafts: Vec<DraftImage>,
    pub selection: Option<u32>,
    pub degraded_selection: bool,
    pub feedback: Option<FeedbackNote>,
    pub lmm_calls: Vec<LmmCallRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    /// Step that was in progress when the run failed.
    pub step: RunStatus,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Start,
    PromptsGenerated {
        prompts: Vec<PromptCandidate>,
        calls: Vec<LmmCallRecord>,
    },
    DraftsGenerated {
        drafts: Vec<DraftImage>,
    },
    Selected {
        index: u32,
        degraded: bool,
        /// Hook for stop conditions other than the iteration budget.
        stop_early: bool,
        calls: Vec<LmmCallRecord>,
    },
    FeedbackReflected {
        feedback: FeedbackNote,
        calls: Vec<LmmCallRecord>,
    },
    Failed {
        message: String,
    },
    Recover,
}

impl Event {
    pub fn name(&self) -> &'static str {
        match self {
            Event::Start => "start",
            Event::PromptsGenerated { .. } => "prompts_generated",
            Event::DraftsGenerated { .. } => "drafts_generated",
            Event::Selected { .. } => "selected",
            Event::FeedbackReflected { .. } => "feedback_reflected",
            Event::Failed { .. } => "failed",
            Event::Recover => "recover",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransitionError {
    #[error("illegal transition: event `{event}` in status `{status}`")]
    Illegal { status: RunStatus, event: &'static str },
    #[error("rejected `{event}`: {reason}")]
    Invalid { event: &'static str, reason: String },
}

/// Snapshot of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub(crate) run_id: String,
    pub(crate) created_at: DateTime<Utc>,
    pub(crate) idea: Idea,
    pub(crate) config: RunConfig,
    pub(crate) t: u32,
    pub(crate) memory: Vec<MemoryRecord>,
    pub(crate) iterations: Vec<IterationRecord>,
    pub(crate) status: RunStatus,
    pub(crate) final_image: Option<DraftImage>,
    pub(crate) failure: Option<Failure>,
}

/// Starts a fresh trajectory.
pub fn new_run(idea: Idea, config: RunConfig) -> Result<RunState, ModelError> {
    config.validate()?;
    // Idea is validated on construction; re-check the text rule in case it
    // was built from stored parts.
    Idea::new(idea.segments().to_vec())?;
    Ok(RunState {
        run_id: uuid::Uuid::new_v4().to_string(),
        created_at: Utc::now().trunc_subsecs(3),
        idea,
        config,
        t: 0,
        memory: Vec::new(),
        iterations: Vec::new(),
        status: RunStatus::Initialized,
        final_image: None,
        failure: None,
    })
}

impl RunState {
    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }

    pub fn idea(&self) -> &Idea {
        &self.idea
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Current iteration, 0-based.
    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn memory(&self) -> &[MemoryRecord] {
        &self.memory
    }

    pub fn iterations(&self) -> &[IterationRecord] {
        &self.iterations
    }

    pub fn status(&self) -> RunStatus {
        self.status
    }

    pub fn final_image(&self) -> Option<&DraftImage> {
        self.final_image.as_ref()
    }

    pub fn failure(&self) -> Option<&Failure> {
        self.failure.as_ref()
    }

    fn current(&self) -> Option<&IterationRecord> {
        self.iterations.get(self.t as usize)
    }

    pub fn current_prompts(&self) -> &[PromptCandidate] {
        self.current().map(|r| r.prompts.as_slice()).unwrap_or(&[])
    }

    pub fn current_drafts(&self) -> &[DraftImage] {
        self.current().map(|r| r.drafts.as_slice()).unwrap_or(&[])
    }

    pub fn current_selection(&self) -> Option<u32> {
        self.current().and_then(|r| r.selection)
    }

    /// Whether the selection step of the current iteration ends the run.
    pub fn is_final_iteration(&self) -> bool {
        self.t + 1 >= self.config.max_iterations
    }

    /// Returns the next snapshot after `event`, or an error if `event` is
    /// not legal in the current status.
    pub fn advance(&self, event: Event) -> Result<RunState, TransitionError> {
        let name = event.name();
        let illegal = || TransitionError::Illegal {
            status: self.status,
            event: name,
        };
        let invalid = |reason: String| TransitionError::Invalid { event: name, reason };
        let n = self.config.n_candidates;
        let t = self.t;

        let mut next = self.clone();
        match (self.status, event) {
            (RunStatus::Initialized, Event::Start) => {
                next.status = RunStatus::Prompting;
            }
            (RunStatus::Prompting, Event::PromptsGenerated { prompts, calls }) => {
                if self.iterations.len() != t as usize {
                    return Err(invalid(format!("iteration {t} already has prompts")));
                }
                if prompts.len() != n as usize {
                    return Err(invalid(format!("expected {n} prompts, got {}", prompts.len())));
                }
                for (i, p) in prompts.iter().enumerate() {
                    if p.iteration() != t || p.index() != i as u32 {
                        return Err(invalid(format!(
                            "prompt at position {i} is labelled iteration {} index {}",
                            p.iteration(),
                            p.index()
                        )));
                    }
                }
                next.iterations.push(IterationRecord {
                    iteration: t,
                    prompts,
                    drafts: Vec::new(),
                    selection: None,
                    degraded_selection: false,
                    feedback: None,
                    lmm_calls: calls,
                });
                next.status = RunStatus::Generating;
            }
            (RunStatus::Generating, Event::DraftsGenerated { drafts }) => {
                if drafts.len() != n as usize {
                    return Err(invalid(format!("expected {n} drafts, got {}", drafts.len())));
                }
                for (i, d) in drafts.iter().enumerate() {
                    if d.iteration != t || d.prompt_index != i as u32 {
                        return Err(invalid(format!(
                            "draft at position {i} is labelled iteration {} prompt {}",
                            d.iteration, d.prompt_index
                        )));
                    }
                }
                let record = next.iterations.get_mut(t as usize).ok_or_else(illegal)?;
                record.drafts = drafts;
                next.status = RunStatus::Selecting;
            }
            (
                RunStatus::Selecting,
                Event::Selected {
                    index,
                    degraded,
                    stop_early,
                    calls,
                },
            ) => {
                let record = next.iterations.get_mut(t as usize).ok_or_else(illegal)?;
                let Some(draft) = record.drafts.get(index as usize).cloned() else {
                    return Err(invalid(format!("index {index} outside {} drafts", record.drafts.len())));
                };
                record.selection = Some(index);
                record.degraded_selection = degraded;
                record.lmm_calls.extend(calls);
                if self.is_final_iteration() || stop_early {
                    next.final_image = Some(draft);
                    next.status = RunStatus::Finished;
                } else {
                    next.status = RunStatus::Reflecting;
                }
            }
            (RunStatus::Reflecting, Event::FeedbackReflected { feedback, calls }) => {
                if feedback.iteration() != t {
                    return Err(invalid(format!(
                        "feedback for iteration {} while at iteration {t}",
                        feedback.iteration()
                    )));
                }
                if self.is_final_iteration() {
                    return Err(invalid("no feedback is written on the final iteration".into()));
                }
                let record = next.iterations.get_mut(t as usize).ok_or_else(illegal)?;
                let index = record.selection.ok_or_else(illegal)? as usize;
                let entry = MemoryRecord::new(
                    record.prompts[index].clone(),
                    record.drafts[index].clone(),
                    feedback.clone(),
                )
                .map_err(|e| invalid(e.to_string()))?;
                record.feedback = Some(feedback);
                record.lmm_calls.extend(calls);
                next.memory.push(entry);
                next.t = t + 1;
                next.status = RunStatus::Prompting;
            }
            (status, Event::Failed { message }) if !status.is_terminal() => {
                next.failure = Some(Failure { step: status, message });
                next.status = RunStatus::Failed;
            }
            (RunStatus::Failed, Event::Recover) => {
                let failure = self.failure.as_ref().ok_or_else(illegal)?;
                next.status = failure.step;
                next.failure = None;
            }
            _ => return Err(illegal()),
        }
        Ok(next)
    }
}
