//! Turns a multimodal idea (text interleaved with reference images) into an
//! image by letting a multimodal model iteratively write prompts, pick the
//! best draft, critique it, and revise.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: ideas, prompts, drafts, memory, and the run state machine
//! - [`templates`]: the four prompt templates and the `<START>`/`<END>` parser
//! - [`lmm`]: multimodal chat backends, retries, and a scripted mock
//! - [`imagegen`]: image generators, the HTTP wire protocol, and a mock
//! - [`engine`]: the refinement loop
//! - [`store`]: crash-safe persistence and resume
//! - [`eval`]: shuffled preference ballots and their tallies

pub mod calllog;
pub mod engine;
pub mod eval;
pub mod imagegen;
pub mod lmm;
pub mod model;
pub mod store;
mod sync;
pub mod templates;

pub use calllog::{CallKind, CallLog};
pub use engine::{Engine, EngineError, Selection, StopHook, Unusable};
pub use imagegen::{GenError, GenGateway, GenerateOptions, GeneratorDescriptor, GeneratorKind, ImageGenerator};
pub use lmm::{LmmBackend, LmmBackendDescriptor, LmmError, LmmGateway, RetryPolicy};
pub use model::{
    new_run, DraftImage, Event, FeedbackNote, Idea, IdeaSegment, ImageAsset, LmmCallRecord, MediaType, MemoryRecord,
    ModelError, PromptCandidate, Purpose, RunConfig, RunState, RunStatus, SeedPolicy,
};
pub use store::{Store, StoreError};
pub use templates::{LmmMessagePart, LmmRequest, TemplateError, TemplateSet};
