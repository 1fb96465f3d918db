//! The refinement loop: initial prompts, draft fan-out, selection, feedback,
//! and revision, repeated until the iteration budget is spent.
//!
//! Each step turns one persisted [`RunState`] into the next. Resuming a run
//! simply re-enters the loop at the stored status, so an interrupted step
//! starts over from its beginning.

use std::ops::ControlFlow;
use std::sync::Arc;

use crate::imagegen::{placeholder_image, GenError, GenGateway, GenerateOptions};
use crate::lmm::{LmmError, LmmGateway};
use crate::model::{
    new_run, DraftImage, Event, FeedbackNote, Idea, LmmCallRecord, MemoryRecord, ModelError, PromptCandidate, Purpose,
    RunConfig, RunState, RunStatus, TransitionError,
};
use crate::store::{Store, StoreError};
use crate::templates::{parse_selection, parse_wrapped, ParseError};
use crate::templates::{LmmRequest, TemplateError, TemplateSet};

/// Why a model answer could not be used, even after the re-ask.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Unusable {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("backend refused: {0}")]
    Refusal(String),
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("{purpose} call failed: {source}")]
    Lmm {
        purpose: Purpose,
        #[source]
        source: LmmError,
    },
    #[error("{purpose} answer unusable after re-ask: {reason}")]
    Unusable { purpose: Purpose, reason: Unusable },
    #[error("all {} draft generations failed; first error: {}", .0.len(), .0[0])]
    AllDraftsFailed(Vec<GenError>),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error(transparent)]
    Model(#[from] ModelError),
    /// A step failed; the failed trajectory has been recorded (and persisted
    /// when the engine has a store).
    #[error("run {} failed while {step}: {source}", .state.run_id())]
    StepFailed {
        step: RunStatus,
        state: Box<RunState>,
        #[source]
        source: Box<EngineError>,
    },
}

impl EngineError {
    /// The underlying step error, unwrapping [`EngineError::StepFailed`].
    pub fn root(&self) -> &EngineError {
        match self {
            EngineError::StepFailed { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn failed_state(&self) -> Option<&RunState> {
        match self {
            EngineError::StepFailed { state, .. } => Some(state),
            _ => None,
        }
    }
}

/// Index chosen by the selection step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub index: u32,
    /// True when the model's answer was unusable twice and index 0 was taken.
    pub degraded: bool,
}

/// Extra stop condition, consulted after each non-final selection.
pub type StopHook = Arc<dyn Fn(&RunState, Selection) -> bool + Send + Sync>;

enum Answer<T> {
    Parsed(T),
    Unusable(Unusable),
}

#[derive(Clone)]
pub struct Engine {
    lmm: LmmGateway,
    gen: GenGateway,
    templates: Arc<TemplateSet>,
    store: Option<Store>,
    stop_hook: Option<StopHook>,
    resolution: u32,
}

impl Engine {
    pub fn new(lmm: LmmGateway, gen: GenGateway) -> Self {
        let resolution = gen.descriptor().kind.default_resolution();
        Self {
            lmm,
            gen,
            templates: Arc::new(TemplateSet::builtin().clone()),
            store: None,
            stop_hook: None,
            resolution,
        }
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = Arc::new(templates);
        self
    }

    /// Persist after every step boundary.
    pub fn with_store(mut self, store: Store) -> Self {
        self.store = Some(store);
        self
    }

    pub fn with_stop_hook(mut self, hook: StopHook) -> Self {
        self.stop_hook = Some(hook);
        self
    }

    /// Square output size requested from the generator.
    pub fn with_resolution(mut self, resolution: u32) -> Self {
        self.resolution = resolution;
        self
    }

    pub fn store(&self) -> Option<&Store> {
        self.store.as_ref()
    }

    /// Sends `request`, re-asking once if the answer is refused or fails to parse.
    fn ask<T>(
        &self,
        request: &LmmRequest,
        retry_limit: u32,
        mut parse: impl FnMut(&str) -> Result<T, ParseError>,
    ) -> Result<(Answer<T>, LmmCallRecord), EngineError> {
        let purpose = request.purpose;
        let mut record = LmmCallRecord {
            purpose,
            temperature: request.temperature,
            max_output_tokens: request.max_output_tokens,
            attempts: 0,
            reasked: false,
        };
        let mut last = None;
        for round in 0..2 {
            if round == 1 {
                record.reasked = true;
                tracing::warn!(%purpose, reason = %last.as_ref().expect("set on round 0"), "re-asking");
            }
            match self.lmm.complete_with_retry(request, retry_limit) {
                Ok(done) => {
                    record.attempts += done.attempts;
                    match parse(&done.text) {
                        Ok(value) => return Ok((Answer::Parsed(value), record)),
                        Err(e) => last = Some(Unusable::Parse(e)),
                    }
                }
                Err(LmmError::Refusal(msg)) => {
                    record.attempts += 1;
                    last = Some(Unusable::Refusal(msg));
                }
                Err(source) => return Err(EngineError::Lmm { purpose, source }),
            }
        }
        Ok((Answer::Unusable(last.expect("two rounds ran")), record))
    }

    fn ask_prompts(
        &self,
        request: &LmmRequest,
        config: &RunConfig,
        iteration: u32,
    ) -> Result<(Vec<PromptCandidate>, LmmCallRecord), EngineError> {
        let n = config.n_candidates as usize;
        let (answer, record) = self.ask(request, config.retry_limit, |raw| parse_wrapped(raw, n))?;
        match answer {
            Answer::Parsed(spans) => {
                let prompts = spans
                    .into_iter()
                    .enumerate()
                    .map(|(i, text)| PromptCandidate::new(text, iteration, i as u32))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok((prompts, record))
            }
            Answer::Unusable(reason) => Err(EngineError::Unusable {
                purpose: request.purpose,
                reason,
            }),
        }
    }

    /// N prompts for iteration 0 from the idea alone.
    pub fn initial_prompts(
        &self,
        idea: &Idea,
        config: &RunConfig,
    ) -> Result<(Vec<PromptCandidate>, LmmCallRecord), EngineError> {
        config.validate()?;
        let request = self.templates.render_gen(idea, config.n_candidates)?;
        self.ask_prompts(&request, config, 0)
    }

    /// One draft per prompt, generated concurrently and returned in prompt order.
    pub fn generate_drafts(
        &self,
        prompts: &[PromptCandidate],
        idea: &Idea,
        config: &RunConfig,
    ) -> Result<Vec<DraftImage>, EngineError> {
        let Some(first) = prompts.first() else {
            return Err(TemplateError::Precondition("no prompts to generate from".into()).into());
        };
        let iteration = first.iteration();
        if prompts.iter().any(|p| p.iteration() != iteration) {
            return Err(TemplateError::Precondition("prompts span several iterations".into()).into());
        }
        let init_image = if config.img2img {
            let init = idea.first_image().cloned();
            if init.is_none() {
                tracing::warn!("img2img requested but the idea has no image; using text-to-image");
            }
            init
        } else {
            None
        };
        let n = prompts.len() as u32;
        let options: Vec<GenerateOptions> = prompts
            .iter()
            .map(|p| GenerateOptions {
                seed: config.seed_policy.draft_seed(iteration, p.index(), n),
                strength: init_image.as_ref().map(|_| config.img2img_strength),
                init_image: init_image.clone(),
                ..GenerateOptions::text_to_image(self.resolution, None)
            })
            .collect();

        let results: Vec<Result<_, GenError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = prompts
                .iter()
                .zip(&options)
                .map(|(p, opts)| scope.spawn(move || self.gen.generate(p.text(), opts)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("generation thread panicked"))
                .collect()
        });

        let backend_id = self.gen.descriptor().id.clone();
        let mut failures = Vec::new();
        let mut drafts = Vec::with_capacity(prompts.len());
        for (p, result) in prompts.iter().zip(results) {
            let draft = match result {
                Ok(mut out) => DraftImage {
                    image: out.images.remove(0),
                    prompt_index: p.index(),
                    iteration,
                    seed: out.seed_used,
                    backend_id: backend_id.clone(),
                    placeholder: false,
                },
                Err(e) => {
                    tracing::warn!(iteration, prompt = p.index(), error = %e, "generation failed; using placeholder");
                    failures.push(e);
                    DraftImage {
                        image: placeholder_image(self.resolution, self.resolution),
                        prompt_index: p.index(),
                        iteration,
                        seed: None,
                        backend_id: backend_id.clone(),
                        placeholder: true,
                    }
                }
            };
            drafts.push(draft);
        }
        if failures.len() == prompts.len() {
            return Err(EngineError::AllDraftsFailed(failures));
        }
        Ok(drafts)
    }

    /// Picks the best draft; falls back to index 0 when the answer is unusable twice.
    pub fn select_draft(
        &self,
        idea: &Idea,
        drafts: &[DraftImage],
        config: &RunConfig,
    ) -> Result<(Selection, LmmCallRecord), EngineError> {
        let request = self.templates.render_select(idea, drafts)?;
        let n = drafts.len() as u32;
        let (answer, record) = self.ask(&request, config.retry_limit, |raw| parse_selection(raw, n))?;
        let selection = match answer {
            Answer::Parsed(index) => Selection { index, degraded: false },
            Answer::Unusable(reason) => {
                tracing::warn!(%reason, "selection unusable twice; falling back to draft 0");
                Selection {
                    index: 0,
                    degraded: true,
                }
            }
        };
        Ok((selection, record))
    }

    /// Feedback on the draft selected at iteration `t`.
    pub fn reflect_feedback(
        &self,
        idea: &Idea,
        selected_prompt: &PromptCandidate,
        selected: &DraftImage,
        memory: &[MemoryRecord],
        t: u32,
        config: &RunConfig,
    ) -> Result<(FeedbackNote, LmmCallRecord), EngineError> {
        if t + 1 >= config.max_iterations {
            return Err(TemplateError::Precondition(format!("no feedback on the final iteration {t}")).into());
        }
        let request = self
            .templates
            .render_feedback(idea, selected, selected_prompt, memory, t)?;
        let (answer, record) = self.ask(&request, config.retry_limit, |raw| {
            parse_wrapped(raw, 1).map(|mut v| v.remove(0))
        })?;
        match answer {
            Answer::Parsed(text) => Ok((FeedbackNote::new(text, t)?, record)),
            Answer::Unusable(reason) => Err(EngineError::Unusable {
                purpose: Purpose::Feedback,
                reason,
            }),
        }
    }

    /// N revised prompts for iteration `t + 1`.
    #[allow(clippy::too_many_arguments)]
    pub fn revise_prompts(
        &self,
        idea: &Idea,
        memory: &[MemoryRecord],
        t: u32,
        selected_prompt: &PromptCandidate,
        selected: &DraftImage,
        feedback: &FeedbackNote,
        config: &RunConfig,
    ) -> Result<(Vec<PromptCandidate>, LmmCallRecord), EngineError> {
        let request = self.templates.render_revise(
            idea,
            memory,
            t,
            selected_prompt,
            selected,
            feedback,
            config.n_candidates,
        )?;
        self.ask_prompts(&request, config, t + 1)
    }

    /// Performs the step implied by `state.status()`.
    pub fn step(&self, state: &RunState) -> Result<RunState, EngineError> {
        let idea = state.idea();
        let config = state.config();
        let t = state.t();
        let event = match state.status() {
            RunStatus::Initialized => Event::Start,
            RunStatus::Prompting if t == 0 => {
                let (prompts, call) = self.initial_prompts(idea, config)?;
                Event::PromptsGenerated {
                    prompts,
                    calls: vec![call],
                }
            }
            RunStatus::Prompting => {
                let memory = state.memory();
                let previous = memory
                    .get(t as usize - 1)
                    .ok_or_else(|| TemplateError::Precondition(format!("no memory for iteration {}", t - 1)))?;
                let (prompts, call) = self.revise_prompts(
                    idea,
                    &memory[..t as usize - 1],
                    t - 1,
                    previous.selected_prompt(),
                    previous.selected_image(),
                    previous.feedback(),
                    config,
                )?;
                Event::PromptsGenerated {
                    prompts,
                    calls: vec![call],
                }
            }
            RunStatus::Generating => Event::DraftsGenerated {
                drafts: self.generate_drafts(state.current_prompts(), idea, config)?,
            },
            RunStatus::Selecting => {
                let (selection, call) = self.select_draft(idea, state.current_drafts(), config)?;
                let stop_early =
                    !state.is_final_iteration() && self.stop_hook.as_ref().is_some_and(|hook| hook(state, selection));
                Event::Selected {
                    index: selection.index,
                    degraded: selection.degraded,
                    stop_early,
                    calls: vec![call],
                }
            }
            RunStatus::Reflecting => {
                let index = state
                    .current_selection()
                    .ok_or_else(|| TemplateError::Precondition("reflecting without a selection".into()))?
                    as usize;
                let (feedback, call) = self.reflect_feedback(
                    idea,
                    &state.current_prompts()[index],
                    &state.current_drafts()[index],
                    state.memory(),
                    t,
                    config,
                )?;
                Event::FeedbackReflected {
                    feedback,
                    calls: vec![call],
                }
            }
            status @ (RunStatus::Finished | RunStatus::Failed) => {
                return Err(TransitionError::Illegal { status, event: "step" }.into())
            }
        };
        Ok(state.advance(event)?)
    }

    fn persist(&self, state: &RunState) -> Result<(), EngineError> {
        if let Some(store) = &self.store {
            store.persist(state)?;
        }
        Ok(())
    }

    /// Steps until the run finishes, fails, or `on_boundary` breaks.
    ///
    /// `on_boundary` sees every state right after it is persisted. A break
    /// returns the state as it stands, ready for [`Engine::resume`].
    pub fn drive(
        &self,
        mut state: RunState,
        mut on_boundary: impl FnMut(&RunState) -> ControlFlow<()>,
    ) -> Result<RunState, EngineError> {
        let _lock = match &self.store {
            Some(store) => Some(store.lock(state.run_id())?),
            None => None,
        };
        if state.status() == RunStatus::Initialized {
            self.persist(&state)?;
        }
        while !state.status().is_terminal() {
            let step = state.status();
            let span = tracing::info_span!("step", run = state.run_id(), t = state.t(), %step);
            let _entered = span.enter();
            match self.step(&state) {
                Ok(next) => {
                    state = next;
                    self.persist(&state)?;
                    tracing::info!(status = %state.status(), "step done");
                    if on_boundary(&state).is_break() {
                        return Ok(state);
                    }
                }
                Err(error) => {
                    tracing::error!(%error, "step failed");
                    let failed = state.advance(Event::Failed {
                        message: error.to_string(),
                    })?;
                    self.persist(&failed)?;
                    return Err(EngineError::StepFailed {
                        step,
                        state: Box::new(failed),
                        source: Box::new(error),
                    });
                }
            }
        }
        Ok(state)
    }

    /// Starts and finishes a fresh run.
    pub fn run(&self, idea: Idea, config: RunConfig) -> Result<RunState, EngineError> {
        self.drive(new_run(idea, config)?, |_| ControlFlow::Continue(()))
    }

    /// Continues a stored run from its last boundary. Finished runs are
    /// returned unchanged; failed runs retry the step that failed.
    pub fn resume(&self, state: RunState) -> Result<RunState, EngineError> {
        let state = match state.status() {
            RunStatus::Finished => return Ok(state),
            RunStatus::Failed => state.advance(Event::Recover)?,
            _ => state,
        };
        self.drive(state, |_| ControlFlow::Continue(()))
    }

    /// Loads `run_id` from the engine's store and resumes it.
    pub fn resume_stored(&self, run_id: &str) -> Result<RunState, EngineError> {
        let store = self
            .store
            .as_ref()
            .ok_or_else(|| StoreError::MissingRun(run_id.to_owned()))?;
        let state = store.load(run_id)?;
        self.resume(state)
    }
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("lmm", &self.lmm)
            .field("gen", &self.gen)
            .field("store", &self.store)
            .field("resolution", &self.resolution)
            .finish()
    }
}
