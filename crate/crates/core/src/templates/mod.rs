//! Prompt templates for the four model calls and parsers for the
//! `<START>`/`<END>` answer convention.
//!
//! Template sources live in `templates/*.txt` with named slot markers
//! (`{IDEA}`, `{N}`, `{N-1}`, `{t}`, `{history}`, `{images}`, `{prompt}`,
//! `{image}`, `{reflection}`). Rendering replaces each marker with text or
//! image parts; everything outside markers is copied byte for byte.
//!
//! Iterations are 0-based everywhere else in the crate; the `{t}` slot renders
//! the 1-based round number.

mod parse;

use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

pub use parse::{parse_selection, parse_wrapped, wrapped_spans, ParseError, END_MARKER, START_MARKER};

use crate::model::{DraftImage, FeedbackNote, Idea, IdeaSegment, ImageAsset, MemoryRecord, PromptCandidate, Purpose};

/// Rendered in place of an empty iteration history.
pub const EMPTY_HISTORY: &str = "(none)";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LmmMessagePart {
    Text(String),
    Image(ImageAsset),
}

/// A fully rendered, stateless request to a multimodal chat backend.
#[derive(Debug, Clone, PartialEq)]
pub struct LmmRequest {
    pub parts: Vec<LmmMessagePart>,
    pub purpose: Purpose,
    pub max_output_tokens: u32,
    pub temperature: f64,
}

impl LmmRequest {
    pub fn image_count(&self) -> usize {
        self.parts
            .iter()
            .filter(|p| matches!(p, LmmMessagePart::Image(_)))
            .count()
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageAsset> {
        self.parts.iter().filter_map(|p| match p {
            LmmMessagePart::Image(a) => Some(a),
            LmmMessagePart::Text(_) => None,
        })
    }

    /// Text content with each image replaced by `marker(asset)`.
    pub fn flatten_with(&self, marker: impl Fn(&ImageAsset) -> String) -> String {
        let mut out = String::new();
        for part in &self.parts {
            match part {
                LmmMessagePart::Text(t) => out.push_str(t),
                LmmMessagePart::Image(a) => out.push_str(&marker(a)),
            }
        }
        out
    }

    /// Text content with images shown as `[image:<digest prefix>]`.
    pub fn flatten(&self) -> String {
        self.flatten_with(|a| format!("[image:{}]", &a.digest()[..12]))
    }
}

/// Decoding defaults: sampling for prompt writing, greedy for judging.
pub fn decoding_defaults(purpose: Purpose) -> (f64, u32) {
    match purpose {
        Purpose::Gen | Purpose::Revise => (1.0, 1024),
        Purpose::Select => (0.0, 1024),
        Purpose::Feedback => (0.0, 512),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("no drafts to select from")]
    EmptyDrafts,
    #[error("{0}")]
    Precondition(String),
    #[error("template `{template}`: {reason}")]
    Malformed { template: &'static str, reason: String },
    #[error("reading template `{template}`: {reason}")]
    Io { template: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Idea,
    N,
    NMinusOne,
    Round,
    History,
    Images,
    Prompt,
    Image,
    Reflection,
}

impl Slot {
    const ALL: [Slot; 9] = [
        Slot::Idea,
        Slot::N,
        Slot::NMinusOne,
        Slot::Round,
        Slot::History,
        Slot::Images,
        Slot::Prompt,
        Slot::Image,
        Slot::Reflection,
    ];

    pub fn marker(self) -> &'static str {
        match self {
            Slot::Idea => "IDEA",
            Slot::N => "N",
            Slot::NMinusOne => "N-1",
            Slot::Round => "t",
            Slot::History => "history",
            Slot::Images => "images",
            Slot::Prompt => "prompt",
            Slot::Image => "image",
            Slot::Reflection => "reflection",
        }
    }

    fn from_marker(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.marker() == name)
    }

    /// Slots each template must contain, and may only contain.
    fn required(purpose: Purpose) -> &'static [Slot] {
        match purpose {
            Purpose::Gen => &[Slot::Idea, Slot::N],
            Purpose::Select => &[Slot::N, Slot::NMinusOne, Slot::Idea, Slot::Images],
            Purpose::Feedback => &[Slot::Idea, Slot::Round, Slot::History, Slot::Prompt, Slot::Image],
            Purpose::Revise => &[
                Slot::Idea,
                Slot::Round,
                Slot::History,
                Slot::Prompt,
                Slot::Image,
                Slot::Reflection,
                Slot::N,
            ],
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.marker())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Slot(Slot),
}

/// A parsed template: literal prose interleaved with slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    purpose: Purpose,
    source: String,
    pieces: Vec<Piece>,
}

fn template_name(purpose: Purpose) -> &'static str {
    match purpose {
        Purpose::Gen => "gen",
        Purpose::Select => "select",
        Purpose::Feedback => "feedback",
        Purpose::Revise => "revise",
    }
}

impl Template {
    pub fn parse(purpose: Purpose, source: &str) -> Result<Self, TemplateError> {
        let name = template_name(purpose);
        let malformed = |reason: String| TemplateError::Malformed { template: name, reason };
        // One trailing newline is file formatting, not prompt content.
        let source = source.strip_suffix('\n').unwrap_or(source);
        let source = source.strip_suffix('\r').unwrap_or(source);

        let mut pieces = Vec::new();
        let mut literal = String::new();
        let mut rest = source;
        while let Some(open) = rest.find('{') {
            literal.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let close = after
                .find('}')
                .ok_or_else(|| malformed(format!("unclosed `{{` at byte {}", source.len() - rest.len() + open)))?;
            let slot = Slot::from_marker(&after[..close])
                .ok_or_else(|| malformed(format!("unknown slot `{{{}}}`", &after[..close])))?;
            if !literal.is_empty() {
                pieces.push(Piece::Literal(std::mem::take(&mut literal)));
            }
            pieces.push(Piece::Slot(slot));
            rest = &after[close + 1..];
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            pieces.push(Piece::Literal(literal));
        }

        let required = Slot::required(purpose);
        for slot in required {
            if !pieces.contains(&Piece::Slot(*slot)) {
                return Err(malformed(format!("missing slot {slot}")));
            }
        }
        for piece in &pieces {
            if let Piece::Slot(slot) = piece {
                if !required.contains(slot) {
                    return Err(malformed(format!("slot {slot} is not available here")));
                }
            }
        }
        match pieces.first() {
            Some(Piece::Literal(_)) => {}
            _ => return Err(malformed("must open with instruction text".into())),
        }
        Ok(Self {
            purpose,
            source: source.to_owned(),
            pieces,
        })
    }

    pub fn purpose(&self) -> Purpose {
        self.purpose
    }

    /// The template text with slot markers, as loaded.
    pub fn source(&self) -> &str {
        &self.source
    }

    /// Renders with `fill` supplying the parts for each slot occurrence.
    pub fn render_with(&self, mut fill: impl FnMut(Slot, &mut PartsBuilder)) -> LmmRequest {
        let mut builder = PartsBuilder::default();
        for piece in &self.pieces {
            match piece {
                Piece::Literal(text) => builder.text(text),
                Piece::Slot(slot) => fill(*slot, &mut builder),
            }
        }
        let (temperature, max_output_tokens) = decoding_defaults(self.purpose);
        LmmRequest {
            parts: builder.finish(),
            purpose: self.purpose,
            max_output_tokens,
            temperature,
        }
    }
}

/// Accumulates message parts, merging adjacent text.
#[derive(Debug, Default)]
pub struct PartsBuilder {
    parts: Vec<LmmMessagePart>,
}

impl PartsBuilder {
    pub fn text(&mut self, text: &str) {
        if text.is_empty() {
            return;
        }
        if let Some(LmmMessagePart::Text(last)) = self.parts.last_mut() {
            last.push_str(text);
        } else {
            self.parts.push(LmmMessagePart::Text(text.to_owned()));
        }
    }

    pub fn image(&mut self, asset: &ImageAsset) {
        self.parts.push(LmmMessagePart::Image(asset.clone()));
    }

    fn finish(self) -> Vec<LmmMessagePart> {
        self.parts
    }
}

fn push_idea(b: &mut PartsBuilder, idea: &Idea) {
    for (i, segment) in idea.segments().iter().enumerate() {
        if i > 0 {
            b.text(" ");
        }
        match segment {
            IdeaSegment::Text(t) => b.text(t.trim()),
            IdeaSegment::Image(a) => b.image(a),
        }
    }
}

fn push_history(b: &mut PartsBuilder, memory: &[MemoryRecord]) {
    if memory.is_empty() {
        b.text(EMPTY_HISTORY);
        return;
    }
    for (k, record) in memory.iter().enumerate() {
        if k > 0 {
            b.text("\n\n");
        }
        let round = record.iteration() + 1;
        b.text(&format!("Round {round} prompt: {}\n", record.selected_prompt().text()));
        b.text(&format!("Round {round} image: "));
        b.image(&record.selected_image().image);
        b.text(&format!("\nRound {round} feedback: {}", record.feedback().text()));
    }
}

fn push_draft_list(b: &mut PartsBuilder, drafts: &[DraftImage]) {
    for (k, draft) in drafts.iter().enumerate() {
        if k > 0 {
            b.text("\n");
        }
        b.text(&format!("Image {k}: "));
        b.image(&draft.image);
    }
}

fn check_memory(memory: &[MemoryRecord], t: u32) -> Result<(), TemplateError> {
    for (k, record) in memory.iter().enumerate() {
        if record.iteration() != k as u32 || record.iteration() >= t {
            return Err(TemplateError::Precondition(format!(
                "memory record {k} has iteration {} (expected {k}, below {t})",
                record.iteration()
            )));
        }
    }
    Ok(())
}

/// The four templates used by a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    gen: Template,
    select: Template,
    feedback: Template,
    revise: Template,
}

const BUILTIN_GEN: &str = include_str!("../../templates/gen.txt");
const BUILTIN_SELECT: &str = include_str!("../../templates/select.txt");
const BUILTIN_FEEDBACK: &str = include_str!("../../templates/feedback.txt");
const BUILTIN_REVISE: &str = include_str!("../../templates/revise.txt");

impl TemplateSet {
    pub fn builtin() -> &'static TemplateSet {
        static SET: OnceLock<TemplateSet> = OnceLock::new();
        SET.get_or_init(|| {
            Self::from_sources(BUILTIN_GEN, BUILTIN_SELECT, BUILTIN_FEEDBACK, BUILTIN_REVISE)
                .expect("built-in templates are valid")
        })
    }

    pub fn from_sources(gen: &str, select: &str, feedback: &str, revise: &str) -> Result<Self, TemplateError> {
        Ok(Self {
            gen: Template::parse(Purpose::Gen, gen)?,
            select: Template::parse(Purpose::Select, select)?,
            feedback: Template::parse(Purpose::Feedback, feedback)?,
            revise: Template::parse(Purpose::Revise, revise)?,
        })
    }

    /// Loads `gen.txt`, `select.txt`, `feedback.txt` and `revise.txt` from
    /// `dir`; files that are absent keep the built-in text.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let builtin = Self::builtin();
        let mut set = builtin.clone();
        for purpose in [Purpose::Gen, Purpose::Select, Purpose::Feedback, Purpose::Revise] {
            let name = template_name(purpose);
            let path = dir.join(format!("{name}.txt"));
            match std::fs::read_to_string(&path) {
                Ok(text) => *set.get_mut(purpose) = Template::parse(purpose, &text)?,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => {
                    return Err(TemplateError::Io {
                        template: name,
                        reason: e.to_string(),
                    })
                }
            }
        }
        Ok(set)
    }

    pub fn get(&self, purpose: Purpose) -> &Template {
        match purpose {
            Purpose::Gen => &self.gen,
            Purpose::Select => &self.select,
            Purpose::Feedback => &self.feedback,
            Purpose::Revise => &self.revise,
        }
    }

    fn get_mut(&mut self, purpose: Purpose) -> &mut Template {
        match purpose {
            Purpose::Gen => &mut self.gen,
            Purpose::Select => &mut self.select,
            Purpose::Feedback => &mut self.feedback,
            Purpose::Revise => &mut self.revise,
        }
    }

    /// Initial prompt generation request.
    pub fn render_gen(&self, idea: &Idea, n: u32) -> Result<LmmRequest, TemplateError> {
        if n < 1 {
            return Err(TemplateError::Precondition("n must be at least 1".into()));
        }
        Ok(self.gen.render_with(|slot, b| match slot {
            Slot::Idea => push_idea(b, idea),
            Slot::N => b.text(&n.to_string()),
            _ => unreachable!("validated at parse time"),
        }))
    }

    /// Draft selection request; images follow the idea in draft order.
    pub fn render_select(&self, idea: &Idea, drafts: &[DraftImage]) -> Result<LmmRequest, TemplateError> {
        let first = drafts.first().ok_or(TemplateError::EmptyDrafts)?;
        if drafts.iter().any(|d| d.iteration != first.iteration) {
            return Err(TemplateError::Precondition("drafts span several iterations".into()));
        }
        let n = drafts.len();
        Ok(self.select.render_with(|slot, b| match slot {
            Slot::N => b.text(&n.to_string()),
            Slot::NMinusOne => b.text(&(n - 1).to_string()),
            Slot::Idea => push_idea(b, idea),
            Slot::Images => push_draft_list(b, drafts),
            _ => unreachable!("validated at parse time"),
        }))
    }

    /// Feedback request about the draft selected at iteration `t`.
    pub fn render_feedback(
        &self,
        idea: &Idea,
        selected: &DraftImage,
        selected_prompt: &PromptCandidate,
        memory: &[MemoryRecord],
        t: u32,
    ) -> Result<LmmRequest, TemplateError> {
        check_memory(memory, t)?;
        if selected.prompt_index != selected_prompt.index() {
            return Err(TemplateError::Precondition(format!(
                "selected draft came from prompt {}, not {}",
                selected.prompt_index,
                selected_prompt.index()
            )));
        }
        Ok(self.feedback.render_with(|slot, b| match slot {
            Slot::Idea => push_idea(b, idea),
            Slot::Round => b.text(&(t + 1).to_string()),
            Slot::History => push_history(b, memory),
            Slot::Prompt => b.text(selected_prompt.text()),
            Slot::Image => b.image(&selected.image),
            _ => unreachable!("validated at parse time"),
        }))
    }

    /// Revised prompt generation request following feedback at iteration `t`.
    #[allow(clippy::too_many_arguments)]
    pub fn render_revise(
        &self,
        idea: &Idea,
        memory: &[MemoryRecord],
        t: u32,
        current_prompt: &PromptCandidate,
        current_image: &DraftImage,
        reflection: &FeedbackNote,
        n: u32,
    ) -> Result<LmmRequest, TemplateError> {
        if n < 1 {
            return Err(TemplateError::Precondition("n must be at least 1".into()));
        }
        if reflection.iteration() != t {
            return Err(TemplateError::Precondition(format!(
                "reflection is from iteration {}, not {t}",
                reflection.iteration()
            )));
        }
        check_memory(memory, t)?;
        Ok(self.revise.render_with(|slot, b| match slot {
            Slot::Idea => push_idea(b, idea),
            Slot::Round => b.text(&(t + 1).to_string()),
            Slot::History => push_history(b, memory),
            Slot::Prompt => b.text(current_prompt.text()),
            Slot::Image => b.image(&current_image.image),
            Slot::Reflection => b.text(reflection.text()),
            Slot::N => b.text(&n.to_string()),
            _ => unreachable!("validated at parse time"),
        }))
    }
}

pub fn render_gen(idea: &Idea, n: u32) -> Result<LmmRequest, TemplateError> {
    TemplateSet::builtin().render_gen(idea, n)
}

pub fn render_select(idea: &Idea, drafts: &[DraftImage]) -> Result<LmmRequest, TemplateError> {
    TemplateSet::builtin().render_select(idea, drafts)
}

pub fn render_feedback(
    idea: &Idea,
    selected: &DraftImage,
    selected_prompt: &PromptCandidate,
    memory: &[MemoryRecord],
    t: u32,
) -> Result<LmmRequest, TemplateError> {
    TemplateSet::builtin().render_feedback(idea, selected, selected_prompt, memory, t)
}

#[allow(clippy::too_many_arguments)]
pub fn render_revise(
    idea: &Idea,
    memory: &[MemoryRecord],
    t: u32,
    current_prompt: &PromptCandidate,
    current_image: &DraftImage,
    reflection: &FeedbackNote,
    n: u32,
) -> Result<LmmRequest, TemplateError> {
    TemplateSet::builtin().render_revise(idea, memory, t, current_prompt, current_image, reflection, n)
}
