use serde::{Deserialize, Serialize};

use super::{ImageAsset, ModelError};

/// Prompts longer than this are passed through with a warning.
pub const PROMPT_WORD_BUDGET: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdeaSegment {
    Text(String),
    Image(ImageAsset),
}

impl IdeaSegment {
    pub fn text(text: impl Into<String>) -> Self {
        IdeaSegment::Text(text.into())
    }

    pub fn image(asset: ImageAsset) -> Self {
        IdeaSegment::Image(asset)
    }
}

/// The user's multimodal request: interleaved text and reference images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Idea {
    segments: Vec<IdeaSegment>,
}

impl Idea {
    pub fn new(segments: Vec<IdeaSegment>) -> Result<Self, ModelError> {
        let mut has_text = false;
        for (position, segment) in segments.iter().enumerate() {
            if let IdeaSegment::Text(text) = segment {
                if text.trim().is_empty() {
                    return Err(ModelError::InvalidIdea(format!("text segment {position} is blank")));
                }
                has_text = true;
            }
        }
        if !has_text {
            return Err(ModelError::InvalidIdea(
                "an idea needs at least one text segment".into(),
            ));
        }
        Ok(Self { segments })
    }

    /// Shorthand for a text-only idea.
    pub fn from_text(text: impl Into<String>) -> Result<Self, ModelError> {
        Self::new(vec![IdeaSegment::Text(text.into())])
    }

    pub fn segments(&self) -> &[IdeaSegment] {
        &self.segments
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageAsset> {
        self.segments.iter().filter_map(|s| match s {
            IdeaSegment::Image(asset) => Some(asset),
            IdeaSegment::Text(_) => None,
        })
    }

    /// The image used to condition image-to-image generation.
    pub fn first_image(&self) -> Option<&ImageAsset> {
        self.images().next()
    }

    pub fn image_count(&self) -> usize {
        self.images().count()
    }

    /// Text segments joined by single spaces, images omitted.
    pub fn text_summary(&self) -> String {
        self.segments
            .iter()
            .filter_map(|s| match s {
                IdeaSegment::Text(t) => Some(t.trim()),
                IdeaSegment::Image(_) => None,
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// One text-to-image prompt drafted for an iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptCandidate {
    text: String,
    iteration: u32,
    index: u32,
}

impl PromptCandidate {
    pub fn new(text: impl Into<String>, iteration: u32, index: u32) -> Result<Self, ModelError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ModelError::EmptyPrompt);
        }
        let candidate = Self { text, iteration, index };
        let words = candidate.word_count();
        if words > PROMPT_WORD_BUDGET {
            tracing::warn!(iteration, index, words, "prompt exceeds the word budget");
        }
        Ok(candidate)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

/// A generated image together with where it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DraftImage {
    pub image: ImageAsset,
    pub prompt_index: u32,
    pub iteration: u32,
    pub seed: Option<u64>,
    pub backend_id: String,
    /// Set when generation was refused and a neutral stand-in was substituted.
    pub placeholder: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackNote {
    text: String,
    iteration: u32,
}

impl FeedbackNote {
    pub fn new(text: impl Into<String>, iteration: u32) -> Result<Self, ModelError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ModelError::EmptyFeedback);
        }
        Ok(Self { text, iteration })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }
}

/// One completed refinement round: the chosen prompt, its image, and the
/// critique written about it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryRecord {
    selected_prompt: PromptCandidate,
    selected_image: DraftImage,
    feedback: FeedbackNote,
}

impl MemoryRecord {
    pub fn new(
        selected_prompt: PromptCandidate,
        selected_image: DraftImage,
        feedback: FeedbackNote,
    ) -> Result<Self, ModelError> {
        let it = selected_prompt.iteration;
        if selected_image.iteration != it || feedback.iteration != it {
            return Err(ModelError::IterationMismatch(format!(
                "prompt {it}, image {}, feedback {}",
                selected_image.iteration, feedback.iteration
            )));
        }
        if selected_image.prompt_index != selected_prompt.index {
            return Err(ModelError::IterationMismatch(format!(
                "image came from prompt {} but prompt {} was recorded",
                selected_image.prompt_index, selected_prompt.index
            )));
        }
        Ok(Self {
            selected_prompt,
            selected_image,
            feedback,
        })
    }

    pub fn iteration(&self) -> u32 {
        self.selected_prompt.iteration
    }

    pub fn selected_prompt(&self) -> &PromptCandidate {
        &self.selected_prompt
    }

    pub fn selected_image(&self) -> &DraftImage {
        &self.selected_image
    }

    pub fn feedback(&self) -> &FeedbackNote {
        &self.feedback
    }
}
