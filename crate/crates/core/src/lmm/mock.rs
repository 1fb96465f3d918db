use std::collections::VecDeque;
use std::sync::Mutex;

use super::{LmmBackend, LmmError};
use crate::calllog::{CallKind, CallLog};
use crate::model::{digest_hex, Purpose};
use crate::templates::{LmmRequest, END_MARKER, START_MARKER};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockReply {
    Text(String),
    Fail(LmmError),
}

impl MockReply {
    pub fn text(text: impl Into<String>) -> Self {
        MockReply::Text(text.into())
    }
}

const CRITIQUES: [&str; 4] = [
    "the main subject is too small; describe it as filling the frame",
    "the lighting is flat; ask for warm directional light",
    "the background is cluttered; describe a plain backdrop",
    "the style drifts from the idea; name the medium explicitly",
];

/// Scripted backend: replays queued replies in order and records every
/// request it receives.
///
/// When the script runs out, an auto-responder (if enabled) produces
/// well-formed answers for each purpose; otherwise the call fails with
/// [`LmmError::ScriptExhausted`].
#[derive(Debug)]
pub struct MockLmm {
    id: String,
    script: Mutex<VecDeque<MockReply>>,
    requests: Mutex<Vec<LmmRequest>>,
    log: Option<CallLog>,
    auto_candidates: Option<u32>,
}

impl MockLmm {
    pub fn scripted(id: impl Into<String>, replies: Vec<MockReply>) -> Self {
        Self {
            id: id.into(),
            script: Mutex::new(replies.into()),
            requests: Mutex::new(Vec::new()),
            log: None,
            auto_candidates: None,
        }
    }

    pub fn from_texts<I, S>(id: impl Into<String>, texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::scripted(id, texts.into_iter().map(|t| MockReply::Text(t.into())).collect())
    }

    /// Answers every request with deterministic well-formed output once the
    /// script (possibly empty) is used up.
    pub fn auto(id: impl Into<String>, n_candidates: u32) -> Self {
        let mut mock = Self::scripted(id, Vec::new());
        mock.auto_candidates = Some(n_candidates.max(1));
        mock
    }

    pub fn with_auto(mut self, n_candidates: u32) -> Self {
        self.auto_candidates = Some(n_candidates.max(1));
        self
    }

    pub fn with_call_log(mut self, log: CallLog) -> Self {
        self.log = Some(log);
        self
    }

    pub fn push(&self, reply: MockReply) {
        self.script.lock().expect("mock poisoned").push_back(reply);
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().expect("mock poisoned").len()
    }

    /// Every request received so far, in arrival order.
    pub fn requests(&self) -> Vec<LmmRequest> {
        self.requests.lock().expect("mock poisoned").clone()
    }

    fn auto_reply(&self, n: u32, request: &LmmRequest) -> String {
        let text = request.flatten();
        let fingerprint = digest_hex(text.as_bytes());
        let salt = u64::from_str_radix(&fingerprint[..8], 16).unwrap_or(0);
        match request.purpose {
            Purpose::Gen | Purpose::Revise => {
                let subject = idea_excerpt(&text).unwrap_or("the imagined scene");
                let round = if request.purpose == Purpose::Gen {
                    0
                } else {
                    salt % 97 + 1
                };
                (0..n)
                    .map(|k| {
                        format!("{START_MARKER}{subject}, rendition {k}, revision {round}, soft light{END_MARKER}")
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            }
            Purpose::Select => {
                let choice = request
                    .images()
                    .skip(request.image_count().saturating_sub(n as usize))
                    .enumerate()
                    .min_by(|a, b| a.1.digest().cmp(b.1.digest()))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                format!("Scores assigned. {START_MARKER}{choice}{END_MARKER}")
            }
            Purpose::Feedback => {
                let critique = CRITIQUES[(salt % CRITIQUES.len() as u64) as usize];
                format!("{START_MARKER}{critique}{END_MARKER}")
            }
        }
    }
}

fn idea_excerpt(text: &str) -> Option<&str> {
    let start = text.find("IDEA: ")? + "IDEA: ".len();
    let end = text[start..].find("\n\nEnd of IDEA")? + start;
    let excerpt = text[start..end].trim_end_matches('.').trim();
    (!excerpt.is_empty()).then_some(excerpt)
}

impl LmmBackend for MockLmm {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &LmmRequest) -> Result<String, LmmError> {
        self.requests.lock().expect("mock poisoned").push(request.clone());
        if let Some(log) = &self.log {
            log.push(match request.purpose {
                Purpose::Gen => CallKind::GenPrompts,
                Purpose::Select => CallKind::Select,
                Purpose::Feedback => CallKind::Feedback,
                Purpose::Revise => CallKind::Revise,
            });
        }
        let next = self.script.lock().expect("mock poisoned").pop_front();
        match (next, self.auto_candidates) {
            (Some(MockReply::Text(text)), _) => Ok(text),
            (Some(MockReply::Fail(e)), _) => Err(e),
            (None, Some(n)) => Ok(self.auto_reply(n, request)),
            (None, None) => Err(LmmError::ScriptExhausted),
        }
    }
}
