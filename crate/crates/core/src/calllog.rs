//! Shared, ordered record of backend calls made by the mock backends.

use std::fmt;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CallKind {
    GenPrompts,
    Generate,
    Select,
    Feedback,
    Revise,
}

impl fmt::Display for CallKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CallKind::GenPrompts => "gen_prompts",
            CallKind::Generate => "generate",
            CallKind::Select => "select",
            CallKind::Feedback => "feedback",
            CallKind::Revise => "revise",
        })
    }
}

/// Cloneable handle; clones append to the same log.
#[derive(Debug, Clone, Default)]
pub struct CallLog(Arc<Mutex<Vec<CallKind>>>);

impl CallLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, kind: CallKind) {
        self.0.lock().expect("call log poisoned").push(kind);
    }

    pub fn snapshot(&self) -> Vec<CallKind> {
        self.0.lock().expect("call log poisoned").clone()
    }

    pub fn clear(&self) {
        self.0.lock().expect("call log poisoned").clear();
    }
}
