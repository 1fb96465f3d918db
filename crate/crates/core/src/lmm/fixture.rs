//! Record/replay of chat-completions exchanges as flat files.
//!
//! A fixture is a pair `NAME.request.json` / `NAME.response.json` holding the
//! exact request body sent and the raw response body received. Replay
//! rebuilds the request body from an [`LmmRequest`], looks up the matching
//! recorded request, and runs the recorded response through the same parser
//! as the live adapter.

use std::collections::HashMap;
use std::io;
use std::path::Path;

use serde_json::Value;

use super::{build_request_body, parse_response_body, LmmBackend, LmmError};
use crate::templates::LmmRequest;

const REQUEST_SUFFIX: &str = ".request.json";
const RESPONSE_SUFFIX: &str = ".response.json";

pub fn record_exchange(dir: &Path, name: &str, request: &Value, response: &str) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let request = serde_json::to_string_pretty(request).map_err(io::Error::other)?;
    std::fs::write(dir.join(format!("{name}{REQUEST_SUFFIX}")), request + "\n")?;
    std::fs::write(dir.join(format!("{name}{RESPONSE_SUFFIX}")), response)?;
    Ok(())
}

fn canonical(value: &Value) -> String {
    // serde_json maps are ordered by key, so this is a stable key.
    value.to_string()
}

#[derive(Debug)]
pub struct ReplayBackend {
    id: String,
    model: String,
    exchanges: HashMap<String, (String, String)>,
}

impl ReplayBackend {
    pub fn load(id: impl Into<String>, model: impl Into<String>, dir: &Path) -> io::Result<Self> {
        let mut exchanges = HashMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(file) = path.file_name().and_then(|f| f.to_str()) else {
                continue;
            };
            let Some(name) = file.strip_suffix(REQUEST_SUFFIX) else {
                continue;
            };
            let request: Value = serde_json::from_str(&std::fs::read_to_string(&path)?)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{file}: {e}")))?;
            let response = std::fs::read_to_string(dir.join(format!("{name}{RESPONSE_SUFFIX}")))?;
            exchanges.insert(canonical(&request), (name.to_owned(), response));
        }
        Ok(Self {
            id: id.into(),
            model: model.into(),
            exchanges,
        })
    }

    pub fn len(&self) -> usize {
        self.exchanges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exchanges.is_empty()
    }

    /// Name of the recorded exchange matching `request`, if any.
    pub fn matching(&self, request: &LmmRequest) -> Option<&str> {
        let key = canonical(&build_request_body(&self.model, request));
        self.exchanges.get(&key).map(|(name, _)| name.as_str())
    }
}

impl LmmBackend for ReplayBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &LmmRequest) -> Result<String, LmmError> {
        let key = canonical(&build_request_body(&self.model, request));
        let (_, response) = self
            .exchanges
            .get(&key)
            .ok_or_else(|| LmmError::Transport("no recorded exchange for this request".into()))?;
        parse_response_body(response)
    }
}
