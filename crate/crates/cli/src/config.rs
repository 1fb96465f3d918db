//! The TOML config file: run parameters, backend descriptors, and an
//! optional template directory. Unknown keys are rejected everywhere so a
//! typo never silently falls back to a default.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use idearefine_core::imagegen::{HttpGenerator, MockGenerator};
use idearefine_core::lmm::{MockLmm, MockReply, OpenAiChatBackend, ReplayBackend};
use idearefine_core::{
    Engine, GenGateway, GeneratorDescriptor, GeneratorKind, ImageGenerator, LmmBackend, LmmBackendDescriptor,
    LmmGateway, RetryPolicy, RunConfig, Store, TemplateSet,
};
use serde::{Deserialize, Serialize};

use crate::exit::{CliError, CliResult, Code};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    /// Directory holding `p_gen.txt`, `p_select.txt`, `p_feedback.txt` and
    /// `p_revise.txt`; the built-in templates are used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_dir: Option<PathBuf>,
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retry: Option<RetrySection>,
    #[serde(default)]
    pub lmm: Vec<LmmEntry>,
    #[serde(default)]
    pub generator: Vec<GeneratorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrySection {
    pub base_secs: f64,
    pub cap_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LmmEntry {
    /// Offline backend. Scripted replies are used first, then (when `auto`
    /// is set) well-formed generated answers.
    Mock {
        id: String,
        #[serde(default)]
        script: Vec<String>,
        #[serde(default = "yes")]
        auto: bool,
    },
    /// Any server speaking the OpenAI chat-completions protocol.
    OpenaiChat {
        id: String,
        endpoint: String,
        model_name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        auth_env_var: Option<String>,
        timeout_secs: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        record_dir: Option<PathBuf>,
    },
    /// Answers from recorded exchanges only.
    Replay {
        id: String,
        model_name: String,
        dir: PathBuf,
    },
}

fn yes() -> bool {
    true
}

impl LmmEntry {
    pub fn id(&self) -> &str {
        match self {
            LmmEntry::Mock { id, .. } | LmmEntry::OpenaiChat { id, .. } | LmmEntry::Replay { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorEntry {
    pub id: String,
    pub kind: GeneratorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub supports_img2img: bool,
    #[serde(default = "default_gen_timeout")]
    pub timeout_secs: f64,
    /// Square output size; defaults per generator kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
    /// Mock only: refuse prompts containing any of these substrings.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refuse: Vec<String>,
}

fn default_gen_timeout() -> f64 {
    300.0
}

fn duration(field: &str, id: &str, secs: f64) -> CliResult<Duration> {
    match Duration::try_from_secs_f64(secs) {
        Ok(d) if !d.is_zero() => Ok(d),
        _ => Err(CliError::config(format!(
            "{field} of `{id}` must be a positive number of seconds"
        ))),
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_owned()
    } else {
        base.join(path)
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))
    }

    /// Reads and validates `path`; relative paths inside the file are made
    /// absolute against the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::parse(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = std::path::absolute(base).unwrap_or_else(|_| base.to_owned());
        config.absolutize(&base);
        Ok(config)
    }

    fn absolutize(&mut self, base: &Path) {
        if let Some(dir) = &mut self.template_dir {
            *dir = resolve(base, dir);
        }
        for entry in &mut self.lmm {
            match entry {
                LmmEntry::OpenaiChat {
                    record_dir: Some(dir), ..
                }
                | LmmEntry::Replay { dir, .. } => {
                    *dir = resolve(base, dir);
                }
                _ => {}
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult {
        self.run
            .validate()
            .map_err(|e| CliError::config(format!("[run]: {e}")))?;
        let mut seen = BTreeSet::new();
        for entry in &self.lmm {
            if !seen.insert(entry.id()) {
                return Err(CliError::config(format!("duplicate lmm id `{}`", entry.id())));
            }
        }
        let mut seen = BTreeSet::new();
        for entry in &self.generator {
            if !seen.insert(entry.id.as_str()) {
                return Err(CliError::config(format!("duplicate generator id `{}`", entry.id)));
            }
            if entry.resolution == Some(0) {
                return Err(CliError::config(format!(
                    "resolution of `{}` must be positive",
                    entry.id
                )));
            }
        }
        self.lmm_entry()?;
        self.generator_entry()?;
        if let Some(retry) = &self.retry {
            if !(retry.base_secs >= 0.0 && retry.cap_secs >= retry.base_secs) {
                return Err(CliError::config("[retry]: need 0 <= base_secs <= cap_secs"));
            }
        }
        Ok(())
    }

    fn lmm_entry(&self) -> CliResult<&LmmEntry> {
        let id = &self.run.lmm_backend;
        self.lmm
            .iter()
            .find(|e| e.id() == id)
            .ok_or_else(|| CliError::config(format!("run.lmm_backend: no [[lmm]] entry with id `{id}`")))
    }

    fn generator_entry(&self) -> CliResult<&GeneratorEntry> {
        let id = &self.run.generator_backend;
        self.generator
            .iter()
            .find(|e| &e.id == id)
            .ok_or_else(|| CliError::config(format!("run.generator_backend: no [[generator]] entry with id `{id}`")))
    }

    fn retry_policy(&self) -> CliResult<RetryPolicy> {
        let Some(retry) = &self.retry else {
            return Ok(RetryPolicy::default());
        };
        let secs = |s: f64| Duration::try_from_secs_f64(s).map_err(|e| CliError::config(format!("[retry]: {e}")));
        Ok(RetryPolicy {
            base: secs(retry.base_secs)?,
            cap: secs(retry.cap_secs)?,
        })
    }

    fn lmm_backend(&self) -> CliResult<Arc<dyn LmmBackend>> {
        Ok(match self.lmm_entry()? {
            LmmEntry::Mock { id, script, auto } => {
                let replies = script.iter().cloned().map(MockReply::Text).collect();
                let mock = MockLmm::scripted(id.clone(), replies);
                Arc::new(if *auto {
                    mock.with_auto(self.run.n_candidates)
                } else {
                    mock
                })
            }
            LmmEntry::OpenaiChat {
                id,
                endpoint,
                model_name,
                auth_env_var,
                timeout_secs,
                record_dir,
            } => {
                let descriptor = LmmBackendDescriptor {
                    id: id.clone(),
                    endpoint: endpoint.clone(),
                    model_name: model_name.clone(),
                    auth_env_var: auth_env_var.clone(),
                    timeout: duration("timeout_secs", id, *timeout_secs)?,
                };
                let backend = OpenAiChatBackend::from_env(descriptor)
                    .map_err(|e| CliError::new(Code::Backend, format!("lmm `{id}`: {e}")))?;
                Arc::new(match record_dir {
                    Some(dir) => backend.recording_to(dir.clone()),
                    None => backend,
                })
            }
            LmmEntry::Replay { id, model_name, dir } => {
                let backend = ReplayBackend::load(id.clone(), model_name.clone(), dir)
                    .map_err(|e| CliError::config(format!("lmm `{id}`: {}: {e}", dir.display())))?;
                Arc::new(backend)
            }
        })
    }

    fn generator(&self) -> CliResult<(Arc<dyn ImageGenerator>, &GeneratorEntry)> {
        let entry = self.generator_entry()?;
        let descriptor = GeneratorDescriptor {
            id: entry.id.clone(),
            kind: entry.kind,
            endpoint: entry.endpoint.clone(),
            supports_img2img: entry.supports_img2img,
        };
        descriptor.validate().map_err(CliError::config)?;
        let generator: Arc<dyn ImageGenerator> = match entry.kind {
            GeneratorKind::Mock => {
                let mock = entry
                    .refuse
                    .iter()
                    .fold(MockGenerator::with_descriptor(descriptor), |m, p| m.refusing(p.clone()));
                Arc::new(mock)
            }
            GeneratorKind::RemoteHttp | GeneratorKind::LocalSidecar => {
                if !entry.refuse.is_empty() {
                    return Err(CliError::config(format!(
                        "generator `{}`: `refuse` is mock-only",
                        entry.id
                    )));
                }
                let timeout = duration("timeout_secs", &entry.id, entry.timeout_secs)?;
                let client = HttpGenerator::new(descriptor, timeout)
                    .map_err(|e| CliError::new(Code::Backend, format!("generator `{}`: {e}", entry.id)))?;
                Arc::new(client)
            }
        };
        Ok((generator, entry))
    }

    /// Builds an engine persisting into `store`.
    pub fn engine(&self, store: Store) -> CliResult<Engine> {
        self.validate()?;
        let lmm = LmmGateway::new(self.lmm_backend()?).with_retry_policy(self.retry_policy()?);
        let (generator, entry) = self.generator()?;
        let mut gen = GenGateway::new(generator);
        if let Some(cap) = entry.max_in_flight {
            gen = gen.with_max_in_flight(cap.max(1));
        }
        let mut engine = Engine::new(lmm, gen).with_store(store);
        if let Some(size) = entry.resolution {
            engine = engine.with_resolution(size);
        }
        if let Some(dir) = &self.template_dir {
            let set = TemplateSet::from_dir(dir)
                .map_err(|e| CliError::config(format!("template_dir {}: {e}", dir.display())))?;
            engine = engine.with_templates(set);
        }
        Ok(engine)
    }
}
