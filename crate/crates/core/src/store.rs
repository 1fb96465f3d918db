//! Crash-safe persistence of trajectories.
//!
//! Layout under a root directory:
//!
//! ```text
//! runs/{run_id}/manifest.json        run state, written temp-then-rename
//! runs/{run_id}/assets/{digest}.png  content-addressed images (.jpg for JPEG)
//! runs/{run_id}/.lock                advisory writer lock
//! ```
//!
//! The manifest references images only by digest. Loading re-hashes every
//! referenced asset and fails on any mismatch.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SubsecRound, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{
    digest_hex, DraftImage, Failure, FeedbackNote, Idea, IdeaSegment, ImageAsset, IterationRecord, LmmCallRecord,
    MediaType, MemoryRecord, PromptCandidate, RunConfig, RunState, RunStatus, HASH_ALGORITHM,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".lock";

/// Manifest fields that legitimately differ between otherwise identical runs.
pub const VOLATILE_FIELDS: [&str; 3] = ["run_id", "created_at", "updated_at"];

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("asset {digest}: {reason}")]
    Integrity { digest: String, reason: String },
    #[error("no run `{0}`")]
    MissingRun(String),
    #[error("manifest schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u64, expected: u32 },
    #[error("corrupt manifest: {0}")]
    Corrupt(String),
    #[error("run `{0}` is locked by another writer")]
    Locked(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifestSegment {
    Text { text: String },
    Image { digest: String, media_type: MediaType },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestPrompt {
    pub index: u32,
    pub text: String,
    pub word_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDraft {
    pub prompt_index: u32,
    pub digest: String,
    pub seed: Option<u64>,
    pub backend_id: String,
    pub placeholder: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestIteration {
    pub iteration: u32,
    pub prompts: Vec<ManifestPrompt>,
    pub drafts: Vec<ManifestDraft>,
    pub selection_index: Option<u32>,
    pub degraded_selection: bool,
    pub feedback: Option<String>,
    pub lmm_calls: Vec<LmmCallRecord>,
}

impl ManifestIteration {
    pub fn draft_digests(&self) -> impl Iterator<Item = &str> {
        self.drafts.iter().map(|d| d.digest.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestMemory {
    pub iteration: u32,
    pub prompt_index: u32,
    pub prompt: String,
    pub image_digest: String,
    pub feedback: String,
}

/// On-disk form of a [`RunState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    pub hash_algorithm: String,
    pub run_id: String,
    pub status: RunStatus,
    pub t: u32,
    pub failure: Option<Failure>,
    pub idea: Vec<ManifestSegment>,
    pub config: RunConfig,
    pub iterations: Vec<ManifestIteration>,
    pub memory: Vec<ManifestMemory>,
    pub final_image_digest: Option<String>,
    pub component_versions: BTreeMap<String, String>,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

impl RunManifest {
    pub fn from_state(state: &RunState, updated_at: DateTime<Utc>) -> Self {
        let idea = state
            .idea()
            .segments()
            .iter()
            .map(|s| match s {
                IdeaSegment::Text(text) => ManifestSegment::Text { text: text.clone() },
                IdeaSegment::Image(a) => ManifestSegment::Image {
                    digest: a.digest().to_owned(),
                    media_type: a.media_type(),
                },
            })
            .collect();
        let iterations = state
            .iterations()
            .iter()
            .map(|r| ManifestIteration {
                iteration: r.iteration,
                prompts: r
                    .prompts
                    .iter()
                    .map(|p| ManifestPrompt {
                        index: p.index(),
                        text: p.text().to_owned(),
                        word_count: p.word_count(),
                    })
                    .collect(),
                drafts: r
                    .drafts
                    .iter()
                    .map(|d| ManifestDraft {
                        prompt_index: d.prompt_index,
                        digest: d.image.digest().to_owned(),
                        seed: d.seed,
                        backend_id: d.backend_id.clone(),
                        placeholder: d.placeholder,
                    })
                    .collect(),
                selection_index: r.selection,
                degraded_selection: r.degraded_selection,
                feedback: r.feedback.as_ref().map(|f| f.text().to_owned()),
                lmm_calls: r.lmm_calls.clone(),
            })
            .collect();
        let memory = state
            .memory()
            .iter()
            .map(|m| ManifestMemory {
                iteration: m.iteration(),
                prompt_index: m.selected_prompt().index(),
                prompt: m.selected_prompt().text().to_owned(),
                image_digest: m.selected_image().image.digest().to_owned(),
                feedback: m.feedback().text().to_owned(),
            })
            .collect();
        let mut component_versions = BTreeMap::new();
        component_versions.insert("idearefine-core".to_owned(), env!("CARGO_PKG_VERSION").to_owned());
        Self {
            schema_version: SCHEMA_VERSION,
            hash_algorithm: HASH_ALGORITHM.to_owned(),
            run_id: state.run_id().to_owned(),
            status: state.status(),
            t: state.t(),
            failure: state.failure().cloned(),
            idea,
            config: state.config().clone(),
            iterations,
            memory,
            final_image_digest: state.final_image().map(|d| d.image.digest().to_owned()),
            component_versions,
            created_at: state.created_at(),
            updated_at,
        }
    }

    /// Every asset digest the manifest references, with its media type.
    pub fn referenced_assets(&self) -> Vec<(String, MediaType)> {
        let mut seen = Vec::new();
        let mut push = |digest: &str, media: MediaType| {
            if !seen.iter().any(|(d, _): &(String, MediaType)| d == digest) {
                seen.push((digest.to_owned(), media));
            }
        };
        for s in &self.idea {
            if let ManifestSegment::Image { digest, media_type } = s {
                push(digest, *media_type);
            }
        }
        for it in &self.iterations {
            for d in &it.drafts {
                push(&d.digest, MediaType::Png);
            }
        }
        seen
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }
}

/// The manifest as JSON with [`VOLATILE_FIELDS`] removed, for comparing runs.
pub fn stable_manifest_value(json: &str) -> Result<Value, StoreError> {
    let mut value: Value = serde_json::from_str(json).map_err(|e| StoreError::Corrupt(e.to_string()))?;
    if let Some(map) = value.as_object_mut() {
        for field in VOLATILE_FIELDS {
            map.remove(field);
        }
    }
    Ok(value)
}

/// Holds the advisory writer lock of one run directory until dropped.
#[derive(Debug)]
pub struct RunLock {
    _file: File,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id)
    }

    pub fn manifest_path(&self, run_id: &str) -> PathBuf {
        self.run_dir(run_id).join(MANIFEST_FILE)
    }

    pub fn asset_path(&self, run_id: &str, digest: &str, media: MediaType) -> PathBuf {
        self.run_dir(run_id)
            .join("assets")
            .join(format!("{digest}.{}", media.extension()))
    }

    pub fn exists(&self, run_id: &str) -> bool {
        self.manifest_path(run_id).is_file()
    }

    /// Run ids with a manifest, sorted.
    pub fn list_runs(&self) -> Result<Vec<String>, StoreError> {
        let dir = self.root.join("runs");
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&dir)(e)),
        };
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry.map_err(io_err(&dir))?;
            if let Some(id) = entry.file_name().to_str() {
                if self.exists(id) {
                    ids.push(id.to_owned());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Searches every run for a stored asset with `digest`.
    pub fn find_asset(&self, digest: &str) -> Result<Option<PathBuf>, StoreError> {
        for run in self.list_runs()? {
            for media in [MediaType::Png, MediaType::Jpeg] {
                let path = self.asset_path(&run, digest, media);
                if path.is_file() {
                    return Ok(Some(path));
                }
            }
        }
        Ok(None)
    }

    /// Takes the writer lock for `run_id`, failing fast if it is held.
    pub fn lock(&self, run_id: &str) -> Result<RunLock, StoreError> {
        let dir = self.run_dir(run_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(LOCK_FILE);
        let file = File::options()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io_err(&path))?;
        match file.try_lock() {
            Ok(()) => Ok(RunLock { _file: file }),
            Err(fs::TryLockError::WouldBlock) => Err(StoreError::Locked(run_id.to_owned())),
            Err(fs::TryLockError::Error(e)) => Err(io_err(&path)(e)),
        }
    }

    pub fn persist(&self, state: &RunState) -> Result<(), StoreError> {
        let manifest = RunManifest::from_state(state, Utc::now().trunc_subsecs(3));
        let run_id = state.run_id();
        let assets_dir = self.run_dir(run_id).join("assets");
        fs::create_dir_all(&assets_dir).map_err(io_err(&assets_dir))?;

        let mut written: HashMap<&str, ()> = HashMap::new();
        for asset in state_assets(state) {
            if written.insert(asset.digest(), ()).is_some() {
                continue;
            }
            let path = self.asset_path(run_id, asset.digest(), asset.media_type());
            match fs::read(&path) {
                Ok(existing) => {
                    if digest_hex(&existing) != asset.digest() {
                        return Err(StoreError::Integrity {
                            digest: asset.digest().to_owned(),
                            reason: format!("stored file {} does not match its name", path.display()),
                        });
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::NotFound => {
                    write_atomic(&path, asset.bytes())?;
                }
                Err(e) => return Err(io_err(&path)(e)),
            }
        }
        write_atomic(&self.manifest_path(run_id), manifest.to_json().as_bytes())
    }

    pub fn read_manifest(&self, run_id: &str) -> Result<RunManifest, StoreError> {
        let path = self.manifest_path(run_id);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::MissingRun(run_id.to_owned())),
            Err(e) => return Err(io_err(&path)(e)),
        };
        parse_manifest(&text)
    }

    /// Raw manifest text, as written.
    pub fn read_manifest_text(&self, run_id: &str) -> Result<String, StoreError> {
        let path = self.manifest_path(run_id);
        fs::read_to_string(&path).map_err(|e| {
            if e.kind() == io::ErrorKind::NotFound {
                StoreError::MissingRun(run_id.to_owned())
            } else {
                io_err(&path)(e)
            }
        })
    }

    pub fn load(&self, run_id: &str) -> Result<RunState, StoreError> {
        let manifest = self.read_manifest(run_id)?;
        if manifest.run_id != run_id {
            return Err(StoreError::Corrupt(format!(
                "manifest in `{run_id}` names run `{}`",
                manifest.run_id
            )));
        }
        let mut assets = HashMap::new();
        for (digest, media) in manifest.referenced_assets() {
            let path = self.asset_path(run_id, &digest, media);
            let bytes = fs::read(&path).map_err(|e| StoreError::Integrity {
                digest: digest.clone(),
                reason: format!("cannot read {}: {e}", path.display()),
            })?;
            let asset = ImageAsset::from_stored(bytes, media, &digest).map_err(|e| StoreError::Integrity {
                digest: digest.clone(),
                reason: e.to_string(),
            })?;
            assets.insert(digest, asset);
        }
        state_from_manifest(manifest, &assets)
    }
}

pub fn persist(state: &RunState, root: &Path) -> Result<(), StoreError> {
    Store::new(root).persist(state)
}

pub fn load(root: &Path, run_id: &str) -> Result<RunState, StoreError> {
    Store::new(root).load(run_id)
}

fn state_assets(state: &RunState) -> impl Iterator<Item = &ImageAsset> {
    state.idea().images().chain(
        state
            .iterations()
            .iter()
            .flat_map(|r| r.drafts.iter().map(|d| &d.image)),
    )
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut file = File::create(&tmp).map_err(io_err(&tmp))?;
    file.write_all(bytes).map_err(io_err(&tmp))?;
    file.sync_all().map_err(io_err(&tmp))?;
    drop(file);
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn parse_manifest(text: &str) -> Result<RunManifest, StoreError> {
    let value: Value = serde_json::from_str(text).map_err(|e| StoreError::Corrupt(e.to_string()))?;
    let found = value
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| StoreError::Corrupt("schema_version missing".into()))?;
    if found != u64::from(SCHEMA_VERSION) {
        return Err(StoreError::VersionMismatch {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    let manifest: RunManifest = serde_json::from_value(value).map_err(|e| StoreError::Corrupt(e.to_string()))?;
    if manifest.hash_algorithm != HASH_ALGORITHM {
        return Err(StoreError::Corrupt(format!(
            "hash algorithm `{}` is not {HASH_ALGORITHM}",
            manifest.hash_algorithm
        )));
    }
    Ok(manifest)
}

fn state_from_manifest(m: RunManifest, assets: &HashMap<String, ImageAsset>) -> Result<RunState, StoreError> {
    let corrupt = |msg: String| StoreError::Corrupt(msg);
    let asset = |digest: &str| {
        assets
            .get(digest)
            .cloned()
            .ok_or_else(|| corrupt(format!("asset {digest} not loaded")))
    };

    let segments = m
        .idea
        .iter()
        .map(|s| match s {
            ManifestSegment::Text { text } => Ok(IdeaSegment::Text(text.clone())),
            ManifestSegment::Image { digest, .. } => asset(digest).map(IdeaSegment::Image),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let idea = Idea::new(segments).map_err(|e| corrupt(e.to_string()))?;
    m.config.validate().map_err(|e| corrupt(e.to_string()))?;

    let mut iterations = Vec::with_capacity(m.iterations.len());
    for (k, it) in m.iterations.iter().enumerate() {
        if it.iteration != k as u32 {
            return Err(corrupt(format!("iteration entries are not dense at position {k}")));
        }
        let prompts = it
            .prompts
            .iter()
            .map(|p| PromptCandidate::new(p.text.clone(), it.iteration, p.index))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| corrupt(e.to_string()))?;
        let drafts = it
            .drafts
            .iter()
            .map(|d| {
                Ok(DraftImage {
                    image: asset(&d.digest)?,
                    prompt_index: d.prompt_index,
                    iteration: it.iteration,
                    seed: d.seed,
                    backend_id: d.backend_id.clone(),
                    placeholder: d.placeholder,
                })
            })
            .collect::<Result<Vec<_>, StoreError>>()?;
        let feedback = it
            .feedback
            .as_ref()
            .map(|f| FeedbackNote::new(f.clone(), it.iteration))
            .transpose()
            .map_err(|e| corrupt(e.to_string()))?;
        iterations.push(IterationRecord {
            iteration: it.iteration,
            prompts,
            drafts,
            selection: it.selection_index,
            degraded_selection: it.degraded_selection,
            feedback,
            lmm_calls: it.lmm_calls.clone(),
        });
    }

    let mut memory = Vec::with_capacity(m.memory.len());
    for (k, entry) in m.memory.iter().enumerate() {
        let record = iterations
            .get(entry.iteration as usize)
            .filter(|_| entry.iteration == k as u32)
            .ok_or_else(|| corrupt(format!("memory entry {k} has no matching iteration")))?;
        let index = record
            .selection
            .filter(|&s| s == entry.prompt_index)
            .ok_or_else(|| corrupt(format!("memory entry {k} disagrees with the selection")))?
            as usize;
        let (prompt, draft) = record
            .prompts
            .get(index)
            .zip(record.drafts.get(index))
            .ok_or_else(|| corrupt(format!("memory entry {k} points past the drafts")))?;
        let feedback = record
            .feedback
            .clone()
            .ok_or_else(|| corrupt(format!("memory entry {k} has no feedback on its iteration")))?;
        if prompt.text() != entry.prompt
            || draft.image.digest() != entry.image_digest
            || feedback.text() != entry.feedback
        {
            return Err(corrupt(format!("memory entry {k} disagrees with iteration {k}")));
        }
        memory.push(MemoryRecord::new(prompt.clone(), draft.clone(), feedback).map_err(|e| corrupt(e.to_string()))?);
    }

    let final_image = match &m.final_image_digest {
        Some(digest) => {
            let draft = iterations
                .get(m.t as usize)
                .and_then(|r| r.selection.and_then(|s| r.drafts.get(s as usize)))
                .filter(|d| d.image.digest() == digest)
                .cloned()
                .ok_or_else(|| corrupt("final image does not match the last selection".into()))?;
            Some(draft)
        }
        None => None,
    };
    if m.status == RunStatus::Finished && final_image.is_none() {
        return Err(corrupt("finished run without a final image".into()));
    }

    Ok(RunState {
        run_id: m.run_id,
        created_at: m.created_at,
        idea,
        config: m.config,
        t: m.t,
        memory,
        iterations,
        status: m.status,
        final_image,
        failure: m.failure,
    })
}
