//! `run`, `resume` and `inspect`.

use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use idearefine_core::store::RunManifest;
use idearefine_core::{new_run, Engine, Event, RunState, RunStatus, SeedPolicy, Store};

use crate::config::ConfigFile;
use crate::exit::{CliError, CliResult, Code};
use crate::idea_file;

/// Copy of the effective config kept beside each manifest so `resume` can
/// rebuild the same backends.
pub const SAVED_CONFIG: &str = "cli-config.toml";

#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub lmm: Option<String>,
    pub generator: Option<String>,
    pub n_candidates: Option<u32>,
    pub max_iterations: Option<u32>,
}

impl Overrides {
    fn apply(&self, config: &mut ConfigFile) {
        if let Some(seed) = self.seed {
            config.run.seed_policy = SeedPolicy::Fixed(seed);
        }
        if let Some(id) = &self.lmm {
            config.run.lmm_backend = id.clone();
        }
        if let Some(id) = &self.generator {
            config.run.generator_backend = id.clone();
        }
        if let Some(n) = self.n_candidates {
            config.run.n_candidates = n;
        }
        if let Some(t) = self.max_iterations {
            config.run.max_iterations = t;
        }
    }
}

fn saved_config_path(store: &Store, run_id: &str) -> PathBuf {
    store.run_dir(run_id).join(SAVED_CONFIG)
}

/// Drives `state`, stopping early after `halt_after` step boundaries.
fn drive(engine: &Engine, store: &Store, state: RunState, halt_after: Option<u32>) -> CliResult {
    let mut steps = 0u32;
    let state = engine.drive(state, |_| {
        steps += 1;
        match halt_after {
            Some(limit) if steps >= limit => ControlFlow::Break(()),
            _ => ControlFlow::Continue(()),
        }
    })?;
    println!("status: {}", state.status());
    match state.final_image() {
        Some(image) if state.status() == RunStatus::Finished => {
            let path = store.asset_path(state.run_id(), image.image.digest(), image.image.media_type());
            println!("final_image: {}", path.display());
        }
        _ => println!("halted after {steps} steps; continue with `resume`"),
    }
    Ok(())
}

pub fn run(
    config_path: &Path,
    idea_path: &Path,
    out: &Path,
    overrides: &Overrides,
    halt_after: Option<u32>,
) -> CliResult {
    let mut config = ConfigFile::load(config_path)?;
    overrides.apply(&mut config);
    config.validate()?;
    let idea = idea_file::load(idea_path)?;
    let store = Store::new(std::path::absolute(out).unwrap_or_else(|_| out.to_owned()));
    let engine = config.engine(store.clone())?;
    let state = new_run(idea, config.run.clone()).map_err(|e| CliError::config(e.to_string()))?;

    let dir = store.run_dir(state.run_id());
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    let saved = saved_config_path(&store, state.run_id());
    std::fs::write(&saved, config.to_toml()).map_err(|e| CliError::io(format!("{}: {e}", saved.display())))?;

    println!("run_id: {}", state.run_id());
    drive(&engine, &store, state, halt_after)
}

fn require_run(store: &Store, run_id: &str) -> CliResult {
    if store.exists(run_id) {
        Ok(())
    } else {
        Err(CliError::new(
            Code::MissingRun,
            format!("no run `{run_id}` under {}", store.root().display()),
        ))
    }
}

pub fn resume(out: &Path, run_id: &str, config_path: Option<&Path>, halt_after: Option<u32>) -> CliResult {
    let store = Store::new(std::path::absolute(out).unwrap_or_else(|_| out.to_owned()));
    require_run(&store, run_id)?;
    let state = store.load(run_id)?;
    println!("run_id: {run_id}");
    if state.status() == RunStatus::Finished {
        println!("status: finished (nothing to do)");
        return Ok(());
    }
    let config = match config_path {
        Some(path) => ConfigFile::load(path)?,
        None => {
            let saved = saved_config_path(&store, run_id);
            if !saved.is_file() {
                return Err(CliError::config(format!(
                    "{} is missing; pass --config to choose backends",
                    saved.display()
                )));
            }
            ConfigFile::load(&saved)?
        }
    };
    if config.run != *state.config() {
        tracing::warn!("the [run] section differs from the stored run; the stored values are used");
    }
    let mut config = config;
    config.run = state.config().clone();
    let engine = config.engine(store.clone())?;
    let state = if state.status() == RunStatus::Failed {
        state
            .advance(Event::Recover)
            .map_err(|e| CliError::new(Code::Loop, e.to_string()))?
    } else {
        state
    };
    drive(&engine, &store, state, halt_after)
}

fn excerpt(text: &str, width: usize) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() <= width {
        flat
    } else {
        let cut: String = flat.chars().take(width.saturating_sub(3)).collect();
        format!("{cut}...")
    }
}

pub fn summary_table(m: &RunManifest) -> String {
    let mut out = format!(
        "run {}  status {}  N {}  T {}  lmm {}  generator {}\n",
        m.run_id,
        m.status,
        m.config.n_candidates,
        m.config.max_iterations,
        m.config.lmm_backend,
        m.config.generator_backend
    );
    if let Some(failure) = &m.failure {
        out.push_str(&format!("failed while {}: {}\n", failure.step, failure.message));
    }
    out.push_str(&format!(
        "{:<5} {:<16} {:>4} {:<9} {:>12}  {}\n",
        "iter", "prompt words", "sel", "degraded", "placeholders", "feedback"
    ));
    for it in &m.iterations {
        let words = it
            .prompts
            .iter()
            .map(|p| p.word_count.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let sel = it.selection_index.map_or("-".to_owned(), |s| s.to_string());
        let placeholders = it.drafts.iter().filter(|d| d.placeholder).count();
        let feedback = it.feedback.as_deref().map_or("-".to_owned(), |f| excerpt(f, 48));
        out.push_str(&format!(
            "{:<5} {:<16} {:>4} {:<9} {:>12}  {}\n",
            it.iteration,
            words,
            sel,
            if it.degraded_selection { "yes" } else { "no" },
            placeholders,
            feedback
        ));
    }
    if let Some(digest) = &m.final_image_digest {
        out.push_str(&format!("final image {digest}\n"));
    }
    out
}

pub fn inspect(out: &Path, run_id: &str, json: bool) -> CliResult {
    let store = Store::new(out);
    require_run(&store, run_id)?;
    if json {
        print!("{}", store.read_manifest_text(run_id)?);
    } else {
        print!("{}", summary_table(&store.read_manifest(run_id)?));
    }
    Ok(())
}
