//! `eval prepare|vote|tally|report`.
//!
//! A study lives in one directory: `ideas.json` (each idea's three variant
//! images), `ballots.jsonl` (one shuffled ballot per idea and rater), and
//! `assets/` for images imported from files rather than taken from runs.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use idearefine_core::eval::{
    build_ballots, format_table, read_jsonl, render_report, tally, write_jsonl, Ballot, Choice, EvalIdea, Variant,
    VariantId,
};
use idearefine_core::{ImageAsset, MediaType, Store};
use serde::Deserialize;

use crate::exit::{CliError, CliResult};

pub const IDEAS_FILE: &str = "ideas.json";
pub const BALLOTS_FILE: &str = "ballots.jsonl";
const ASSETS_DIR: &str = "assets";

/// The study file. Each idea names its images by digest, by file, or by a
/// finished run (whose first selection and final image become the two
/// automatic variants).
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyFile {
    idea: Vec<StudyIdea>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyIdea {
    id: String,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    run: Option<String>,
    #[serde(default)]
    manual_initial: Option<ImageRef>,
    #[serde(default)]
    auto_initial: Option<ImageRef>,
    #[serde(default)]
    auto_iterative: Option<ImageRef>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
enum ImageRef {
    Digest(String),
    File(PathBuf),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(format!("{}: {e}", path.display()))
}

fn import(file: &Path, dir: &Path) -> CliResult<String> {
    let bytes = std::fs::read(file).map_err(io(file))?;
    let media = MediaType::sniff(&bytes)
        .ok_or_else(|| CliError::config(format!("{} is neither PNG nor JPEG", file.display())))?;
    let asset = ImageAsset::new(bytes, media).map_err(|e| CliError::config(e.to_string()))?;
    let assets = dir.join(ASSETS_DIR);
    std::fs::create_dir_all(&assets).map_err(io(&assets))?;
    let target = assets.join(format!("{}.{}", asset.digest(), media.extension()));
    std::fs::write(&target, asset.bytes()).map_err(io(&target))?;
    Ok(asset.digest().to_owned())
}

fn resolve_idea(idea: StudyIdea, base: &Path, dir: &Path, store: &Store) -> CliResult<EvalIdea> {
    let mut from_run = [None, None];
    if let Some(run_id) = &idea.run {
        let m = store.read_manifest(run_id)?;
        let first = m.iterations.first().and_then(|it| {
            it.selection_index
                .and_then(|s| it.drafts.get(s as usize))
                .map(|d| d.digest.clone())
        });
        match (first, m.final_image_digest) {
            (Some(first), Some(last)) => from_run = [Some(first), Some(last)],
            _ => {
                return Err(CliError::config(format!(
                    "idea `{}`: run {run_id} has not finished",
                    idea.id
                )))
            }
        }
    }
    let mut variants = Vec::with_capacity(3);
    let explicit = [idea.manual_initial, idea.auto_initial, idea.auto_iterative];
    let fallback = [None, from_run[0].take(), from_run[1].take()];
    for ((id, given), fallback) in VariantId::ALL.into_iter().zip(explicit).zip(fallback) {
        let source_run_id = if given.is_none() && fallback.is_some() {
            idea.run.clone()
        } else {
            None
        };
        let digest = match given {
            Some(ImageRef::Digest(d)) => d,
            Some(ImageRef::File(f)) => import(&base.join(f), dir)?,
            None => fallback.ok_or_else(|| CliError::config(format!("idea `{}` has no image for {id}", idea.id)))?,
        };
        variants.push(Variant {
            id,
            image_digest: digest,
            source_run_id,
        });
    }
    Ok(EvalIdea {
        idea_id: idea.id,
        title: idea.title,
        variants,
    })
}

pub fn prepare(study_path: &Path, dir: &Path, store_root: &Path, raters: u32, seed: u64, force: bool) -> CliResult {
    let text = std::fs::read_to_string(study_path).map_err(io(study_path))?;
    let study: StudyFile =
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", study_path.display())))?;
    let ballots_path = dir.join(BALLOTS_FILE);
    if ballots_path.exists() && !force {
        return Err(CliError::config(format!(
            "{} exists; pass --force to replace it and its votes",
            ballots_path.display()
        )));
    }
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let base = study_path.parent().unwrap_or(Path::new("."));
    let store = Store::new(store_root);
    let mut seen = std::collections::BTreeSet::new();
    let mut ideas = Vec::with_capacity(study.idea.len());
    for idea in study.idea {
        if !seen.insert(idea.id.clone()) {
            return Err(CliError::config(format!("duplicate idea id `{}`", idea.id)));
        }
        ideas.push(resolve_idea(idea, base, dir, &store)?);
    }
    let ballots = build_ballots(&ideas, raters, seed)?;
    let ideas_path = dir.join(IDEAS_FILE);
    let json = serde_json::to_string_pretty(&ideas).expect("ideas serialize") + "\n";
    std::fs::write(&ideas_path, json).map_err(io(&ideas_path))?;
    write_jsonl(&ballots_path, &ballots)?;
    println!(
        "{} ballots for {} ideas written to {}",
        ballots.len(),
        ideas.len(),
        ballots_path.display()
    );
    Ok(())
}

fn load_ideas(dir: &Path) -> CliResult<Vec<EvalIdea>> {
    let path = dir.join(IDEAS_FILE);
    let text = std::fs::read_to_string(&path).map_err(io(&path))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// A vote given on the command line or typed at the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pick {
    /// 1-based position in the order the ballot displays its images.
    Position(usize),
    Abstain,
}

fn parse_pick(line: &str) -> Option<Pick> {
    match line.trim().to_ascii_lowercase().as_str() {
        "a" | "abstain" | "0" => Some(Pick::Abstain),
        other => other.parse().ok().filter(|p| (1..=3).contains(p)).map(Pick::Position),
    }
}

/// Records one vote. Without `pick`, shows the ballot and reads the answer
/// from `input`.
pub fn vote(dir: &Path, idea_id: &str, rater: Option<&str>, pick: Option<Pick>, input: &mut dyn BufRead) -> CliResult {
    let path = dir.join(BALLOTS_FILE);
    let mut ballots: Vec<Ballot> = read_jsonl(&path)?;
    let index = ballots
        .iter()
        .position(|b| {
            b.idea_id == idea_id && rater.is_none_or(|r| b.rater_id == r) && (rater.is_some() || b.choice.is_none())
        })
        .ok_or_else(|| match rater {
            Some(r) => CliError::config(format!("no ballot for idea `{idea_id}` and rater `{r}`")),
            None => CliError::config(format!("no unvoted ballot for idea `{idea_id}`")),
        })?;
    let pick = match pick {
        Some(p) => p,
        None => {
            let ideas = load_ideas(dir)?;
            let idea = ideas.iter().find(|i| i.idea_id == idea_id);
            let ballot = &ballots[index];
            let mut stdout = std::io::stdout().lock();
            let title = idea.and_then(|i| i.title.as_deref()).unwrap_or(idea_id);
            let _ = writeln!(stdout, "{title} (rater {})", ballot.rater_id);
            for (k, v) in ballot.presentation_order.iter().enumerate() {
                let digest = idea
                    .and_then(|i| i.variant(*v))
                    .map_or("?", |x| x.image_digest.as_str());
                let _ = writeln!(stdout, "  {}) {digest}", k + 1);
            }
            let _ = write!(stdout, "best image [1-3, a=abstain]: ");
            let _ = stdout.flush();
            let mut line = String::new();
            input.read_line(&mut line).map_err(|e| CliError::io(e.to_string()))?;
            parse_pick(&line).ok_or_else(|| CliError::config(format!("not a choice: `{}`", line.trim())))?
        }
    };
    let choice = match pick {
        Pick::Abstain => Choice::Abstain,
        Pick::Position(p) => {
            let order = &ballots[index].presentation_order;
            let variant = order
                .get(p.wrapping_sub(1))
                .ok_or_else(|| CliError::config(format!("position {p} is not in 1..={}", order.len())))?;
            Choice::from(*variant)
        }
    };
    idearefine_core::eval::vote(&mut ballots, index, choice)?;
    let tmp = path.with_extension("jsonl.tmp");
    write_jsonl(&tmp, &ballots)?;
    std::fs::rename(&tmp, &path).map_err(io(&path))?;
    println!(
        "recorded {choice:?} for idea `{idea_id}` (rater {})",
        ballots[index].rater_id
    );
    Ok(())
}

pub fn tally_file(ballots_path: &Path) -> CliResult {
    let ballots: Vec<Ballot> = read_jsonl(ballots_path)?;
    let table = tally(&ballots)?;
    print!("{}", format_table(&table));
    Ok(())
}

pub fn report(dir: &Path, store_root: &Path, out: &Path) -> CliResult {
    let ballots: Vec<Ballot> = read_jsonl(&dir.join(BALLOTS_FILE))?;
    let table = tally(&ballots)?;
    let ideas = load_ideas(dir)?;
    let store = Store::new(store_root);
    let assets = dir.join(ASSETS_DIR);
    let resolve = |digest: &str| {
        store.find_asset(digest).ok().flatten().or_else(|| {
            [MediaType::Png, MediaType::Jpeg]
                .iter()
                .map(|m| assets.join(format!("{digest}.{}", m.extension())))
                .find(|p| p.is_file())
        })
    };
    let files = render_report(&table, &ideas, out, resolve)?;
    println!("{}", files.markdown.display());
    println!("{}", files.html.display());
    Ok(())
}
