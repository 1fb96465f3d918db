//! Offline preference study: three variants per idea, shown to raters in a
//! shuffled order, tallied into percentages of all ballots.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantId {
    /// Image from a hand-written prompt.
    ManualInitial,
    /// Image from the loop's first-iteration selection.
    AutoInitial,
    /// Final image after iterative refinement.
    AutoIterative,
}

impl VariantId {
    pub const ALL: [VariantId; 3] = [
        VariantId::ManualInitial,
        VariantId::AutoInitial,
        VariantId::AutoIterative,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantId::ManualInitial => "manual_initial",
            VariantId::AutoInitial => "auto_initial",
            VariantId::AutoIterative => "auto_iterative",
        }
    }

    fn position(self) -> usize {
        self as usize
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub id: VariantId,
    pub image_digest: String,
    #[serde(default)]
    pub source_run_id: Option<String>,
}

/// One idea with its three candidate images.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalIdea {
    pub idea_id: String,
    #[serde(default)]
    pub title: Option<String>,
    pub variants: Vec<Variant>,
}

impl EvalIdea {
    pub fn variant(&self, id: VariantId) -> Option<&Variant> {
        self.variants.iter().find(|v| v.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    ManualInitial,
    AutoInitial,
    AutoIterative,
    Abstain,
}

impl Choice {
    pub fn variant(self) -> Option<VariantId> {
        match self {
            Choice::ManualInitial => Some(VariantId::ManualInitial),
            Choice::AutoInitial => Some(VariantId::AutoInitial),
            Choice::AutoIterative => Some(VariantId::AutoIterative),
            Choice::Abstain => None,
        }
    }
}

impl From<VariantId> for Choice {
    fn from(v: VariantId) -> Self {
        match v {
            VariantId::ManualInitial => Choice::ManualInitial,
            VariantId::AutoInitial => Choice::AutoInitial,
            VariantId::AutoIterative => Choice::AutoIterative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ballot {
    pub idea_id: String,
    pub rater_id: String,
    pub presentation_order: Vec<VariantId>,
    #[serde(default)]
    pub choice: Option<Choice>,
}

impl Ballot {
    /// Whether the presentation order shows each variant exactly once.
    pub fn is_permutation(&self) -> bool {
        let mut seen = [false; 3];
        self.presentation_order.len() == 3
            && self
                .presentation_order
                .iter()
                .all(|v| !std::mem::replace(&mut seen[v.position()], true))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("idea `{idea_id}` lacks variant {variant}")]
    MissingVariant { idea_id: String, variant: VariantId },
    #[error("ballot {index} has no vote")]
    Unvoted { index: usize },
    #[error("ballot {index} presents an invalid order")]
    BadOrder { index: usize },
    #[error("ballot index {index} out of range ({len} ballots)")]
    NoSuchBallot { index: usize, len: usize },
    #[error("image {digest} for idea `{idea_id}` not found")]
    UnresolvedImage { idea_id: String, digest: String },
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Every ordering of the three variants, in lexicographic order.
pub fn permutations() -> [[VariantId; 3]; 6] {
    let [a, b, c] = VariantId::ALL;
    [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]]
}

/// One unvoted ballot per (idea, rater slot), each shown in an order drawn
/// uniformly from the six permutations. Deterministic in `seed`.
pub fn build_ballots(ideas: &[EvalIdea], raters_per_idea: u32, seed: u64) -> Result<Vec<Ballot>, EvalError> {
    for idea in ideas {
        for id in VariantId::ALL {
            if idea.variant(id).is_none() {
                return Err(EvalError::MissingVariant {
                    idea_id: idea.idea_id.clone(),
                    variant: id,
                });
            }
        }
    }
    let orders = permutations();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ballots = Vec::with_capacity(ideas.len() * raters_per_idea as usize);
    for idea in ideas {
        for rater in 0..raters_per_idea {
            let order = orders[rng.random_range(0..orders.len())];
            ballots.push(Ballot {
                idea_id: idea.idea_id.clone(),
                rater_id: format!("rater-{rater}"),
                presentation_order: order.to_vec(),
                choice: None,
            });
        }
    }
    Ok(ballots)
}

/// Records `choice` on ballot `index`, replacing any earlier vote.
pub fn vote(ballots: &mut [Ballot], index: usize, choice: Choice) -> Result<(), EvalError> {
    let len = ballots.len();
    let ballot = ballots.get_mut(index).ok_or(EvalError::NoSuchBallot { index, len })?;
    ballot.choice = Some(choice);
    Ok(())
}

/// A percentage held as an integer count of tenths, so 56.7% is `Percent(567)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Percent(pub i64);

impl Percent {
    /// `part / whole` as a percentage rounded half away from zero to 0.1.
    pub fn of(part: i64, whole: u64) -> Percent {
        if whole == 0 {
            return Percent(0);
        }
        let whole = whole as i64;
        // tenths = part * 1000 / whole, rounded: (2 * part * 1000 + whole) / (2 * whole)
        let magnitude = (part.abs() * 2000 + whole) / (2 * whole);
        Percent(part.signum() * magnitude)
    }

    pub fn tenths(self) -> i64 {
        self.0
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        write!(f, "{sign}{}.{}", self.0.abs() / 10, self.0.abs() % 10)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRow {
    pub variant: VariantId,
    pub votes: u64,
    pub percent: Percent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceTable {
    /// One row per variant, in [`VariantId::ALL`] order.
    pub rows: Vec<PreferenceRow>,
    pub abstains: u64,
    pub total: u64,
    /// Percentage points gained by refinement over the first iteration,
    /// computed from the raw counts so it is rounded only once.
    pub delta_iteration: Percent,
}

impl PreferenceTable {
    /// Builds the table from vote counts in [`VariantId::ALL`] order.
    pub fn from_counts(votes: [u64; 3], abstains: u64) -> Self {
        let total = votes.iter().sum::<u64>() + abstains;
        let rows = VariantId::ALL
            .iter()
            .zip(votes)
            .map(|(&variant, votes)| PreferenceRow {
                variant,
                votes,
                percent: Percent::of(votes as i64, total),
            })
            .collect();
        let gained =
            votes[VariantId::AutoIterative.position()] as i64 - votes[VariantId::AutoInitial.position()] as i64;
        Self {
            rows,
            abstains,
            total,
            delta_iteration: Percent::of(gained, total),
        }
    }

    pub fn row(&self, variant: VariantId) -> &PreferenceRow {
        &self.rows[variant.position()]
    }
}

/// Counts the votes of fully voted ballots. Abstentions stay in the denominator.
pub fn tally(ballots: &[Ballot]) -> Result<PreferenceTable, EvalError> {
    let mut votes = [0u64; 3];
    let mut abstains = 0;
    for (index, ballot) in ballots.iter().enumerate() {
        if !ballot.is_permutation() {
            return Err(EvalError::BadOrder { index });
        }
        match ballot.choice.ok_or(EvalError::Unvoted { index })?.variant() {
            Some(v) => votes[v.position()] += 1,
            None => abstains += 1,
        }
    }
    Ok(PreferenceTable::from_counts(votes, abstains))
}

pub const NO_VOTES_MARKER: &str = "no votes";

/// Plain-text table, one variant per line.
pub fn format_table(table: &PreferenceTable) -> String {
    let mut out = String::new();
    if table.total == 0 {
        out.push_str(NO_VOTES_MARKER);
        out.push('\n');
        return out;
    }
    for row in &table.rows {
        out.push_str(&format!(
            "{:<16} {:>5} {:>6}\n",
            row.variant.as_str(),
            row.votes,
            row.percent
        ));
    }
    out.push_str(&format!("{:<16} {:>5}\n", "abstain", table.abstains));
    out.push_str(&format!("{:<16} {:>5}\n", "total", table.total));
    out.push_str(&format!("delta_iteration  {:>12}\n", table.delta_iteration));
    out
}

/// Files written by [`render_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub markdown: PathBuf,
    pub html: PathBuf,
    /// Copied images, relative to the report directory.
    pub images: Vec<PathBuf>,
}

fn html_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

/// Writes `report.md` and `report.html` into `out_dir`, copying each idea's
/// three images next to them. Images appear in unshuffled variant order.
/// `resolve` maps an image digest to a file on disk.
pub fn render_report(
    table: &PreferenceTable,
    ideas: &[EvalIdea],
    out_dir: &Path,
    resolve: impl Fn(&str) -> Option<PathBuf>,
) -> Result<ReportFiles, EvalError> {
    let image_dir = out_dir.join("images");
    fs::create_dir_all(&image_dir).map_err(io_err(&image_dir))?;

    let mut images = Vec::new();
    let mut triptychs = Vec::new();
    for idea in ideas {
        let mut cells = Vec::new();
        for id in VariantId::ALL {
            let variant = idea.variant(id).ok_or_else(|| EvalError::MissingVariant {
                idea_id: idea.idea_id.clone(),
                variant: id,
            })?;
            let source = resolve(&variant.image_digest).ok_or_else(|| EvalError::UnresolvedImage {
                idea_id: idea.idea_id.clone(),
                digest: variant.image_digest.clone(),
            })?;
            let ext = source.extension().and_then(|e| e.to_str()).unwrap_or("png");
            let relative = PathBuf::from("images").join(format!("{}.{ext}", variant.image_digest));
            let target = out_dir.join(&relative);
            fs::copy(&source, &target).map_err(io_err(&target))?;
            if !images.contains(&relative) {
                images.push(relative.clone());
            }
            cells.push((id, relative));
        }
        triptychs.push((idea, cells));
    }

    let mut md = String::from("# Preference report\n\n");
    let mut html = String::from(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>Preference report</title>\n</head>\n<body>\n<h1>Preference report</h1>\n",
    );
    if table.total == 0 {
        md.push_str(&format!("_{NO_VOTES_MARKER}_\n"));
        html.push_str(&format!("<p><em>{NO_VOTES_MARKER}</em></p>\n"));
    } else {
        md.push_str("| Variant | Votes | Preference (%) |\n|---|---:|---:|\n");
        html.push_str("<table>\n<tr><th>Variant</th><th>Votes</th><th>Preference (%)</th></tr>\n");
        for row in &table.rows {
            md.push_str(&format!("| {} | {} | {} |\n", row.variant, row.votes, row.percent));
            html.push_str(&format!(
                "<tr><td>{}</td><td>{}</td><td>{}</td></tr>\n",
                row.variant, row.votes, row.percent
            ));
        }
        html.push_str("</table>\n");
        md.push_str(&format!(
            "\nBallots: {} ({} abstained)\n\nΔ iteration: {} points\n",
            table.total, table.abstains, table.delta_iteration
        ));
        html.push_str(&format!(
            "<p>Ballots: {} ({} abstained)</p>\n<p>&Delta; iteration: {} points</p>\n",
            table.total, table.abstains, table.delta_iteration
        ));
    }

    if !triptychs.is_empty() {
        md.push_str("\n## Ideas\n");
        html.push_str("<h2>Ideas</h2>\n");
    }
    for (idea, cells) in &triptychs {
        let title = idea.title.as_deref().unwrap_or(&idea.idea_id);
        md.push_str(&format!("\n### {title}\n\n"));
        html.push_str(&format!("<h3>{}</h3>\n<div>\n", html_escape(title)));
        for (id, path) in cells {
            let p = path.to_string_lossy().replace('\\', "/");
            md.push_str(&format!("![{id}]({p}) "));
            html.push_str(&format!(
                "<figure style=\"display:inline-block\"><img src=\"{p}\" width=\"256\" alt=\"{id}\"><figcaption>{id}</figcaption></figure>\n"
            ));
        }
        md.push('\n');
        html.push_str("</div>\n");
    }
    html.push_str("</body>\n</html>\n");

    let markdown = out_dir.join("report.md");
    fs::write(&markdown, md).map_err(io_err(&markdown))?;
    let html_path = out_dir.join("report.html");
    fs::write(&html_path, html).map_err(io_err(&html_path))?;
    Ok(ReportFiles {
        markdown,
        html: html_path,
        images,
    })
}

/// Writes one JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), EvalError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("ballots serialize");
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Reads one JSON document per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, EvalError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut items = Vec::new();
    for (i, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| EvalError::Format {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}
