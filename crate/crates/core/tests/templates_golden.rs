//! Rendered templates compared against the committed transcriptions in
//! `tests/golden/`. Each golden file has its slots filled with the same
//! sentinel inputs used for rendering; any drift in wording, spacing, or
//! slot placement fails.

mod common;

use std::fs;
use std::path::PathBuf;

use common::*;
use idearefine_core::templates::{self, EMPTY_HISTORY};
use idearefine_core::{
    DraftImage, FeedbackNote, ImageAsset, LmmRequest, MemoryRecord, PromptCandidate, Purpose, TemplateSet,
};

const IDEA: &str = "IDEA_SENTINEL";

fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    let text = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    text.strip_suffix('\n').unwrap_or(&text).to_owned()
}

fn marker(a: &ImageAsset) -> String {
    format!("<img {}>", &a.digest()[..8])
}

fn flat(request: &LmmRequest) -> String {
    request.flatten_with(marker)
}

fn draft(tag: &str, t: u32, i: u32) -> DraftImage {
    DraftImage {
        image: photo(tag),
        prompt_index: i,
        iteration: t,
        seed: None,
        backend_id: "g".into(),
        placeholder: false,
    }
}

fn fill(template: &str, slots: &[(&str, String)]) -> String {
    let mut out = template.to_owned();
    for (marker, value) in slots {
        out = out.replace(marker, value);
    }
    out
}

#[test]
fn builtin_sources_match_golden_files() {
    let set = TemplateSet::builtin();
    for (purpose, name) in [
        (Purpose::Gen, "p_gen.txt"),
        (Purpose::Select, "p_select.txt"),
        (Purpose::Feedback, "p_feedback.txt"),
        (Purpose::Revise, "p_revise.txt"),
    ] {
        assert_eq!(set.get(purpose).source(), golden(name), "{name}");
    }
}

#[test]
fn gen_golden() {
    let idea = idearefine_core::Idea::from_text(IDEA).unwrap();
    let rendered = flat(&templates::render_gen(&idea, 3).unwrap());
    let expected = fill(&golden("p_gen.txt"), &[("{IDEA}", IDEA.into()), ("{N}", "3".into())]);
    assert_eq!(rendered, expected);
}

#[test]
fn select_golden() {
    let idea = idearefine_core::Idea::from_text(IDEA).unwrap();
    let drafts = [draft("a", 0, 0), draft("b", 0, 1), draft("c", 0, 2)];
    let rendered = flat(&templates::render_select(&idea, &drafts).unwrap());
    let images = drafts
        .iter()
        .enumerate()
        .map(|(k, d)| format!("Image {k}: {}", marker(&d.image)))
        .collect::<Vec<_>>()
        .join("\n");
    let expected = fill(
        &golden("p_select.txt"),
        &[
            ("{IDEA}", IDEA.into()),
            ("{N-1}", "2".into()),
            ("{N}", "3".into()),
            ("{images}", images),
        ],
    );
    assert_eq!(rendered, expected);
}

fn one_record() -> MemoryRecord {
    MemoryRecord::new(
        PromptCandidate::new("PROMPT_0", 0, 1).unwrap(),
        draft("m0", 0, 1),
        FeedbackNote::new("FEEDBACK_0", 0).unwrap(),
    )
    .unwrap()
}

#[test]
fn feedback_golden() {
    let idea = idearefine_core::Idea::from_text(IDEA).unwrap();
    let record = one_record();
    let current = draft("cur", 1, 2);
    let prompt = PromptCandidate::new("PROMPT_1", 1, 2).unwrap();
    let rendered =
        flat(&templates::render_feedback(&idea, &current, &prompt, std::slice::from_ref(&record), 1).unwrap());
    let history = format!(
        "Round 1 prompt: PROMPT_0\nRound 1 image: {}\nRound 1 feedback: FEEDBACK_0",
        marker(&record.selected_image().image)
    );
    let expected = fill(
        &golden("p_feedback.txt"),
        &[
            ("{IDEA}", IDEA.into()),
            ("{t}", "2".into()),
            ("{history}", history),
            ("{prompt}", "PROMPT_1".into()),
            ("{image}", marker(&current.image)),
        ],
    );
    assert_eq!(rendered, expected);
}

#[test]
fn revise_golden() {
    let idea = idearefine_core::Idea::from_text(IDEA).unwrap();
    let current = draft("cur", 0, 0);
    let prompt = PromptCandidate::new("PROMPT_0", 0, 0).unwrap();
    let reflection = FeedbackNote::new("REFLECTION_0", 0).unwrap();
    let rendered = flat(&templates::render_revise(&idea, &[], 0, &prompt, &current, &reflection, 3).unwrap());
    let expected = fill(
        &golden("p_revise.txt"),
        &[
            ("{IDEA}", IDEA.into()),
            ("{t}", "1".into()),
            ("{history}", EMPTY_HISTORY.into()),
            ("{prompt}", "PROMPT_0".into()),
            ("{image}", marker(&current.image)),
            ("{reflection}", "REFLECTION_0".into()),
            ("{N}", "3".into()),
        ],
    );
    assert_eq!(rendered, expected);
}

#[test]
fn multimodal_idea_interleaves_images() {
    let idea = idea_with_image();
    let request = templates::render_gen(&idea, 2).unwrap();
    let img = idea.first_image().unwrap();
    assert!(flat(&request).contains(&format!(
        "IDEA: a dog that looks like this one {} playing in snow.",
        marker(img)
    )));
    assert_eq!(request.image_count(), 1);
}

/// A worked feedback example with two memory records, checked in full.
#[test]
fn feedback_worked_example() {
    let idea = idearefine_core::Idea::from_text("a red fox reading a newspaper").unwrap();
    let r0 = MemoryRecord::new(
        PromptCandidate::new("fox on bench", 0, 0).unwrap(),
        draft("w0", 0, 0),
        FeedbackNote::new("the newspaper is missing", 0).unwrap(),
    )
    .unwrap();
    let r1 = MemoryRecord::new(
        PromptCandidate::new("fox holding newspaper", 1, 2).unwrap(),
        draft("w1", 1, 2),
        FeedbackNote::new("the fox should be red", 1).unwrap(),
    )
    .unwrap();
    let current = draft("w2", 2, 1);
    let prompt = PromptCandidate::new("red fox holding a newspaper", 2, 1).unwrap();
    let rendered = flat(&templates::render_feedback(&idea, &current, &prompt, &[r0.clone(), r1.clone()], 2).unwrap());
    let tail = format!(
        "IDEA: a red fox reading a newspaper.\n\nEnd of IDEA.\n\nThis is the round 3 of the iteration.\n\nThe iteration history are:\n\n\
Round 1 prompt: fox on bench\nRound 1 image: {}\nRound 1 feedback: the newspaper is missing\n\n\
Round 2 prompt: fox holding newspaper\nRound 2 image: {}\nRound 2 feedback: the fox should be red\n\n\
Generated sentence prompt for current round 3 is: red fox holding a newspaper\n\n\
Corresponding image generated by the AI art generation model: {}\n\n\
Based on the above information, you will write REASON that is wrapped with <START> and <END>.\n\nREASON:",
        marker(&r0.selected_image().image),
        marker(&r1.selected_image().image),
        marker(&current.image),
    );
    assert!(rendered.ends_with(&tail), "{rendered}");
}
