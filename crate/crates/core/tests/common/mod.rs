#![allow(dead_code)]

use std::sync::Arc;

use idearefine_core::imagegen::{raster, GenGateway, MockGenerator};
use idearefine_core::lmm::{LmmGateway, MockLmm, MockReply, RetryPolicy};
use idearefine_core::{
    CallKind, CallLog, Engine, Idea, IdeaSegment, ImageAsset, MediaType, RunConfig, SeedPolicy, Store,
};

pub struct Rig {
    pub lmm: Arc<MockLmm>,
    pub gen: Arc<MockGenerator>,
    pub log: CallLog,
    pub engine: Engine,
}

impl Rig {
    pub fn new(lmm: MockLmm, gen: MockGenerator, store: Option<Store>) -> Self {
        let log = CallLog::new();
        let lmm = Arc::new(lmm.with_call_log(log.clone()));
        let gen = Arc::new(gen.with_call_log(log.clone()));
        let mut engine = Engine::new(
            LmmGateway::new(lmm.clone()).with_retry_policy(RetryPolicy::immediate()),
            GenGateway::new(gen.clone()),
        );
        if let Some(store) = store {
            engine = engine.with_store(store);
        }
        Self { lmm, gen, log, engine }
    }

    pub fn scripted(replies: Vec<&str>, store: Option<Store>) -> Self {
        Self::new(
            MockLmm::from_texts("mock-lmm", replies),
            MockGenerator::new("mock-gen"),
            store,
        )
    }
}

pub fn config(n: u32, t: u32) -> RunConfig {
    RunConfig {
        n_candidates: n,
        max_iterations: t,
        seed_policy: SeedPolicy::Fixed(42),
        retry_limit: 0,
        ..RunConfig::default()
    }
}

pub fn fox() -> Idea {
    Idea::from_text("a red fox reading a newspaper on a park bench").unwrap()
}

pub fn photo(tag: &str) -> ImageAsset {
    ImageAsset::new(raster::blocks(16, 16, tag.as_bytes()), MediaType::Png).unwrap()
}

pub fn idea_with_image() -> Idea {
    Idea::new(vec![
        IdeaSegment::text("a dog that looks like this one"),
        IdeaSegment::image(photo("dog")),
        IdeaSegment::text("playing in snow"),
    ])
    .unwrap()
}

pub fn spans(texts: &[&str]) -> String {
    texts
        .iter()
        .map(|t| format!("<START>{t}<END>"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Fully scripted N=3, T=3 trajectory: selections 1, 2, 0.
pub fn scripted_replies() -> Vec<String> {
    vec![
        spans(&[
            "fox on bench, watercolor",
            "fox reading paper, photo",
            "fox in park, oil painting",
        ]),
        "Image 1 is closest. <START>1<END>".into(),
        "<START>the newspaper is missing<END>".into(),
        spans(&[
            "fox holding newspaper, photo",
            "fox with newspaper on bench, 35mm",
            "fox reads the news, studio light",
        ]),
        "<START>2<END>".into(),
        "<START>the bench should be wooden<END>".into(),
        spans(&[
            "fox with newspaper on wooden bench",
            "fox on a wooden park bench reading",
            "wooden bench, fox, newspaper, dusk",
        ]),
        "<START>0<END>".into(),
    ]
}

pub fn scripted_rig(store: Option<Store>) -> Rig {
    Rig::new(
        MockLmm::scripted(
            "mock-lmm",
            scripted_replies().into_iter().map(MockReply::Text).collect(),
        ),
        MockGenerator::new("mock-gen"),
        store,
    )
}

/// (gen_prompts, N x generate, select, feedback, revise) x (T-1), then N x generate, select.
pub fn expected_pattern(n: usize, t: usize) -> Vec<CallKind> {
    let mut out = vec![CallKind::GenPrompts];
    for k in 0..t {
        out.extend(std::iter::repeat_n(CallKind::Generate, n));
        out.push(CallKind::Select);
        if k + 1 < t {
            out.push(CallKind::Feedback);
            out.push(CallKind::Revise);
        }
    }
    out
}

/// Runs the scripted trajectory against `store`, breaking after the
/// `stop_after`-th persisted boundary that satisfies `is_cut`, then resumes
/// with fresh mocks that replay the rest of the script. Returns the run id.
pub fn interrupted_then_resumed(store: &Store, is_cut: impl Fn(&idearefine_core::RunState) -> bool) -> String {
    use std::ops::ControlFlow;
    let rig = scripted_rig(Some(store.clone()));
    let state = idearefine_core::new_run(fox(), config(3, 3)).unwrap();
    let halted = rig
        .engine
        .drive(state, |s| {
            if is_cut(s) {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .unwrap();
    assert!(!halted.status().is_terminal(), "cut point never reached");
    let consumed = scripted_replies().len() - rig.lmm.remaining();
    let run_id = halted.run_id().to_owned();
    drop(rig);

    // A new process: reload from disk and continue with the unused replies.
    let rest: Vec<MockReply> = scripted_replies()
        .into_iter()
        .skip(consumed)
        .map(MockReply::Text)
        .collect();
    let rig = Rig::new(
        MockLmm::scripted("mock-lmm", rest),
        MockGenerator::new("mock-gen"),
        Some(store.clone()),
    );
    let finished = rig.engine.resume_stored(&run_id).unwrap();
    assert_eq!(finished.status(), idearefine_core::RunStatus::Finished);
    run_id
}
