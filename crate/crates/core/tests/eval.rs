mod common;

use std::path::PathBuf;

use common::*;
use idearefine_core::eval::{
    build_ballots, format_table, read_jsonl, render_report, tally, Ballot, Choice, EvalIdea, Percent, PreferenceTable,
    Variant, VariantId, NO_VOTES_MARKER,
};
use idearefine_core::imagegen::MockGenerator;
use idearefine_core::lmm::MockLmm;
use idearefine_core::Store;
use proptest::prelude::*;

/// Independent oracle: the nearest tenth of a percent to `part / whole`,
/// ties away from zero, found by exact search instead of a formula.
fn oracle_tenths(part: i64, whole: u64) -> i64 {
    let whole = i128::from(whole);
    let target = i128::from(part) * 1000; // tenths * whole
    let mut best = 0i64;
    for tenths in -1000i64..=1000 {
        let err = (i128::from(tenths) * whole - target).abs();
        let best_err = (i128::from(best) * whole - target).abs();
        if err < best_err || (err == best_err && tenths.abs() > best.abs()) {
            best = tenths;
        }
    }
    best
}

fn shown(t: &PreferenceTable) -> (String, String, String, String) {
    (
        t.row(VariantId::ManualInitial).percent.to_string(),
        t.row(VariantId::AutoInitial).percent.to_string(),
        t.row(VariantId::AutoIterative).percent.to_string(),
        t.delta_iteration.to_string(),
    )
}

#[test]
fn fixture_tally_matches_reference_row() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/reference_votes.jsonl");
    let ballots: Vec<Ballot> = read_jsonl(&path).unwrap();
    assert_eq!(ballots.len(), 104);
    let table = tally(&ballots).unwrap();
    assert_eq!(
        shown(&table),
        ("13.5".into(), "29.8".into(), "56.7".into(), "26.9".into())
    );
}

/// Reference rows whose values are all reproduced by counts out of 104.
#[test]
fn consistent_reference_rows() {
    let rows = [
        ([14, 31, 59], ["13.5", "29.8", "56.7", "26.9"]),
        ([15, 36, 53], ["14.4", "34.6", "51.0", "16.3"]),
        ([14, 42, 48], ["13.5", "40.4", "46.2", "5.8"]),
        ([9, 40, 55], ["8.7", "38.5", "52.9", "14.4"]),
    ];
    for (votes, expect) in rows {
        let t = PreferenceTable::from_counts(votes, 0);
        let got = shown(&t);
        assert_eq!([got.0.as_str(), &got.1, &got.2, &got.3], expect, "{votes:?}");
    }
}

/// Reference values that no count out of 104 reproduces; the arithmetic is
/// pinned so a change in rounding is noticed.
#[test]
fn inconsistent_reference_rows() {
    // reference says 8.6 for manual; the nearest achievable values are 7.7 and 8.7
    let t = PreferenceTable::from_counts([9, 45, 50], 0);
    assert_eq!(shown(&t), ("8.7".into(), "43.3".into(), "48.1".into(), "4.8".into()));
    // reference delta is 16.3, but its own columns (8.6 / 34.6 / 56.7) imply 22.1
    let t = PreferenceTable::from_counts([9, 36, 59], 0);
    assert_eq!(t.delta_iteration.to_string(), "22.1");
}

#[test]
fn delta_rounds_once_from_counts() {
    // Subtracting rounded columns would give 51.0 - 34.6 = 16.4.
    let t = PreferenceTable::from_counts([15, 36, 53], 0);
    assert_eq!(t.delta_iteration, Percent(163));
}

#[test]
fn shuffle_is_uniform_over_positions() {
    let ideas = vec![EvalIdea {
        idea_id: "only".into(),
        title: None,
        variants: VariantId::ALL
            .iter()
            .map(|&id| Variant {
                id,
                image_digest: id.to_string(),
                source_run_id: None,
            })
            .collect(),
    }];
    let ballots = build_ballots(&ideas, 6000, 1).unwrap();
    let mut counts = [[0u32; 3]; 3];
    for b in &ballots {
        assert!(b.is_permutation());
        for (pos, v) in b.presentation_order.iter().enumerate() {
            counts[*v as usize][pos] += 1;
        }
    }
    for row in counts {
        for c in row {
            assert!((1880..=2120).contains(&c), "{counts:?}");
        }
    }
}

#[test]
fn report_contents() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::new(dir.path().join("store"));
    let rig = Rig::new(MockLmm::auto("m", 3), MockGenerator::new("g"), Some(store.clone()));
    let state = rig.engine.run(fox(), config(3, 2)).unwrap();
    let digests = [
        state.iterations()[0].drafts[2].image.digest().to_owned(),
        state.iterations()[0].drafts[state.iterations()[0].selection.unwrap() as usize]
            .image
            .digest()
            .to_owned(),
        state.final_image().unwrap().image.digest().to_owned(),
    ];
    let idea = EvalIdea {
        idea_id: "fox".into(),
        title: Some("Fox & <newspaper>".into()),
        variants: VariantId::ALL
            .iter()
            .zip(&digests)
            .map(|(&id, d)| Variant {
                id,
                image_digest: d.clone(),
                source_run_id: Some(state.run_id().to_owned()),
            })
            .collect(),
    };
    let resolve = |d: &str| store.find_asset(d).ok().flatten();

    let table = PreferenceTable::from_counts([14, 31, 59], 0);
    let out = dir.path().join("report");
    let files = render_report(&table, std::slice::from_ref(&idea), &out, resolve).unwrap();
    let md = std::fs::read_to_string(&files.markdown).unwrap();
    let html = std::fs::read_to_string(&files.html).unwrap();
    assert!(md.contains("56.7") && html.contains("56.7"));
    assert!(html.contains("Fox &amp; &lt;newspaper&gt;"));
    let unique: std::collections::BTreeSet<_> = digests.iter().collect();
    assert_eq!(files.images.len(), unique.len());
    assert!(files.images.len() <= 3);
    assert_eq!(
        std::fs::read_dir(out.join("images")).unwrap().count(),
        files.images.len()
    );
    // unshuffled order: manual, initial, iterative
    let positions: Vec<_> = VariantId::ALL
        .iter()
        .map(|v| html.find(&format!("alt=\"{v}\"")).unwrap())
        .collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));

    let empty = tally(&[]).unwrap();
    let files = render_report(&empty, &[], &dir.path().join("empty"), |_| None).unwrap();
    assert!(std::fs::read_to_string(files.markdown)
        .unwrap()
        .contains(NO_VOTES_MARKER));
    assert!(format_table(&empty).contains(NO_VOTES_MARKER));
}

#[test]
fn report_with_three_distinct_images() {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<_> = ["m", "i", "r"].iter().map(|t| photo(t)).collect();
    for img in &images {
        std::fs::write(dir.path().join(format!("{}.png", img.digest())), img.bytes()).unwrap();
    }
    let idea = EvalIdea {
        idea_id: "x".into(),
        title: None,
        variants: VariantId::ALL
            .iter()
            .zip(&images)
            .map(|(&id, img)| Variant {
                id,
                image_digest: img.digest().to_owned(),
                source_run_id: None,
            })
            .collect(),
    };
    let src = dir.path().to_owned();
    let out = dir.path().join("out");
    let files = render_report(&PreferenceTable::from_counts([1, 0, 0], 0), &[idea], &out, |d| {
        Some(src.join(format!("{d}.png")))
    })
    .unwrap();
    assert_eq!(files.images.len(), 3);
    assert_eq!(std::fs::read_dir(out.join("images")).unwrap().count(), 3);
}

fn choice_strategy() -> impl Strategy<Value = Choice> {
    prop_oneof![
        Just(Choice::ManualInitial),
        Just(Choice::AutoInitial),
        Just(Choice::AutoIterative),
        Just(Choice::Abstain)
    ]
}

proptest! {
    #[test]
    fn percent_matches_oracle(part in 0i64..=500, extra in 0u64..=500) {
        let whole = part as u64 + extra;
        prop_assume!(whole > 0);
        prop_assert_eq!(Percent::of(part, whole).tenths(), oracle_tenths(part, whole));
        prop_assert_eq!(Percent::of(-part, whole).tenths(), oracle_tenths(-part, whole));
    }

    #[test]
    fn tally_conserves_and_ignores_order(choices in prop::collection::vec(choice_strategy(), 0..200), seed in any::<u64>()) {
        let idea = EvalIdea {
            idea_id: "i".into(),
            title: None,
            variants: VariantId::ALL.iter().map(|&id| Variant { id, image_digest: id.to_string(), source_run_id: None }).collect(),
        };
        let mut ballots = build_ballots(&[idea], choices.len() as u32, seed).unwrap();
        for (b, c) in ballots.iter_mut().zip(&choices) {
            b.choice = Some(*c);
        }
        let table = tally(&ballots).unwrap();
        prop_assert_eq!(table.rows.iter().map(|r| r.votes).sum::<u64>() + table.abstains, table.total);
        prop_assert_eq!(table.total, choices.len() as u64);
        let mut reversed = ballots.clone();
        reversed.reverse();
        reversed.rotate_left(choices.len() / 3);
        prop_assert_eq!(tally(&reversed).unwrap(), table);
    }

    #[test]
    fn every_ballot_is_a_permutation(seed in any::<u64>(), raters in 1u32..50) {
        let idea = EvalIdea {
            idea_id: "i".into(),
            title: None,
            variants: VariantId::ALL.iter().map(|&id| Variant { id, image_digest: id.to_string(), source_run_id: None }).collect(),
        };
        for b in build_ballots(&[idea], raters, seed).unwrap() {
            prop_assert!(b.is_permutation());
        }
    }
}
