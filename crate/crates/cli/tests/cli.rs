//! End-to-end tests of the `idearefine` binary against mock backends.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use idearefine_core::store::stable_manifest_value;

const BIN: &str = env!("CARGO_BIN_EXE_idearefine");

const MOCK_CONFIG: &str = r#"
[run]
n_candidates = 3
max_iterations = 3
lmm_backend = "mock"
generator_backend = "mock"
seed_policy = { fixed = 7 }
retry_limit = 1

[retry]
base_secs = 0.0
cap_secs = 0.0

[[lmm]]
id = "mock"
kind = "mock"

[[lmm]]
id = "broken"
kind = "mock"
auto = false
script = ["I would rather not wrap anything", "still no markers"]

[[generator]]
id = "mock"
kind = "mock"
resolution = 16
"#;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.toml"), MOCK_CONFIG).unwrap();
        std::fs::write(
            dir.path().join("idea.toml"),
            "[[segment]]\ntext = \"a lighthouse made of glass at night\"\n",
        )
        .unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn out(&self) -> PathBuf {
        self.path("out")
    }

    fn cmd(&self, args: &[&str]) -> Output {
        Command::new(BIN)
            .args(args)
            .current_dir(self.dir.path())
            .output()
            .unwrap()
    }

    fn run(&self, extra: &[&str]) -> Output {
        let mut args = vec!["run", "--config", "config.toml", "--idea", "idea.toml", "--out", "out"];
        args.extend_from_slice(extra);
        self.cmd(&args)
    }

    fn manifest(&self, run_id: &str) -> String {
        std::fs::read_to_string(self.out().join("runs").join(run_id).join("manifest.json")).unwrap()
    }
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exited normally")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn run_id(output: &Output) -> String {
    stdout(output)
        .lines()
        .find_map(|l| l.strip_prefix("run_id: "))
        .unwrap_or_else(|| panic!("no run id in {}", stdout(output)))
        .to_owned()
}

fn stable(manifest: &str) -> serde_json::Value {
    stable_manifest_value(manifest).unwrap()
}

#[test]
fn run_with_mock_backends_finishes() {
    let ws = Workspace::new();
    let out = ws.run(&[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let id = run_id(&out);
    let manifest = ws.manifest(&id);
    assert!(manifest.contains("\"status\": \"finished\""));
    let final_line = stdout(&out)
        .lines()
        .find(|l| l.starts_with("final_image: "))
        .unwrap()
        .to_owned();
    assert!(Path::new(final_line.trim_start_matches("final_image: ")).is_file());
}

#[test]
fn malformed_config_names_the_field() {
    let ws = Workspace::new();
    std::fs::write(
        ws.path("config.toml"),
        MOCK_CONFIG.replace("max_iterations", "max_iteratons"),
    )
    .unwrap();
    let out = ws.run(&[]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("max_iteratons"), "{}", stderr(&out));

    std::fs::write(
        ws.path("config.toml"),
        MOCK_CONFIG.replace("n_candidates = 3", "n_candidates = 0"),
    )
    .unwrap();
    let out = ws.run(&[]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("n_candidates"), "{}", stderr(&out));
}

#[test]
fn bad_idea_file_is_an_input_error() {
    let ws = Workspace::new();
    std::fs::write(ws.path("idea.toml"), "[[segment]]\nimage = \"missing.png\"\n").unwrap();
    assert_eq!(code(&ws.run(&[])), 2);
    std::fs::write(ws.path("idea.toml"), "[[segment]]\ntext = \"x\"\nimage = \"y.png\"\n").unwrap();
    assert_eq!(code(&ws.run(&[])), 2);
}

#[test]
fn unusable_lmm_output_fails_with_code_4_and_persists() {
    let ws = Workspace::new();
    let out = ws.run(&["--lmm", "broken"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    let manifest = ws.manifest(&run_id(&out));
    assert!(manifest.contains("\"status\": \"failed\""), "{manifest}");
}

#[test]
fn missing_credentials_are_a_backend_error() {
    let ws = Workspace::new();
    let config = format!(
        "{MOCK_CONFIG}\n[[lmm]]\nid = \"live\"\nkind = \"openai_chat\"\nendpoint = \"http://127.0.0.1:9\"\n\
model_name = \"m\"\nauth_env_var = \"IDEAREFINE_TEST_UNSET_KEY\"\ntimeout_secs = 1\n"
    );
    std::fs::write(ws.path("config.toml"), config).unwrap();
    let out = Command::new(BIN)
        .args([
            "run",
            "--config",
            "config.toml",
            "--idea",
            "idea.toml",
            "--out",
            "out",
            "--lmm",
            "live",
        ])
        .env_remove("IDEAREFINE_TEST_UNSET_KEY")
        .current_dir(ws.dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn resume_edge_cases() {
    let ws = Workspace::new();
    let id = run_id(&ws.run(&[]));
    let before = ws.manifest(&id);
    let out = ws.cmd(&["resume", "--out", "out", "--run-id", &id]);
    assert_eq!(code(&out), 0);
    assert_eq!(ws.manifest(&id), before, "resuming a finished run must not touch it");

    assert_eq!(code(&ws.cmd(&["resume", "--out", "out", "--run-id", "no-such-run"])), 5);
}

#[test]
fn interrupted_runs_resume_to_the_clean_manifest() {
    let ws = Workspace::new();
    let clean = ws.manifest(&run_id(&ws.run(&[])));
    // 3 iterations give 11 step boundaries; cut after each of the first 10.
    for halt in 1..=10 {
        let out = ws.run(&["--halt-after-steps", &halt.to_string()]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let id = run_id(&out);
        assert!(!ws.manifest(&id).contains("\"status\": \"finished\""), "halt {halt}");
        let out = ws.cmd(&["resume", "--out", "out", "--run-id", &id]);
        assert_eq!(code(&out), 0, "halt {halt}: {}", stderr(&out));
        assert_eq!(stable(&ws.manifest(&id)), stable(&clean), "halt {halt}");
    }
}

#[test]
fn failed_runs_resume_with_a_working_backend() {
    let ws = Workspace::new();
    let id = run_id(&ws.run(&["--lmm", "broken"]));
    std::fs::write(ws.path("fixed.toml"), MOCK_CONFIG).unwrap();
    let out = ws.cmd(&["resume", "--out", "out", "--run-id", &id, "--config", "fixed.toml"]);
    assert_eq!(code(&out), 4, "the stored run still names the broken backend");

    // Same backend id, now answering properly.
    let fixed = MOCK_CONFIG.replace(
        "auto = false\nscript = [\"I would rather not wrap anything\", \"still no markers\"]",
        "auto = true",
    );
    assert_ne!(fixed, MOCK_CONFIG);
    std::fs::write(ws.path("fixed.toml"), fixed).unwrap();
    let out = ws.cmd(&["resume", "--out", "out", "--run-id", &id, "--config", "fixed.toml"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(ws.manifest(&id).contains("\"status\": \"finished\""));
}

#[test]
fn inspect_table_and_json() {
    let ws = Workspace::new();
    let id = run_id(&ws.run(&[]));
    let out = ws.cmd(&["inspect", "--out", "out", "--run-id", &id]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let rows = text
        .lines()
        .filter(|l| l.starts_with(|c: char| c.is_ascii_digit()))
        .count();
    assert_eq!(rows, 3, "{text}");
    assert!(text.contains("degraded"));

    let out = ws.cmd(&["inspect", "--out", "out", "--run-id", &id, "--json"]);
    assert_eq!(stdout(&out), ws.manifest(&id));
    // idempotent
    let again = ws.cmd(&["inspect", "--out", "out", "--run-id", &id, "--json"]);
    assert_eq!(stdout(&again), stdout(&out));

    assert_eq!(code(&ws.cmd(&["inspect", "--out", "out", "--run-id", "missing"])), 5);
}

#[test]
fn tally_prints_the_fixture_percentages() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/reference_votes.jsonl");
    let out = Command::new(BIN)
        .args(["eval", "tally", "--ballots"])
        .arg(&fixture)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    for (variant, pct) in [
        ("manual_initial", "13.5"),
        ("auto_initial", "29.8"),
        ("auto_iterative", "56.7"),
    ] {
        let line = text.lines().find(|l| l.starts_with(variant)).unwrap();
        assert!(line.trim_end().ends_with(pct), "{line}");
    }
}

fn study(ws: &Workspace) -> Vec<String> {
    let ids: Vec<String> = (0..2).map(|_| run_id(&ws.run(&[]))).collect();
    let manual = ws.path("manual.png");
    // Any run asset serves as the hand-prompted image.
    let asset = std::fs::read_dir(ws.out().join("runs").join(&ids[0]).join("assets"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    std::fs::copy(asset, &manual).unwrap();
    let study = format!(
        "[[idea]]\nid = \"a\"\ntitle = \"first\"\nrun = \"{}\"\nmanual_initial = {{ file = \"manual.png\" }}\n\n\
[[idea]]\nid = \"b\"\nrun = \"{}\"\nmanual_initial = {{ file = \"manual.png\" }}\n",
        ids[0], ids[1]
    );
    std::fs::write(ws.path("study.toml"), study).unwrap();
    ids
}

#[test]
fn eval_prepare_vote_tally_report() {
    let ws = Workspace::new();
    study(&ws);
    let prepare = |dir: &str| {
        ws.cmd(&[
            "eval",
            "prepare",
            "--study",
            "study.toml",
            "--dir",
            dir,
            "--out",
            "out",
            "--raters",
            "2",
            "--seed",
            "11",
        ])
    };
    assert_eq!(code(&prepare("s1")), 0);
    assert_eq!(code(&prepare("s2")), 0);
    let ballots = std::fs::read_to_string(ws.path("s1/ballots.jsonl")).unwrap();
    assert_eq!(
        ballots,
        std::fs::read_to_string(ws.path("s2/ballots.jsonl")).unwrap(),
        "same seed, same file"
    );
    assert_eq!(ballots.lines().count(), 4);
    assert_eq!(code(&prepare("s1")), 2, "refuses to clobber votes");

    // Unvoted ballots cannot be tallied.
    assert_eq!(code(&ws.cmd(&["eval", "tally", "--dir", "s1"])), 2);

    let first: serde_json::Value = serde_json::from_str(ballots.lines().next().unwrap()).unwrap();
    let shown_first = first["presentation_order"][0].as_str().unwrap().to_owned();
    let out = ws.cmd(&["eval", "vote", "--dir", "s1", "--idea", "a", "--position", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let after: serde_json::Value = serde_json::from_str(
        std::fs::read_to_string(ws.path("s1/ballots.jsonl"))
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(after["choice"].as_str().unwrap(), shown_first);

    ws.cmd(&["eval", "vote", "--dir", "s1", "--idea", "a", "--abstain"]);
    // Interactive: the position is read from stdin.
    let mut child = Command::new(BIN)
        .args(["eval", "vote", "--dir", "s1", "--idea", "b", "--rater", "rater-1"])
        .current_dir(ws.dir.path())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"3\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("3)"));
    ws.cmd(&["eval", "vote", "--dir", "s1", "--idea", "b", "--position", "2"]);

    let out = ws.cmd(&["eval", "tally", "--dir", "s1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(
        text.contains("total")
            && text
                .lines()
                .any(|l| l.starts_with("abstain") && l.trim_end().ends_with('1'))
    );

    let out = ws.cmd(&["eval", "report", "--dir", "s1", "--out", "out", "--to", "report"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let md = std::fs::read_to_string(ws.path("report/report.md")).unwrap();
    let again = ws.cmd(&["eval", "report", "--dir", "s1", "--out", "out", "--to", "report"]);
    assert_eq!(code(&again), 0);
    assert_eq!(
        std::fs::read_to_string(ws.path("report/report.md")).unwrap(),
        md,
        "report is idempotent"
    );
    assert!(std::fs::read_dir(ws.path("report/images")).unwrap().count() >= 2);
}

#[test]
fn vote_rejects_bad_positions() {
    let ws = Workspace::new();
    study(&ws);
    ws.cmd(&["eval", "prepare", "--study", "study.toml", "--dir", "s", "--out", "out"]);
    assert_eq!(
        code(&ws.cmd(&["eval", "vote", "--dir", "s", "--idea", "a", "--position", "4"])),
        2
    );
    assert_eq!(
        code(&ws.cmd(&["eval", "vote", "--dir", "s", "--idea", "zzz", "--position", "1"])),
        2
    );
}
