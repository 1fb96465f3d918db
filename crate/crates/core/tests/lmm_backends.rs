//! Chat-completions adapter against a local HTTP stand-in, and replay of the
//! committed fixture exchanges.

mod common;

use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use common::*;
use idearefine_core::lmm::{
    build_request_body, record_exchange, LmmBackend, LmmBackendDescriptor, LmmGateway, OpenAiChatBackend,
    ReplayBackend, RetryPolicy,
};
use idearefine_core::templates::{parse_wrapped, render_gen, render_select};
use idearefine_core::{DraftImage, LmmError};
use serde_json::Value;

type Reply = (u16, String);
type Seen = (String, Option<String>, Value);

/// Serves canned replies in order and records each request body and auth header.
struct ChatServer {
    server: Arc<tiny_http::Server>,
    worker: Option<JoinHandle<()>>,
    seen: Arc<Mutex<Vec<Seen>>>,
    url: String,
}

impl ChatServer {
    fn start(replies: Vec<Reply>) -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let port = server.server_addr().to_ip().unwrap().port();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let (serving, log) = (server.clone(), seen.clone());
        let worker = std::thread::spawn(move || {
            let mut replies = replies.into_iter();
            for mut request in serving.incoming_requests() {
                let mut body = String::new();
                request.as_reader().read_to_string(&mut body).unwrap();
                let auth = request
                    .headers()
                    .iter()
                    .find(|h| h.field.equiv("Authorization"))
                    .map(|h| h.value.as_str().to_owned());
                log.lock()
                    .unwrap()
                    .push((request.url().to_owned(), auth, serde_json::from_str(&body).unwrap()));
                let (status, text) = replies.next().unwrap_or((500, "script exhausted".into()));
                let _ = request.respond(tiny_http::Response::from_string(text).with_status_code(status));
            }
        });
        Self {
            server,
            worker: Some(worker),
            seen,
            url: format!("http://127.0.0.1:{port}/v1"),
        }
    }
}

impl Drop for ChatServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            w.join().unwrap();
        }
    }
}

fn answer(content: &str) -> Reply {
    (
        200,
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
        })
        .to_string(),
    )
}

fn descriptor(url: &str) -> LmmBackendDescriptor {
    LmmBackendDescriptor {
        id: "chat".into(),
        endpoint: url.into(),
        model_name: "vision-model".into(),
        auth_env_var: None,
        timeout: Duration::from_secs(10),
    }
}

#[test]
fn posts_body_with_bearer_key() {
    let server = ChatServer::start(vec![answer("<START>a<END><START>b<END>")]);
    let backend = OpenAiChatBackend::with_api_key(descriptor(&server.url), Some("sk-test".into())).unwrap();
    let request = render_gen(&idea_with_image(), 2).unwrap();
    let text = backend.complete(&request).unwrap();
    assert_eq!(parse_wrapped(&text, 2).unwrap(), ["a", "b"]);
    let seen = server.seen.lock().unwrap();
    assert_eq!(seen[0].0, "/v1/chat/completions");
    assert_eq!(seen[0].1.as_deref(), Some("Bearer sk-test"));
    assert_eq!(seen[0].2, build_request_body("vision-model", &request));
}

#[test]
fn status_classes() {
    let server = ChatServer::start(vec![(401, "bad key".into()), (400, "bad".into()), answer("")]);
    let backend = OpenAiChatBackend::with_api_key(descriptor(&server.url), None).unwrap();
    let request = render_gen(&fox(), 1).unwrap();
    assert!(matches!(backend.complete(&request), Err(LmmError::Auth(_))));
    assert!(matches!(
        backend.complete(&request),
        Err(LmmError::Rejected { status: 400, .. })
    ));
    assert!(matches!(backend.complete(&request), Err(LmmError::Refusal(_))));
}

#[test]
fn gateway_retries_rate_limits() {
    let server = ChatServer::start(vec![
        (429, "slow down".into()),
        (503, "busy".into()),
        answer("<START>x<END>"),
    ]);
    let backend = OpenAiChatBackend::with_api_key(descriptor(&server.url), None).unwrap();
    let gateway = LmmGateway::new(Arc::new(backend)).with_retry_policy(RetryPolicy::immediate());
    let done = gateway.complete_with_retry(&render_gen(&fox(), 1).unwrap(), 3).unwrap();
    assert_eq!(done.attempts, 3);
    assert_eq!(done.text, "<START>x<END>");
}

#[test]
fn gateway_gives_up_after_limit() {
    let server = ChatServer::start(vec![(503, "busy".into()); 5]);
    let backend = OpenAiChatBackend::with_api_key(descriptor(&server.url), None).unwrap();
    let gateway = LmmGateway::new(Arc::new(backend)).with_retry_policy(RetryPolicy::immediate());
    let err = gateway
        .complete_with_retry(&render_gen(&fox(), 1).unwrap(), 2)
        .unwrap_err();
    assert!(matches!(err, LmmError::ExhaustedRetries { attempts: 3, .. }));
}

#[test]
fn missing_key_variable_is_auth_error() {
    let mut d = descriptor("http://127.0.0.1:9");
    d.auth_env_var = Some("IDEAREFINE_TEST_SURELY_UNSET_KEY".into());
    assert!(matches!(OpenAiChatBackend::from_env(d), Err(LmmError::Auth(_))));
}

#[test]
fn recording_writes_fixture_pairs() {
    let server = ChatServer::start(vec![answer("<START>q<END>")]);
    let dir = tempfile::tempdir().unwrap();
    let backend = OpenAiChatBackend::with_api_key(descriptor(&server.url), None)
        .unwrap()
        .recording_to(dir.path());
    let request = render_gen(&fox(), 1).unwrap();
    backend.complete(&request).unwrap();
    let replay = ReplayBackend::load("replay", "vision-model", dir.path()).unwrap();
    assert_eq!(replay.len(), 1);
    assert_eq!(replay.complete(&request).unwrap(), "<START>q<END>");
}

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/lmm")
}

fn fixture_select_drafts() -> Vec<DraftImage> {
    (0..3)
        .map(|i| DraftImage {
            image: photo(&format!("fixture-draft-{i}")),
            prompt_index: i,
            iteration: 0,
            seed: None,
            backend_id: "g".into(),
            placeholder: false,
        })
        .collect()
}

/// Rewrites the request halves of the committed fixtures when
/// `IDEAREFINE_BLESS=1`; the response halves are hand-authored.
#[test]
fn committed_fixtures_replay() {
    let gen = render_gen(&fox(), 3).unwrap();
    let select = render_select(&fox(), &fixture_select_drafts()).unwrap();
    if std::env::var("IDEAREFINE_BLESS").as_deref() == Ok("1") {
        for (name, req) in [("gen-fox", &gen), ("select-fox", &select)] {
            let response = std::fs::read_to_string(fixture_dir().join(format!("{name}.response.json"))).unwrap();
            record_exchange(
                &fixture_dir(),
                name,
                &build_request_body("vision-model", req),
                &response,
            )
            .unwrap();
        }
    }
    let replay = ReplayBackend::load("replay", "vision-model", &fixture_dir()).unwrap();
    assert_eq!(replay.len(), 2);
    assert_eq!(replay.matching(&gen), Some("gen-fox"));
    let prompts = parse_wrapped(&replay.complete(&gen).unwrap(), 3).unwrap();
    assert_eq!(prompts.len(), 3);
    assert!(prompts.iter().all(|p| p.contains("fox")));
    let chosen = idearefine_core::templates::parse_selection(&replay.complete(&select).unwrap(), 3).unwrap();
    assert_eq!(chosen, 2);
    // A request that was never recorded is not silently answered.
    assert!(replay.complete(&render_gen(&fox(), 2).unwrap()).is_err());
}
