//! Deterministic OpenAI-compatible endpoint for tests and dry runs.
//!
//! The verdict for a prompt depends only on the persona description and the
//! text it carries. A [`PatternRule`] `(flag, every)` for a persona flags the
//! text at position `i` of [`MockConfig::texts`] when `i % every < flag`, so
//! the persona's rate over any multiple of `every` texts is exactly
//! `flag / every`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::client::ChatRequest;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternRule {
    /// Persona description as substituted into the prompt.
    pub persona: String,
    pub flag: u32,
    pub every: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultKind {
    /// Non-JSON assistant content.
    #[default]
    Garbage,
    /// HTTP 500.
    ServerError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub model: String,
    /// Verdict for personas without a rule and texts outside `texts`.
    pub default_verdict: bool,
    pub rules: Vec<PatternRule>,
    /// Texts in the order that positions are counted.
    pub texts: Vec<String>,
    /// Faulty answers served for each distinct prompt before a valid one.
    pub faults_per_prompt: u32,
    pub fault: FaultKind,
    /// Artificial latency per completion.
    pub delay_ms: u64,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            model: "mock".into(),
            default_verdict: false,
            rules: Vec::new(),
            texts: Vec::new(),
            faults_per_prompt: 0,
            fault: FaultKind::Garbage,
            delay_ms: 0,
        }
    }
}

impl MockConfig {
    pub fn always(verdict: bool) -> Self {
        Self {
            default_verdict: verdict,
            ..Default::default()
        }
    }
}

/// Request counters, readable while the server runs.
#[derive(Debug, Default)]
pub struct MockStats {
    pub completions: AtomicUsize,
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
}

struct Shared {
    config: MockConfig,
    stats: Arc<MockStats>,
    positions: HashMap<String, usize>,
    served: Mutex<HashMap<String, u32>>,
}

impl Shared {
    fn new(config: MockConfig, stats: Arc<MockStats>) -> Self {
        let mut positions = HashMap::with_capacity(config.texts.len());
        for (i, t) in config.texts.iter().enumerate() {
            positions.entry(t.clone()).or_insert(i);
        }
        Self {
            config,
            stats,
            positions,
            served: Mutex::new(HashMap::new()),
        }
    }

    fn verdict(&self, persona: &str, text: &str) -> bool {
        let rule = self.config.rules.iter().find(|r| r.persona == persona);
        match (rule, self.positions.get(text)) {
            (Some(r), Some(&i)) => (i as u32 % r.every) < r.flag,
            _ => self.config.default_verdict,
        }
    }
}

/// Pulls the persona description and text back out of a rendered prompt.
pub fn parse_prompt(prompt: &str) -> Option<(&str, &str)> {
    let persona_start = prompt.rfind("\nPersona: ")? + "\nPersona: ".len();
    let text_marker = prompt[persona_start..].find("\nText: ")? + persona_start;
    let persona = &prompt[persona_start..text_marker];
    let text_start = text_marker + "\nText: ".len();
    let text_end = prompt.rfind("\n\nNow, analyze").filter(|&e| e >= text_start)?;
    Some((persona, &prompt[text_start..text_end]))
}

async fn models(State(shared): State<Arc<Shared>>) -> Json<serde_json::Value> {
    Json(json!({"object": "list", "data": [{"id": shared.config.model, "object": "model"}]}))
}

fn completion(model: &str, content: &str) -> Json<serde_json::Value> {
    Json(json!({
        "id": "mock-completion",
        "object": "chat.completion",
        "created": 0,
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop"
        }]
    }))
}

struct InFlight<'a>(&'a MockStats);

impl<'a> InFlight<'a> {
    fn enter(stats: &'a MockStats) -> Self {
        let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
        Self(stats)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn chat(State(shared): State<Arc<Shared>>, Json(req): Json<ChatRequest>) -> Response {
    let _guard = InFlight::enter(&shared.stats);
    shared.stats.completions.fetch_add(1, Ordering::SeqCst);
    if shared.config.delay_ms > 0 {
        tokio::time::sleep(Duration::from_millis(shared.config.delay_ms)).await;
    }
    let Some(prompt) = req.messages.iter().rev().find(|m| m.role == "user").map(|m| m.content.as_str()) else {
        return (StatusCode::BAD_REQUEST, "no user message").into_response();
    };
    let faulty = {
        let mut served = shared.served.lock().expect("mock state lock");
        let n = served.entry(prompt.to_string()).or_default();
        *n += 1;
        *n <= shared.config.faults_per_prompt
    };
    if faulty {
        return match shared.config.fault {
            FaultKind::Garbage => completion(&req.model, "I cannot help with that.").into_response(),
            FaultKind::ServerError => (StatusCode::INTERNAL_SERVER_ERROR, "injected fault").into_response(),
        };
    }
    let Some((persona, text)) = parse_prompt(prompt) else {
        return completion(&req.model, "unrecognized prompt").into_response();
    };
    let verdict = shared.verdict(persona, text);
    let content = format!("{{\n    \"is_hate_speech\": \"{verdict}\"\n}}");
    completion(&req.model, &content).into_response()
}

pub fn router(config: MockConfig, stats: Arc<MockStats>) -> Router {
    let shared = Arc::new(Shared::new(config, stats));
    Router::new()
        .route("/v1/models", get(models))
        .route("/v1/chat/completions", post(chat))
        .with_state(shared)
}

/// A mock server running on the current tokio runtime.
pub struct MockServer {
    addr: SocketAddr,
    stats: Arc<MockStats>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl MockServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts serving.
    pub async fn start(config: MockConfig, addr: SocketAddr) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let stats = Arc::new(MockStats::default());
        let app = router(config, stats.clone());
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            let serve = axum::serve(listener, app).with_graceful_shutdown(async {
                let _ = rx.await;
            });
            if let Err(e) = serve.await {
                log::error!("mock server stopped: {e}");
            }
        });
        Ok(Self {
            addr,
            stats,
            shutdown: Some(tx),
            task,
        })
    }

    pub async fn start_local(config: MockConfig) -> std::io::Result<Self> {
        Self::start(config, SocketAddr::from(([127, 0, 0, 1], 0))).await
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL to use as an experiment endpoint.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn stats(&self) -> &MockStats {
        &self.stats
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = (&mut self.task).await;
    }

    /// Serves until the task ends.
    pub async fn wait(mut self) {
        let _ = (&mut self.task).await;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::render_prompt;
    use unitarget_core::{PersonaSpec, Side};

    #[test]
    fn prompt_round_trips_through_parser() {
        let p = PersonaSpec {
            persona_id: "x".into(),
            description: "a night-shift nurse".into(),
            side: Side::Right,
        };
        let text = "multi\nline\n\ntext";
        let prompt = render_prompt(&p, text);
        assert_eq!(parse_prompt(&prompt), Some(("a night-shift nurse", text)));
    }

    #[test]
    fn pattern_rates_are_exact() {
        let config = MockConfig {
            rules: vec![PatternRule {
                persona: "p".into(),
                flag: 3,
                every: 4,
            }],
            texts: (0..200).map(|i| format!("t{i}")).collect(),
            ..Default::default()
        };
        let texts = config.texts.clone();
        let shared = Shared::new(config, Arc::default());
        let flagged = texts.iter().filter(|t| shared.verdict("p", t)).count();
        assert_eq!(flagged, 150);
        assert!(!shared.verdict("other", "t0"));
    }
}
