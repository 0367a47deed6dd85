//! Scripted stand-in for an OpenAI-compatible endpoint.
//!
//! Each request is answered by the first unconsumed scripted response whose
//! matcher accepts it (responses without a matcher accept anything). Every
//! request is logged with the index of the response that served it. When
//! nothing is left the server answers 500 with a diagnostic.

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};
use tokio::sync::oneshot;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matcher {
    /// Exact model name of the request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Substring of the text of the request's last message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
}

impl Matcher {
    fn accepts(&self, request: &Value) -> bool {
        if let Some(model) = &self.model {
            if request["model"].as_str() != Some(model.as_str()) {
                return false;
            }
        }
        if let Some(needle) = &self.contains {
            if !last_message_text(request).contains(needle.as_str()) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockReply {
    Text {
        reply: String,
    },
    Error {
        status: u16,
        #[serde(default)]
        error: Value,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedResponse {
    #[serde(rename = "match", default, skip_serializing_if = "Option::is_none")]
    pub matcher: Option<Matcher>,
    #[serde(flatten)]
    pub reply: MockReply,
}

impl ScriptedResponse {
    pub fn reply(text: impl Into<String>) -> Self {
        Self {
            matcher: None,
            reply: MockReply::Text { reply: text.into() },
        }
    }

    pub fn error(status: u16, error: Value) -> Self {
        Self {
            matcher: None,
            reply: MockReply::Error { status, error },
        }
    }

    pub fn for_model(mut self, model: impl Into<String>) -> Self {
        self.matcher.get_or_insert_with(Matcher::default).model = Some(model.into());
        self
    }

    pub fn when_contains(mut self, needle: impl Into<String>) -> Self {
        self.matcher.get_or_insert_with(Matcher::default).contains = Some(needle.into());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    pub responses: Vec<ScriptedResponse>,
}

impl MockScript {
    pub fn new(responses: Vec<ScriptedResponse>) -> Self {
        Self { responses }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedRequest {
    pub body: Value,
    /// Index into the script of the response that answered, if any.
    pub served_by: Option<usize>,
    pub status: u16,
}

#[derive(Debug, Default)]
struct ServerState {
    responses: Vec<ScriptedResponse>,
    consumed: Vec<bool>,
    log: Vec<RecordedRequest>,
}

pub struct MockServer {
    addr: SocketAddr,
    state: Arc<Mutex<ServerState>>,
    shutdown: Option<oneshot::Sender<()>>,
}

impl MockServer {
    /// Binds an ephemeral localhost port and starts serving.
    pub async fn start(script: MockScript) -> std::io::Result<Self> {
        let consumed = vec![false; script.responses.len()];
        let state = Arc::new(Mutex::new(ServerState {
            responses: script.responses,
            consumed,
            log: Vec::new(),
        }));
        let app = Router::new()
            .route("/chat/completions", post(handle))
            .route("/v1/chat/completions", post(handle))
            .with_state(state.clone());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(Self {
            addr,
            state,
            shutdown: Some(tx),
        })
    }

    /// Base URL to put into a `ModelEndpoint`.
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.state.lock().expect("mock state poisoned").log.clone()
    }

    pub fn remaining(&self) -> usize {
        let state = self.state.lock().expect("mock state poisoned");
        state.consumed.iter().filter(|c| !**c).count()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

fn last_message_text(request: &Value) -> String {
    let Some(last) = request["messages"].as_array().and_then(|m| m.last()) else {
        return String::new();
    };
    match &last["content"] {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join("\n"),
        _ => String::new(),
    }
}

fn approx_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

async fn handle(State(state): State<Arc<Mutex<ServerState>>>, Json(body): Json<Value>) -> Response {
    let mut state = state.lock().expect("mock state poisoned");
    let picked = (0..state.responses.len())
        .find(|&i| !state.consumed[i] && state.responses[i].matcher.as_ref().is_none_or(|m| m.accepts(&body)));
    let Some(index) = picked else {
        state.log.push(RecordedRequest {
            body,
            served_by: None,
            status: 500,
        });
        return (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(json!({"error": {"message": "mock script exhausted: no scripted response matches this request", "type": "mock_exhausted"}})),
        )
            .into_response();
    };
    state.consumed[index] = true;
    let reply = state.responses[index].reply.clone();
    let (status, response) = match reply {
        MockReply::Text { reply } => {
            let prompt_tokens = body["messages"]
                .as_array()
                .map(|msgs| {
                    msgs.iter()
                        .map(|m| approx_tokens(&m["content"].to_string()))
                        .sum::<u64>()
                })
                .unwrap_or(0);
            let completion_tokens = approx_tokens(&reply);
            (
                StatusCode::OK,
                json!({
                    "id": format!("mock-{index}"),
                    "object": "chat.completion",
                    "model": body["model"],
                    "choices": [{
                        "index": 0,
                        "message": {"role": "assistant", "content": reply},
                        "finish_reason": "stop"
                    }],
                    "usage": {
                        "prompt_tokens": prompt_tokens,
                        "completion_tokens": completion_tokens,
                        "total_tokens": prompt_tokens + completion_tokens
                    }
                }),
            )
        }
        MockReply::Error { status, error } => (
            StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            json!({ "error": error }),
        ),
    };
    state.log.push(RecordedRequest {
        body,
        served_by: Some(index),
        status: status.as_u16(),
    });
    (status, Json(response)).into_response()
}
