//! Minimal client for OpenAI-compatible `chat/completions` endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("endpoint {url} is unreachable: {source}")]
    Unreachable { url: String, source: reqwest::Error },
    #[error("request to {url} failed: {source}")]
    Transport { url: String, source: reqwest::Error },
    #[error("{url} returned HTTP {status}: {body}")]
    Status { url: String, status: u16, body: String },
    #[error("unexpected response shape from {url}: {message}")]
    Shape { url: String, message: String },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResponseFormat {
    #[serde(rename = "type")]
    pub kind: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f32,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_format: Option<ResponseFormat>,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ClientSettings {
    /// Base URL, e.g. `http://localhost:8000/v1`.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub temperature: f32,
    pub max_tokens: u32,
    pub json_response_format: bool,
    pub timeout: Duration,
}

#[derive(Debug, Clone)]
pub struct ChatClient {
    http: reqwest::Client,
    settings: ClientSettings,
}

impl ChatClient {
    pub fn new(settings: ClientSettings) -> Result<Self, ClientError> {
        let http = reqwest::Client::builder()
            .timeout(settings.timeout)
            .build()
            .map_err(|source| ClientError::Transport {
                url: settings.endpoint.clone(),
                source,
            })?;
        Ok(Self { http, settings })
    }

    pub fn endpoint(&self) -> &str {
        &self.settings.endpoint
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.settings.endpoint.trim_end_matches('/'))
    }

    fn authorized(&self, req: reqwest::RequestBuilder) -> reqwest::RequestBuilder {
        match &self.settings.api_key {
            Some(key) => req.bearer_auth(key),
            None => req,
        }
    }

    /// Succeeds if the server answers `GET models` at all. Connection
    /// failures and timeouts are reported as unreachable.
    pub async fn health(&self) -> Result<(), ClientError> {
        let url = self.url("models");
        let resp = self
            .authorized(self.http.get(&url))
            .send()
            .await
            .map_err(|source| ClientError::Unreachable { url: url.clone(), source })?;
        if resp.status().is_server_error() {
            return Err(ClientError::Status {
                url,
                status: resp.status().as_u16(),
                body: resp.text().await.unwrap_or_default(),
            });
        }
        Ok(())
    }

    pub fn request_for(&self, prompt: &str) -> ChatRequest {
        ChatRequest {
            model: self.settings.model.clone(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.to_string(),
            }],
            temperature: self.settings.temperature,
            max_tokens: self.settings.max_tokens,
            response_format: self.settings.json_response_format.then(|| ResponseFormat {
                kind: "json_object".into(),
            }),
        }
    }

    /// Sends one user message and returns the assistant's content.
    pub async fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let url = self.url("chat/completions");
        let resp = self
            .authorized(self.http.post(&url))
            .json(&self.request_for(prompt))
            .send()
            .await
            .map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ClientError::Status {
                url,
                status: status.as_u16(),
                body: resp.text().await.unwrap_or_default(),
            });
        }
        let body: ChatResponse = resp.json().await.map_err(|e| ClientError::Shape {
            url: url.clone(),
            message: e.to_string(),
        })?;
        body.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ClientError::Shape {
                url,
                message: "no choices[0].message.content".into(),
            })
    }
}
