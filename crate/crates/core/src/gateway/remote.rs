//! Chat-completions style HTTP backend.
//!
//! * `POST {endpoint}/chat/completions` with
//!   `{"model", "messages": [{"role": "user", "content"}], "max_tokens", "temperature", "seed"?}`,
//!   answered by `{"choices": [{"message": {"content"}}]}`.
//! * `POST {endpoint}/embeddings` with `{"model", "input": [..]}`, answered by
//!   `{"data": [{"index", "embedding": [..]}]}`.
//!
//! The bearer token is read from the environment variable named in the
//! config and is never written anywhere.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, BackendError, GenerationRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub embedding_model: String,
    pub auth_env: String,
    pub timeout_secs: u64,
    pub context_tokens: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080/v1".into(),
            model: "mixtral-8x7b-instruct".into(),
            embedding_model: "embed".into(),
            auth_env: "REVIEWLENS_API_KEY".into(),
            timeout_secs: 120,
            context_tokens: 32_768,
        }
    }
}

#[derive(Debug)]
pub struct RemoteBackend {
    config: RemoteConfig,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let token = std::env::var(&config.auth_env)
            .ok()
            .filter(|t| !t.is_empty());
        if token.is_none() {
            log::warn!(
                "{} is not set; requests to {} are sent without authorization",
                config.auth_env,
                config.endpoint
            );
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| BackendError::Fatal(e.to_string()))?;
        Ok(Self {
            config,
            token,
            client,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    fn post<T: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &serde_json::Value,
    ) -> Result<T, BackendError> {
        let mut req = self.client.post(self.url(path)).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() || e.is_connect() || e.is_request() {
                BackendError::Transient(e.to_string())
            } else {
                BackendError::Fatal(e.to_string())
            }
        })?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(BackendError::Fatal(format!("HTTP {status}: {text}")));
        }
        resp.json::<T>()
            .map_err(|e| BackendError::Fatal(format!("unexpected response body: {e}")))
    }
}

impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn context_limit_tokens(&self) -> usize {
        self.config.context_tokens
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "max_tokens": request.max_output_tokens,
            "temperature": request.temperature,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let resp: ChatResponse = self.post("chat/completions", &body)?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| BackendError::Fatal("response has no choices".into()))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = json!({ "model": self.config.embedding_model, "input": texts });
        let resp: EmbeddingResponse = self.post("embeddings", &body)?;
        let mut items: Vec<(usize, Vec<f64>)> = resp
            .data
            .into_iter()
            .enumerate()
            .map(|(i, item)| (item.index.unwrap_or(i), item.embedding))
            .collect();
        items.sort_by_key(|(i, _)| *i);
        Ok(items.into_iter().map(|(_, v)| v).collect())
    }
}
