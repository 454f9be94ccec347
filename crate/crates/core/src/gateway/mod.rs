//! Text-generation and embedding backends behind one retrying, rate-limited
//! gateway, plus prompt templates and vector similarity.

mod mock;
mod remote;
mod template;
mod vector;

use std::fmt;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use mock::{MockBackend, MockMode, ScriptedBackend, MOCK_EMBEDDING_DIM};
pub use remote::{RemoteBackend, RemoteConfig};
pub use template::{
    id_lines, render_prompt, single_line, Bindings, PromptFamily, PromptSet, PromptTemplate,
    TemplateError,
};
pub use vector::{cosine_similarity, EmbeddingVector, VectorError};

/// Appended to a prompt when a completion has to be requested again.
pub const REASK_MARKER: &str = "FORMAT REMINDER";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub seed: Option<u64>,
}

/// Failure reported by a backend implementation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    /// Worth retrying: timeouts, refused connections, 429 and 5xx.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend failure: {0}")]
    Fatal(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("{request_id}: prompt is empty")]
    EmptyPrompt { request_id: String },
    #[error("{request_id}: context overflow ({estimated} estimated tokens, limit {limit})")]
    ContextOverflow {
        request_id: String,
        estimated: usize,
        limit: usize,
    },
    #[error("{request_id}: failed after {attempts} attempt(s): {source}")]
    Backend {
        request_id: String,
        attempts: u32,
        #[source]
        source: BackendError,
    },
    #[error("{request_id}: embed needs at least one text")]
    EmptyInput { request_id: String },
    #[error("{request_id}: backend returned {found} vectors for {expected} texts")]
    CountMismatch {
        request_id: String,
        expected: usize,
        found: usize,
    },
    #[error("{request_id}: embedding dimension {found} differs from {expected}")]
    DimensionMismatch {
        request_id: String,
        expected: usize,
        found: usize,
    },
}

pub trait Backend: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Largest prompt accepted, in estimated tokens.
    fn context_limit_tokens(&self) -> usize;

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendError>;

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

/// Rough token count used for the context check: one token per four bytes.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_concurrency: usize,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub seed: Option<u64>,
    /// Texts per backend embedding call.
    pub embed_batch: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_concurrency: 4,
            max_output_tokens: 1024,
            temperature: 0.0,
            seed: Some(0),
            embed_batch: 128,
        }
    }
}

#[derive(Debug)]
struct Permits {
    available: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Shared handle to one backend. Safe to use from many threads; at most
/// `max_concurrency` requests are in flight at once.
#[derive(Debug, Clone)]
pub struct Gateway {
    inner: Arc<Inner>,
}

#[derive(Debug)]
struct Inner {
    backend: Arc<dyn Backend>,
    config: GatewayConfig,
    permits: Permits,
    next_id: AtomicU64,
    dimension: OnceLock<usize>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, config: GatewayConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                permits: Permits::new(config.max_concurrency),
                backend,
                config,
                next_id: AtomicU64::new(1),
                dimension: OnceLock::new(),
            }),
        }
    }

    /// Deterministic mock backend with default settings.
    pub fn mock(seed: u64) -> Self {
        Self::new(Arc::new(MockBackend::new(seed)), GatewayConfig::default())
    }

    pub fn backend_name(&self) -> &str {
        self.inner.backend.name()
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.inner.config
    }

    /// A request carrying the configured decoding defaults.
    pub fn request(&self, prompt: impl Into<String>) -> GenerationRequest {
        let c = &self.inner.config;
        GenerationRequest {
            prompt: prompt.into(),
            max_output_tokens: c.max_output_tokens,
            temperature: c.temperature,
            seed: c.seed,
        }
    }

    fn next_request_id(&self) -> String {
        format!(
            "req-{:06}",
            self.inner.next_id.fetch_add(1, Ordering::Relaxed)
        )
    }

    fn with_retries<T>(
        &self,
        request_id: &str,
        mut call: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, GatewayError> {
        let cfg = &self.inner.config;
        let mut attempts = 0;
        loop {
            attempts += 1;
            let result = {
                let _permit = self.inner.permits.acquire();
                call()
            };
            match result {
                Ok(v) => return Ok(v),
                Err(BackendError::Transient(msg)) if attempts <= cfg.max_retries => {
                    let delay = cfg.base_delay.saturating_mul(1 << (attempts - 1).min(16));
                    log::warn!(
                        "{request_id}: attempt {attempts} failed ({msg}); retrying in {delay:?}"
                    );
                    thread::sleep(delay.min(Duration::from_secs(60)));
                }
                Err(source) => {
                    return Err(GatewayError::Backend {
                        request_id: request_id.to_string(),
                        attempts,
                        source,
                    })
                }
            }
        }
    }

    pub fn generate(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        let request_id = self.next_request_id();
        if request.prompt.trim().is_empty() {
            return Err(GatewayError::EmptyPrompt { request_id });
        }
        let limit = self.inner.backend.context_limit_tokens();
        let estimated = estimate_tokens(&request.prompt);
        if estimated > limit {
            return Err(GatewayError::ContextOverflow {
                request_id,
                estimated,
                limit,
            });
        }
        log::debug!("{request_id}: generate ({estimated} tokens)");
        self.with_retries(&request_id, || self.inner.backend.complete(request))
    }

    /// Runs the requests on up to `max_concurrency` workers. Results come
    /// back in request order.
    pub fn generate_many(
        &self,
        requests: &[GenerationRequest],
    ) -> Vec<Result<String, GatewayError>> {
        let workers = self.inner.config.max_concurrency.max(1).min(requests.len());
        if workers <= 1 {
            return requests.iter().map(|r| self.generate(r)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<String, GatewayError>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= requests.len() {
                        break;
                    }
                    let out = self.generate(&requests[i]);
                    *slots[i].lock().unwrap() = Some(out);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("every slot is filled"))
            .collect()
    }

    /// One vector per text, in input order, all of the backend's dimension.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let request_id = self.next_request_id();
        if texts.is_empty() {
            return Err(GatewayError::EmptyInput { request_id });
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.inner.config.embed_batch.max(1)) {
            let vectors = self.with_retries(&request_id, || self.inner.backend.embed(chunk))?;
            if vectors.len() != chunk.len() {
                return Err(GatewayError::CountMismatch {
                    request_id,
                    expected: chunk.len(),
                    found: vectors.len(),
                });
            }
            for v in vectors {
                let expected = *self.inner.dimension.get_or_init(|| v.len());
                if v.len() != expected || expected == 0 {
                    return Err(GatewayError::DimensionMismatch {
                        request_id,
                        expected,
                        found: v.len(),
                    });
                }
                out.push(EmbeddingVector::new(v));
            }
        }
        Ok(out)
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        Ok(self.embed(&[text.to_string()])?.pop().unwrap())
    }
}
