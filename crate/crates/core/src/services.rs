//! Contracts for the external model services (paraphrase LLM, text-to-image
//! generator, VQA model), their HTTP+JSON adapters, retry policy and the
//! bounded-parallel executor every stage uses to call them.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("request timed out")]
    Timeout,
    #[error("service returned HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("transport error: {0}")]
    Transport(String),
}

impl ClientError {
    /// Timeouts, overload (429), server errors and transport failures are
    /// worth another attempt; everything else is final.
    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Timeout | ClientError::Transport(_) => true,
            ClientError::Status { code, .. } => *code == 429 || *code >= 500,
            ClientError::Malformed(_) => false,
        }
    }

    /// Short, fixed-vocabulary tag safe to embed in journals.
    pub fn kind(&self) -> &'static str {
        match self {
            ClientError::Timeout => "timeout",
            ClientError::Status { code, .. } if *code >= 500 => "server_error",
            ClientError::Status { code: 429, .. } => "overloaded",
            ClientError::Status { .. } => "rejected",
            ClientError::Malformed(_) => "malformed",
            ClientError::Transport(_) => "transport",
        }
    }
}

/// Bounded exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Extra attempts after the first one.
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, base_delay_ms: 250, max_delay_ms: 8_000 }
    }
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy { max_retries, base_delay_ms: 0, max_delay_ms: 0 }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }

    /// Run `call` until it succeeds, fails with a non-retryable error or the
    /// retry budget is spent. Returns the outcome and the number of attempts.
    pub fn run<T>(&self, mut call: impl FnMut(u32) -> Result<T, ClientError>) -> (Result<T, ClientError>, u32) {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match call(attempt) {
                Ok(v) => return (Ok(v), attempt),
                Err(e) if e.is_retryable() && attempt <= self.max_retries => {
                    log::debug!("attempt {attempt} failed ({e}); retrying");
                    let delay = self.delay(attempt);
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                }
                Err(e) => return (Err(e), attempt),
            }
        }
    }
}

/// Map `f` over `items` with at most `max_parallel` calls in flight. Results
/// come back in input order regardless of completion order.
pub fn bounded_map<T, R, F>(items: &[T], max_parallel: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = max_parallel.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= items.len() {
                    break;
                }
                let out = f(idx, &items[idx]);
                slots.lock().expect("result slots poisoned")[idx] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|slot| slot.expect("every item produces a result"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseRequest {
    pub system_instruction: String,
    pub prompt: String,
    pub n_variants: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseResponse {
    pub variants: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaRequest {
    pub image_ref: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaResponse {
    pub answer: String,
}

pub trait ParaphraseClient: Sync {
    fn paraphrase(&self, request: &ParaphraseRequest) -> Result<ParaphraseResponse, ClientError>;
}

pub trait GenerationClient: Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, ClientError>;
}

pub trait VqaClient: Sync {
    fn ask(&self, request: &VqaRequest) -> Result<VqaResponse, ClientError>;
}

impl<C: ParaphraseClient + ?Sized> ParaphraseClient for &C {
    fn paraphrase(&self, request: &ParaphraseRequest) -> Result<ParaphraseResponse, ClientError> {
        (**self).paraphrase(request)
    }
}

impl<C: GenerationClient + ?Sized> GenerationClient for &C {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        (**self).generate(request)
    }
}

impl<C: VqaClient + ?Sized> VqaClient for &C {
    fn ask(&self, request: &VqaRequest) -> Result<VqaResponse, ClientError> {
        (**self).ask(request)
    }
}

/// Where a service lives and how to authenticate against it.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Endpoint {
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

impl Endpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Endpoint { url: url.into(), auth_token: None, timeout_secs: default_timeout_secs() }
    }
}

/// JSON-over-HTTP client for any of the three service contracts.
pub struct HttpService {
    agent: ureq::Agent,
    endpoint: Endpoint,
}

impl HttpService {
    pub fn new(endpoint: Endpoint) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(endpoint.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        HttpService { agent, endpoint }
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, ClientError> {
        let mut request = self.agent.post(&self.endpoint.url);
        if let Some(token) = &self.endpoint.auth_token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request.send_json(body).map_err(map_ureq_error)?;
        let code = response.status().as_u16();
        if !(200..300).contains(&code) {
            let body = response.body_mut().read_to_string().unwrap_or_default();
            return Err(ClientError::Status { code, body });
        }
        response
            .body_mut()
            .read_json::<Resp>()
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => ClientError::Timeout,
                other => ClientError::Malformed(other.to_string()),
            })
    }
}

fn map_ureq_error(err: ureq::Error) -> ClientError {
    match err {
        ureq::Error::Timeout(_) => ClientError::Timeout,
        ureq::Error::StatusCode(code) => ClientError::Status { code, body: String::new() },
        other => ClientError::Transport(other.to_string()),
    }
}

impl ParaphraseClient for HttpService {
    fn paraphrase(&self, request: &ParaphraseRequest) -> Result<ParaphraseResponse, ClientError> {
        self.post(request)
    }
}

impl GenerationClient for HttpService {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
        let response: GenerationResponse = self.post(request)?;
        if response.image_ref.trim().is_empty() {
            return Err(ClientError::Malformed("empty image_ref".into()));
        }
        Ok(response)
    }
}

impl VqaClient for HttpService {
    fn ask(&self, request: &VqaRequest) -> Result<VqaResponse, ClientError> {
        self.post(request)
    }
}

/// Deterministic offline stand-ins used by `--dry-run`. Answers are a pure
/// function of the request, so repeated runs agree byte for byte.
pub mod offline {
    use super::*;

    fn digest(parts: &[&str]) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for part in parts {
            hasher.update(part.as_bytes());
            hasher.update([0u8]);
        }
        hasher.finalize().into()
    }

    #[derive(Debug, Default, Clone, Copy)]
    pub struct OfflineGenerator;

    impl GenerationClient for OfflineGenerator {
        fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, ClientError> {
            let seed = request.seed.to_string();
            let d = digest(&[&request.prompt, &seed]);
            Ok(GenerationResponse { image_ref: format!("offline://{}.png", hex::encode(&d[..10])) })
        }
    }

    #[derive(Debug, Default, Clone, Copy)]
    pub struct OfflineVqa;

    impl VqaClient for OfflineVqa {
        fn ask(&self, request: &VqaRequest) -> Result<VqaResponse, ClientError> {
            let d = digest(&[&request.image_ref, &request.question]);
            let answer = if request.question.contains("male or female") {
                ["male", "female", "male"][usize::from(d[0]) % 3]
            } else {
                ["light", "medium", "black", "light"][usize::from(d[0]) % 4]
            };
            Ok(VqaResponse { answer: answer.to_string() })
        }
    }

    #[derive(Debug, Default, Clone, Copy)]
    pub struct OfflineParaphraser;

    impl ParaphraseClient for OfflineParaphraser {
        fn paraphrase(&self, request: &ParaphraseRequest) -> Result<ParaphraseResponse, ClientError> {
            const SCENES: [&str; 4] = [
                "in soft morning light",
                "with a blurred city background",
                "photographed from a low angle",
                "in a bright studio",
            ];
            let variants = (0..request.n_variants as usize)
                .map(|i| format!("{}, {}", request.prompt, SCENES[i % SCENES.len()]))
                .collect();
            Ok(ParaphraseResponse { variants })
        }
    }
}
