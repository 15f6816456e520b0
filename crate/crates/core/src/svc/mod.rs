//! Clients for the five external model services: generation, NLI, embedding,
//! translation, and judge.
//!
//! A [`Client`] wraps any [`RawService`] transport (HTTP or a deterministic
//! mock) with per-endpoint in-flight limiting and retry-with-backoff. The
//! request body is serialized once per logical call, so every retry resends
//! byte-identical content.

pub mod http;
pub mod mock;

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{
    build_judge_fluency_prompt, build_judge_relevance_prompt, PromptText, Role,
};

#[derive(Debug, Error)]
pub enum SvcError {
    #[error("transient service failure: {0}")]
    Transient(String),
    #[error("permanent request error: {0}")]
    Permanent(String),
    #[error("service unavailable after {attempts} attempts: {last}")]
    ServiceUnavailable { attempts: u32, last: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("unparsable judge rating: {raw:?}")]
    JudgeParse { raw: String },
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
}

/// Endpoint configuration shared by all five services.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServiceEndpoint {
    pub base_url: String,
    pub model_name: String,
    /// Request timeout in seconds; must be positive.
    pub timeout_s: f64,
    pub max_retries: u32,
    /// Concurrent request cap per endpoint; must be at least 1.
    pub max_inflight: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
}

impl Default for ServiceEndpoint {
    fn default() -> Self {
        ServiceEndpoint {
            base_url: "http://localhost:8080".into(),
            model_name: "default".into(),
            timeout_s: 30.0,
            max_retries: 5,
            max_inflight: 4,
            api_key: None,
        }
    }
}

/// Entail/neutral/contradict probabilities, each in [0, 1], summing to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NliScores {
    pub entail: f64,
    pub neutral: f64,
    pub contradict: f64,
}

impl NliScores {
    /// Validate ranges, renormalizing (with a warning) when the sum is off.
    pub fn normalized(self) -> Result<NliScores, SvcError> {
        let parts = [self.entail, self.neutral, self.contradict];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(SvcError::Protocol(format!("bad NLI probabilities: {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if sum <= 0.0 {
            return Err(SvcError::Protocol("NLI probabilities sum to zero".into()));
        }
        if (sum - 1.0).abs() > 1e-6 {
            log::warn!("NLI probabilities sum to {sum}; renormalizing");
            return Ok(NliScores {
                entail: self.entail / sum,
                neutral: self.neutral / sum,
                contradict: self.contradict / sum,
            });
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            temperature: 0.7,
            max_tokens: 512,
            stop: Vec::new(),
        }
    }
}

/// The single-purpose routes of the wire protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Chat,
    Nli,
    Embed,
    Translate,
}

impl Route {
    pub fn path(self) -> &'static str {
        match self {
            Route::Chat => "/v1/chat/completions",
            Route::Nli => "/v1/nli",
            Route::Embed => "/v1/embeddings",
            Route::Translate => "/v1/translate",
        }
    }
}

/// A fully serialized request; retries resend these exact bytes.
#[derive(Debug, Clone)]
pub struct RawRequest {
    pub route: Route,
    pub body: String,
}

#[derive(Debug, Clone)]
pub enum ServiceResponse {
    Text(String),
    Nli(NliScores),
    Vectors(Vec<Vec<f32>>),
}

/// A transport: one attempt, no retry logic.
pub trait RawService: Send + Sync {
    fn call(&self, request: &RawRequest) -> Result<ServiceResponse, SvcError>;
}

/// Exponential backoff with full jitter.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: f64,
    pub cap: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base: Duration::from_millis(500),
            factor: 2.0,
            cap: Duration::from_secs(30),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// No sleeping; used by tests and offline mocks.
    pub fn immediate() -> Self {
        RetryPolicy {
            base: Duration::ZERO,
            factor: 1.0,
            cap: Duration::ZERO,
            jitter: false,
        }
    }

    fn sleep(&self, attempt: u32) {
        if self.base.is_zero() {
            return;
        }
        let exp = self.base.as_secs_f64() * self.factor.powi(attempt as i32 - 1);
        let ceiling = exp.min(self.cap.as_secs_f64());
        let duration = if self.jitter {
            rand::thread_rng().gen_range(0.0..=ceiling)
        } else {
            ceiling
        };
        std::thread::sleep(Duration::from_secs_f64(duration));
    }
}

/// Counting semaphore bounding in-flight requests per endpoint.
#[derive(Debug)]
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore poisoned");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("semaphore poisoned");
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().expect("semaphore poisoned");
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeFacet {
    Fluency,
    Relevance,
}

/// Inputs the judge prompts need.
#[derive(Debug, Clone)]
pub struct JudgeInput<'a> {
    pub question: &'a str,
    pub answer: &'a str,
    pub paragraph: &'a str,
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    stop: Vec<&'a str>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct NliBody<'a> {
    premise: &'a str,
    hypothesis: &'a str,
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    model: &'a str,
    texts: &'a [String],
}

#[derive(Serialize)]
struct TranslateBody<'a> {
    text: &'a str,
    source_lang: &'a str,
    target_lang: &'a str,
}

/// A shareable service handle: transport + endpoint + retry + in-flight cap.
pub struct Client {
    endpoint: ServiceEndpoint,
    raw: Arc<dyn RawService>,
    limiter: Semaphore,
    retry: RetryPolicy,
}

impl Client {
    pub fn new(
        endpoint: ServiceEndpoint,
        raw: Arc<dyn RawService>,
        retry: RetryPolicy,
    ) -> Result<Self, SvcError> {
        if endpoint.timeout_s <= 0.0 {
            return Err(SvcError::InvalidInput("timeout must be positive"));
        }
        if endpoint.max_inflight < 1 {
            return Err(SvcError::InvalidInput("max_inflight must be >= 1"));
        }
        let limiter = Semaphore::new(endpoint.max_inflight);
        Ok(Client {
            endpoint,
            raw,
            limiter,
            retry,
        })
    }

    pub fn endpoint(&self) -> &ServiceEndpoint {
        &self.endpoint
    }

    fn call(&self, request: &RawRequest) -> Result<ServiceResponse, SvcError> {
        let _permit = self.limiter.acquire();
        let mut attempt: u32 = 0;
        loop {
            match self.raw.call(request) {
                Ok(response) => {
                    if attempt > 0 {
                        log::info!("{:?} request succeeded after {attempt} retries", request.route);
                    }
                    return Ok(response);
                }
                Err(SvcError::Transient(message)) => {
                    if attempt >= self.endpoint.max_retries {
                        return Err(SvcError::ServiceUnavailable {
                            attempts: attempt + 1,
                            last: message,
                        });
                    }
                    attempt += 1;
                    log::warn!(
                        "{:?} request failed ({message}); retry {attempt}/{}",
                        request.route,
                        self.endpoint.max_retries
                    );
                    self.retry.sleep(attempt);
                }
                Err(other) => return Err(other),
            }
        }
    }

    /// Completion text for a prompt.
    pub fn generate(&self, prompt: &PromptText, params: &GenParams) -> Result<String, SvcError> {
        if prompt.messages.is_empty() || prompt.messages.iter().all(|m| m.content.is_empty()) {
            return Err(SvcError::InvalidInput("prompt must be non-empty"));
        }
        let body = ChatBody {
            model: &self.endpoint.model_name,
            messages: prompt
                .messages
                .iter()
                .map(|m| ChatMessage {
                    role: match m.role {
                        Role::System => "system",
                        Role::User => "user",
                    },
                    content: &m.content,
                })
                .collect(),
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            stop: params.stop.iter().map(|s| s.as_str()).collect(),
        };
        let request = RawRequest {
            route: Route::Chat,
            body: serde_json::to_string(&body).expect("chat body serializes"),
        };
        match self.call(&request)? {
            ServiceResponse::Text(text) => Ok(text),
            _ => Err(SvcError::Protocol("expected text response".into())),
        }
    }

    /// Entailment probabilities of `hypothesis` given `premise`.
    pub fn nli(&self, premise: &str, hypothesis: &str) -> Result<NliScores, SvcError> {
        if premise.is_empty() || hypothesis.is_empty() {
            return Err(SvcError::InvalidInput("premise and hypothesis must be non-empty"));
        }
        let body = NliBody { premise, hypothesis };
        let request = RawRequest {
            route: Route::Nli,
            body: serde_json::to_string(&body).expect("nli body serializes"),
        };
        match self.call(&request)? {
            ServiceResponse::Nli(scores) => scores.normalized(),
            _ => Err(SvcError::Protocol("expected NLI response".into())),
        }
    }

    /// One fixed-dimension vector per input text, order-preserving.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, SvcError> {
        if texts.is_empty() {
            return Err(SvcError::InvalidInput("texts must be non-empty"));
        }
        let body = EmbedBody {
            model: &self.endpoint.model_name,
            texts,
        };
        let request = RawRequest {
            route: Route::Embed,
            body: serde_json::to_string(&body).expect("embed body serializes"),
        };
        let vectors = match self.call(&request)? {
            ServiceResponse::Vectors(vectors) => vectors,
            _ => return Err(SvcError::Protocol("expected vectors response".into())),
        };
        if vectors.len() != texts.len() {
            return Err(SvcError::Protocol(format!(
                "{} vectors for {} texts",
                vectors.len(),
                texts.len()
            )));
        }
        if let Some(first) = vectors.first() {
            let dim = first.len();
            if vectors.iter().any(|v| v.len() != dim) {
                return Err(SvcError::Protocol("inconsistent vector dimensions in batch".into()));
            }
        }
        Ok(vectors)
    }

    /// Translate text between languages; same-language calls are the identity
    /// and never hit the service.
    pub fn translate(
        &self,
        text: &str,
        source_lang: &str,
        target_lang: &str,
    ) -> Result<String, SvcError> {
        if source_lang == target_lang {
            return Ok(text.to_string());
        }
        let body = TranslateBody {
            text,
            source_lang,
            target_lang,
        };
        let request = RawRequest {
            route: Route::Translate,
            body: serde_json::to_string(&body).expect("translate body serializes"),
        };
        match self.call(&request)? {
            ServiceResponse::Text(text) => Ok(text),
            _ => Err(SvcError::Protocol("expected text response".into())),
        }
    }

    /// Rate one facet of an example on the 0-2 scale via the judge templates.
    pub fn judge(&self, input: &JudgeInput<'_>, facet: JudgeFacet) -> Result<u8, SvcError> {
        let prompt = match facet {
            JudgeFacet::Fluency => build_judge_fluency_prompt(input.question),
            JudgeFacet::Relevance => {
                build_judge_relevance_prompt(input.paragraph, input.question, input.answer)
            }
        };
        let params = GenParams {
            temperature: 0.0,
            max_tokens: 16,
            stop: Vec::new(),
        };
        let raw = self.generate(&prompt, &params)?;
        parse_rating(&raw)
    }
}

/// Extract a 0-2 rating from judge output. The `(0-2)` scale markers are
/// removed first; the last remaining integer is the rating.
pub fn parse_rating(raw: &str) -> Result<u8, SvcError> {
    let cleaned = raw.replace("(0-2)", "");
    let mut last: Option<i64> = None;
    let mut digits = String::new();
    for c in cleaned.chars().chain(std::iter::once(' ')) {
        if c.is_ascii_digit() {
            digits.push(c);
        } else if !digits.is_empty() {
            last = digits.parse().ok();
            digits.clear();
        }
    }
    match last {
        Some(r @ 0..=2) => Ok(r as u8),
        _ => Err(SvcError::JudgeParse {
            raw: raw.to_string(),
        }),
    }
}

/// The five clients a pipeline needs.
pub struct ServiceSet {
    pub generation: Client,
    pub nli: Client,
    pub embedding: Client,
    pub translation: Client,
    pub judge: Client,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svc::mock::{CountingService, FlakyService, ScriptedChat};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn endpoint(max_retries: u32, max_inflight: usize) -> ServiceEndpoint {
        ServiceEndpoint {
            max_retries,
            max_inflight,
            ..Default::default()
        }
    }

    fn prompt(text: &str) -> PromptText {
        PromptText::user(text.to_string())
    }

    struct AlwaysFails;
    impl RawService for AlwaysFails {
        fn call(&self, _request: &RawRequest) -> Result<ServiceResponse, SvcError> {
            Err(SvcError::Transient("injected".into()))
        }
    }

    struct PermanentFails;
    impl RawService for PermanentFails {
        fn call(&self, _request: &RawRequest) -> Result<ServiceResponse, SvcError> {
            Err(SvcError::Permanent("HTTP 400".into()))
        }
    }

    #[test]
    fn scripted_chat_returns_table_entry() {
        let p = prompt("Question: X");
        let mut chat = ScriptedChat::new();
        chat.script(&p, "Question: X => Answer: Y");
        let client = Client::new(
            endpoint(2, 1),
            Arc::new(chat),
            RetryPolicy::immediate(),
        )
        .unwrap();
        let out = client.generate(&p, &GenParams::default()).unwrap();
        assert_eq!(out, "Question: X => Answer: Y");
    }

    #[test]
    fn retries_then_succeeds() {
        let p = prompt("hello");
        let mut chat = ScriptedChat::new();
        chat.script(&p, "world");
        let flaky = FlakyService::new(Arc::new(chat), 2);
        let calls = flaky.calls();
        let client = Client::new(
            endpoint(5, 1),
            Arc::new(flaky),
            RetryPolicy::immediate(),
        )
        .unwrap();
        let out = client.generate(&p, &GenParams::default()).unwrap();
        assert_eq!(out, "world");
        assert_eq!(calls.load(Ordering::SeqCst), 3, "two failures plus one success");
    }

    #[test]
    fn exhausted_retries_is_service_unavailable() {
        let client = Client::new(
            endpoint(5, 1),
            Arc::new(AlwaysFails),
            RetryPolicy::immediate(),
        )
        .unwrap();
        let err = client.generate(&prompt("x"), &GenParams::default()).unwrap_err();
        match err {
            SvcError::ServiceUnavailable { attempts, .. } => assert_eq!(attempts, 6),
            other => panic!("expected ServiceUnavailable, got {other}"),
        }
    }

    #[test]
    fn permanent_errors_do_not_retry() {
        let client = Client::new(
            endpoint(5, 1),
            Arc::new(PermanentFails),
            RetryPolicy::immediate(),
        )
        .unwrap();
        let err = client.generate(&prompt("x"), &GenParams::default()).unwrap_err();
        assert!(matches!(err, SvcError::Permanent(_)));
    }

    #[test]
    fn empty_prompt_is_rejected() {
        let client = Client::new(
            endpoint(0, 1),
            Arc::new(AlwaysFails),
            RetryPolicy::immediate(),
        )
        .unwrap();
        let empty = PromptText { messages: vec![] };
        assert!(matches!(
            client.generate(&empty, &GenParams::default()),
            Err(SvcError::InvalidInput(_))
        ));
    }

    #[test]
    fn retried_requests_are_byte_identical() {
        let p = prompt("repeatable");
        let mut chat = ScriptedChat::new();
        chat.script(&p, "ok");
        let flaky = FlakyService::new(Arc::new(chat), 3);
        let bodies = flaky.bodies();
        let client = Client::new(
            endpoint(5, 1),
            Arc::new(flaky),
            RetryPolicy::immediate(),
        )
        .unwrap();
        client.generate(&p, &GenParams::default()).unwrap();
        let seen = bodies.lock().unwrap();
        assert_eq!(seen.len(), 4);
        assert!(seen.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn inflight_cap_is_enforced() {
        struct Slow(AtomicUsize, AtomicUsize);
        impl RawService for Slow {
            fn call(&self, _request: &RawRequest) -> Result<ServiceResponse, SvcError> {
                let now = self.0.fetch_add(1, Ordering::SeqCst) + 1;
                self.1.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(5));
                self.0.fetch_sub(1, Ordering::SeqCst);
                Ok(ServiceResponse::Text("ok".into()))
            }
        }
        let slow = Arc::new(Slow(AtomicUsize::new(0), AtomicUsize::new(0)));
        let client = Arc::new(
            Client::new(endpoint(0, 2), slow.clone(), RetryPolicy::immediate()).unwrap(),
        );
        let mut handles = Vec::new();
        for i in 0..12 {
            let client = client.clone();
            handles.push(std::thread::spawn(move || {
                client
                    .generate(&prompt(&format!("p{i}")), &GenParams::default())
                    .unwrap();
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert!(slow.1.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn counting_service_observes_bodies() {
        let p = prompt("count me");
        let mut chat = ScriptedChat::new();
        chat.script(&p, "done");
        let counting = CountingService::new(Arc::new(chat));
        let calls = counting.calls();
        let client = Client::new(
            endpoint(0, 1),
            Arc::new(counting),
            RetryPolicy::immediate(),
        )
        .unwrap();
        client.generate(&p, &GenParams::default()).unwrap();
        client.generate(&p, &GenParams::default()).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn rating_parser_accepts_labeled_scores() {
        assert_eq!(parse_rating("Relevance (0-2): 2").unwrap(), 2);
        assert_eq!(parse_rating("Fluency (0-2): 0").unwrap(), 0);
        assert_eq!(parse_rating("1").unwrap(), 1);
    }

    #[test]
    fn rating_parser_rejects_out_of_range_and_missing() {
        assert!(matches!(parse_rating("maybe 3"), Err(SvcError::JudgeParse { .. })));
        assert!(matches!(parse_rating("Relevance (0-2):"), Err(SvcError::JudgeParse { .. })));
        assert!(matches!(parse_rating("no digits here"), Err(SvcError::JudgeParse { .. })));
    }

    #[test]
    fn nli_scores_normalize_with_warning() {
        let scores = NliScores {
            entail: 0.6,
            neutral: 0.2,
            contradict: 0.1,
        };
        let normalized = scores.normalized().unwrap();
        let sum = normalized.entail + normalized.neutral + normalized.contradict;
        assert!((sum - 1.0).abs() < 1e-12);
        assert!((normalized.entail - 0.6 / 0.9).abs() < 1e-12);
    }
}
