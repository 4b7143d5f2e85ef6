//! Model endpoints: the wire format, an HTTP client, in-process responders and
//! a capturing wrapper used to audit every outbound byte.
//!
//! Wire format (request → response):
//!
//! ```text
//! POST <url>
//! {"model": "...", "messages": [{"role": "...", "content": "..."}], "max_tokens": 512}
//! → {"content": "...", "usage": {"prompt_tokens": 10, "completion_tokens": 5}}
//! ```

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmodel::estimate_tokens;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    pub fn prompt_tokens(&self) -> u64 {
        self.messages
            .iter()
            .map(|m| estimate_tokens(&m.content))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    #[serde(default)]
    pub usage: Option<Usage>,
}

/// Out-of-band context for a call. Never serialized onto the wire.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RequestMeta {
    pub session_id: Option<String>,
    pub tier: Option<u8>,
    pub task_index: Option<usize>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EndpointError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("upstream returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed upstream response: {0}")]
    Decode(String),
}

pub trait ModelEndpoint: Send + Sync {
    fn name(&self) -> &str;

    /// True when the endpoint runs inside the trusted perimeter with no
    /// network egress.
    fn is_local(&self) -> bool {
        false
    }

    fn complete(
        &self,
        req: &ChatRequest,
        meta: &RequestMeta,
    ) -> Result<ChatResponse, EndpointError>;
}

/// JSON-over-HTTP endpoint speaking the wire format above.
pub struct HttpEndpoint {
    name: String,
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpEndpoint {
    pub fn new(
        name: impl Into<String>,
        url: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, EndpointError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        Ok(Self {
            name: name.into(),
            url: url.into(),
            client,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl ModelEndpoint for HttpEndpoint {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(
        &self,
        req: &ChatRequest,
        _meta: &RequestMeta,
    ) -> Result<ChatResponse, EndpointError> {
        let resp = self
            .client
            .post(&self.url)
            .json(req)
            .send()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(EndpointError::Status {
                status: status.as_u16(),
                body: body.chars().take(512).collect(),
            });
        }
        serde_json::from_str(&body).map_err(|e| EndpointError::Decode(e.to_string()))
    }
}

type ResponderFn = dyn Fn(&ChatRequest) -> Result<String, EndpointError> + Send + Sync;

/// How an in-process endpoint produces its reply.
#[derive(Clone)]
pub enum Responder {
    /// Returns the last user message verbatim.
    Echo,
    /// Returns the first sentence of the last user message.
    FirstSentence,
    Fixed(String),
    Custom(Arc<ResponderFn>),
}

impl std::fmt::Debug for Responder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Echo => f.write_str("Echo"),
            Self::FirstSentence => f.write_str("FirstSentence"),
            Self::Fixed(s) => f.debug_tuple("Fixed").field(s).finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl Responder {
    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, EndpointError> + Send + Sync + 'static,
    {
        Self::Custom(Arc::new(f))
    }

    fn reply(&self, req: &ChatRequest) -> Result<String, EndpointError> {
        match self {
            Self::Echo => Ok(req.user_content().to_string()),
            Self::FirstSentence => Ok(first_sentence(req.user_content()).to_string()),
            Self::Fixed(s) => Ok(s.clone()),
            Self::Custom(f) => f(req),
        }
    }
}

pub fn first_sentence(text: &str) -> &str {
    let text = text.trim_start();
    match text.find(['.', '!', '?', '\n']) {
        Some(i) if text[i..].starts_with('\n') => &text[..i],
        Some(i) => &text[..=i],
        None => text,
    }
}

/// In-process endpoint. With `local = true` it stands in for an on-premise
/// model; otherwise it is a mock for a remote tier.
#[derive(Debug, Clone)]
pub struct MockEndpoint {
    name: String,
    responder: Responder,
    local: bool,
}

impl MockEndpoint {
    pub fn new(name: impl Into<String>, responder: Responder) -> Self {
        Self {
            name: name.into(),
            responder,
            local: false,
        }
    }

    pub fn local(name: impl Into<String>, responder: Responder) -> Self {
        Self {
            name: name.into(),
            responder,
            local: true,
        }
    }
}

impl ModelEndpoint for MockEndpoint {
    fn name(&self) -> &str {
        &self.name
    }

    fn is_local(&self) -> bool {
        self.local
    }

    fn complete(
        &self,
        req: &ChatRequest,
        _meta: &RequestMeta,
    ) -> Result<ChatResponse, EndpointError> {
        let content = self.responder.reply(req)?;
        Ok(ChatResponse {
            usage: Some(Usage {
                prompt_tokens: req.prompt_tokens(),
                completion_tokens: estimate_tokens(&content),
            }),
            content,
        })
    }
}

/// One captured outbound call: the exact serialized request body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Captured {
    pub endpoint: String,
    pub session_id: Option<String>,
    pub tier: Option<u8>,
    pub body: String,
}

/// Records every request body before forwarding it to the inner endpoint.
pub struct CaptureEndpoint {
    inner: Arc<dyn ModelEndpoint>,
    log: Mutex<Vec<Captured>>,
}

impl CaptureEndpoint {
    pub fn new(inner: Arc<dyn ModelEndpoint>) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn captured(&self) -> Vec<Captured> {
        self.log.lock().unwrap().clone()
    }

    pub fn captured_for(&self, session: &str) -> Vec<Captured> {
        self.log
            .lock()
            .unwrap()
            .iter()
            .filter(|c| c.session_id.as_deref() == Some(session))
            .cloned()
            .collect()
    }

    pub fn count(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    pub fn clear(&self) {
        self.log.lock().unwrap().clear();
    }
}

impl ModelEndpoint for CaptureEndpoint {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn is_local(&self) -> bool {
        self.inner.is_local()
    }

    fn complete(
        &self,
        req: &ChatRequest,
        meta: &RequestMeta,
    ) -> Result<ChatResponse, EndpointError> {
        let body = serde_json::to_string(req).expect("request serializes");
        self.log.lock().unwrap().push(Captured {
            endpoint: self.inner.name().to_string(),
            session_id: meta.session_id.clone(),
            tier: meta.tier,
            body,
        });
        self.inner.complete(req, meta)
    }
}

/// Counting semaphore bounding concurrent calls to one endpoint.
#[derive(Debug)]
pub struct Limiter {
    permits: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

impl Limiter {
    pub fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

/// Endpoint wrapper enforcing a concurrency limit.
pub struct Limited {
    inner: Arc<dyn ModelEndpoint>,
    limiter: Limiter,
}

impl Limited {
    pub fn new(inner: Arc<dyn ModelEndpoint>, max_concurrent: usize) -> Self {
        Self {
            inner,
            limiter: Limiter::new(max_concurrent),
        }
    }
}

impl ModelEndpoint for Limited {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn is_local(&self) -> bool {
        self.inner.is_local()
    }

    fn complete(
        &self,
        req: &ChatRequest,
        meta: &RequestMeta,
    ) -> Result<ChatResponse, EndpointError> {
        let _permit = self.limiter.acquire();
        self.inner.complete(req, meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn req(text: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage::system("sys"), ChatMessage::user(text)],
            max_tokens: 64,
        }
    }

    #[test]
    fn wire_format() {
        let json = serde_json::to_value(req("hi")).unwrap();
        assert_eq!(
            json,
            serde_json::json!({
                "model": "m",
                "messages": [{"role": "system", "content": "sys"}, {"role": "user", "content": "hi"}],
                "max_tokens": 64
            })
        );
        let resp: ChatResponse = serde_json::from_str(
            r#"{"content":"ok","usage":{"prompt_tokens":3,"completion_tokens":1}}"#,
        )
        .unwrap();
        assert_eq!(resp.usage.unwrap().completion_tokens, 1);
        let bare: ChatResponse = serde_json::from_str(r#"{"content":"ok"}"#).unwrap();
        assert!(bare.usage.is_none());
    }

    #[test]
    fn responders() {
        let m = MockEndpoint::new("m", Responder::FirstSentence);
        let r = m
            .complete(&req("First one. Second one."), &RequestMeta::default())
            .unwrap();
        assert_eq!(r.content, "First one.");
        assert_eq!(first_sentence("no stop here"), "no stop here");
        assert_eq!(first_sentence("line one\nline two."), "line one");
    }

    #[test]
    fn capture_records_body_and_meta() {
        let cap = CaptureEndpoint::new(Arc::new(MockEndpoint::new("t1", Responder::Echo)));
        let meta = RequestMeta {
            session_id: Some("s".into()),
            tier: Some(1),
            task_index: None,
        };
        cap.complete(&req("payload"), &meta).unwrap();
        let c = cap.captured_for("s");
        assert_eq!(c.len(), 1);
        assert!(c[0].body.contains("payload"));
        assert_eq!(c[0].tier, Some(1));
        assert!(cap.captured_for("other").is_empty());
    }

    #[test]
    fn limiter_bounds_concurrency() {
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let (l2, p2) = (live.clone(), peak.clone());
        let slow = MockEndpoint::new(
            "slow",
            Responder::custom(move |_| {
                let now = l2.fetch_add(1, Ordering::SeqCst) + 1;
                p2.fetch_max(now, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(20));
                l2.fetch_sub(1, Ordering::SeqCst);
                Ok("x".into())
            }),
        );
        let limited = Arc::new(Limited::new(Arc::new(slow), 2));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let l = limited.clone();
                std::thread::spawn(move || l.complete(&req("x"), &RequestMeta::default()).unwrap())
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
