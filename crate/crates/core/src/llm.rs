//! Chat-completion client with a live HTTP backend and a scripted replay backend.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canonical::to_canonical_bytes;
use crate::cotf::ToolCall;
use crate::toolbox;

pub const API_KEY_ENV: &str = "DIVER_LLM_API_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("LLM configuration error: {0}")]
    Configuration(String),
    #[error("LLM provider error: {0}")]
    Provider(String),
    #[error("replay script exhausted after {consumed} responses")]
    ScriptExhausted { consumed: usize },
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("malformed tool call after repair: {error}")]
    MalformedToolCall { first_raw: String, second_raw: String, error: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    FreeText,
    ToolCallSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub response_format: ResponseFormat,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>, temperature: f64, response_format: ResponseFormat) -> Self {
        ChatRequest { messages, temperature, response_format }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        match self.messages.first() {
            None => Err(LlmError::InvalidRequest("no messages".into())),
            Some(m) if m.role != Role::System => {
                Err(LlmError::InvalidRequest("first message must be the system prompt".into()))
            }
            _ if !(0.0..=2.0).contains(&self.temperature) => {
                Err(LlmError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)))
            }
            _ => Ok(()),
        }
    }

    /// SHA-256 of the canonical JSON form of the request.
    pub fn fingerprint(&self) -> String {
        let value = serde_json::to_value(self).expect("requests serialize");
        hex::encode(Sha256::digest(to_canonical_bytes(&value)))
    }
}

/// Sampling temperatures per assistant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperatures {
    pub breakup: f64,
    pub lookup: f64,
    pub evidence: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Temperatures { breakup: 0.2, lookup: 0.7, evidence: 0.7 }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

/// One canned response, optionally pinned to a request fingerprint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptEntry {
    Positional(String),
    Keyed { fingerprint: Option<String>, response: String },
}

impl ScriptEntry {
    fn parts(&self) -> (Option<&str>, &str) {
        match self {
            ScriptEntry::Positional(r) => (None, r),
            ScriptEntry::Keyed { fingerprint, response } => (fingerprint.as_deref(), response),
        }
    }
}

/// Replay backend. Keyed entries answer requests with a matching fingerprint;
/// the rest are served in order. Running out is an error.
#[derive(Debug)]
pub struct ScriptedSession {
    entries: Vec<ScriptEntry>,
    used: Mutex<Vec<bool>>,
}

impl ScriptedSession {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        let used = Mutex::new(vec![false; entries.len()]);
        ScriptedSession { entries, used }
    }

    pub fn from_responses<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self::new(responses.into_iter().map(|r| ScriptEntry::Positional(r.into())).collect())
    }

    pub fn remaining(&self) -> usize {
        self.used.lock().expect("script lock").iter().filter(|u| !**u).count()
    }
}

impl ChatBackend for ScriptedSession {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut used = self.used.lock().expect("script lock");
        let fp = request.fingerprint();
        let keyed = self
            .entries
            .iter()
            .enumerate()
            .position(|(i, e)| !used[i] && e.parts().0 == Some(fp.as_str()));
        let slot = keyed.or_else(|| {
            self.entries.iter().enumerate().position(|(i, e)| !used[i] && e.parts().0.is_none())
        });
        match slot {
            Some(i) => {
                used[i] = true;
                Ok(self.entries[i].parts().1.to_string())
            }
            None => Err(LlmError::ScriptExhausted { consumed: used.iter().filter(|u| **u).count() }),
        }
    }
}

/// A replay script file: either a bare list of responses shared by every
/// question, or `{"sessions": {"<question_id>" | "*": [...]}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayScript {
    pub sessions: BTreeMap<String, Vec<ScriptEntry>>,
}

impl ReplayScript {
    pub fn from_json(bytes: &[u8]) -> Result<Self, LlmError> {
        let value: Json = serde_json::from_slice(bytes).map_err(|e| LlmError::Configuration(e.to_string()))?;
        if value.is_array() {
            let entries: Vec<ScriptEntry> =
                serde_json::from_value(value).map_err(|e| LlmError::Configuration(e.to_string()))?;
            return Ok(ReplayScript { sessions: BTreeMap::from([("*".to_string(), entries)]) });
        }
        serde_json::from_value(value).map_err(|e| LlmError::Configuration(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let bytes = std::fs::read(path)
            .map_err(|e| LlmError::Configuration(format!("cannot read script {}: {e}", path.display())))?;
        Self::from_json(&bytes)
    }

    /// A fresh session for `question_id`, falling back to the `*` session.
    pub fn session(&self, question_id: &str) -> Option<ScriptedSession> {
        self.sessions
            .get(question_id)
            .or_else(|| self.sessions.get("*"))
            .map(|entries| ScriptedSession::new(entries.clone()))
    }
}

/// OpenAI-style `/chat/completions` backend.
#[derive(Debug)]
pub struct HttpChatBackend {
    base_url: String,
    model: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl HttpChatBackend {
    /// Reads the key from the environment; fails before any network traffic.
    pub fn from_env(base_url: impl Into<String>, model: impl Into<String>) -> Result<Self, LlmError> {
        let api_key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| LlmError::Configuration(format!("{API_KEY_ENV} is not set")))?;
        Self::new(base_url, model, api_key)
    }

    pub fn new(base_url: impl Into<String>, model: impl Into<String>, api_key: String) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(180))
            .build()
            .map_err(|e| LlmError::Configuration(e.to_string()))?;
        Ok(HttpChatBackend { base_url: base_url.into(), model: model.into(), api_key, client })
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        if request.response_format == ResponseFormat::ToolCallSchema {
            body["response_format"] = serde_json::json!({"type": "json_object"});
        }
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let resp = self
            .client
            .post(url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| LlmError::Provider(e.to_string()))?;
        let status = resp.status();
        let payload: Json = resp.json().map_err(|e| LlmError::Provider(e.to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Provider(format!("HTTP {status}: {payload}")));
        }
        payload["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::Provider("response has no message content".into()))
    }
}

/// Counting semaphore capping in-flight requests.
#[derive(Debug)]
pub struct Limiter {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    pub fn new(cap: usize) -> Self {
        Limiter { slots: Mutex::new(cap.max(1)), freed: Condvar::new() }
    }

    fn acquire(&self) -> LimiterGuard<'_> {
        let mut slots = self.slots.lock().expect("limiter lock");
        while *slots == 0 {
            slots = self.freed.wait(slots).expect("limiter lock");
        }
        *slots -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().expect("limiter lock") += 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: usize,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_delay: Duration::from_millis(500) }
    }
}

/// One logged request/response pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub fingerprint: String,
    pub request: ChatRequest,
    pub response: String,
}

/// A model reply split into free-text thought and a validated tool call.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolReply {
    pub thought: String,
    pub call: ToolCall,
    pub raw: String,
}

pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    limiter: Arc<Limiter>,
    retry: RetryPolicy,
    log: Mutex<Vec<Exchange>>,
    calls: AtomicUsize,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self::with_limiter(backend, Arc::new(Limiter::new(4)))
    }

    pub fn with_limiter(backend: Arc<dyn ChatBackend>, limiter: Arc<Limiter>) -> Self {
        LlmClient { backend, limiter, retry: RetryPolicy::default(), log: Mutex::new(Vec::new()), calls: AtomicUsize::new(0) }
    }

    pub fn scripted(session: ScriptedSession) -> Self {
        Self::new(Arc::new(session))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn chat(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.validate()?;
        let _slot = self.limiter.acquire();
        let mut attempt = 0;
        let response = loop {
            attempt += 1;
            self.calls.fetch_add(1, Ordering::SeqCst);
            match self.backend.complete(request) {
                Ok(text) => break text,
                Err(LlmError::Provider(e)) if attempt < self.retry.attempts => {
                    let delay = self.retry.base_delay * 2u32.pow(attempt as u32 - 1);
                    tracing::warn!(attempt, "provider error, retrying in {delay:?}: {e}");
                    std::thread::sleep(delay);
                }
                Err(e) => return Err(e),
            }
        };
        self.log.lock().expect("log lock").push(Exchange {
            fingerprint: request.fingerprint(),
            request: request.clone(),
            response: response.clone(),
        });
        Ok(response)
    }

    /// Gets a validated tool call, re-prompting once with the validation error.
    pub fn structured_tool_call(&self, request: &ChatRequest) -> Result<ToolReply, LlmError> {
        if request.response_format != ResponseFormat::ToolCallSchema {
            return Err(LlmError::InvalidRequest("structured tool call needs tool_call_schema format".into()));
        }
        let first = self.chat(request)?;
        let error = match parse_tool_reply(&first) {
            Ok((thought, call)) => return Ok(ToolReply { thought, call, raw: first }),
            Err(e) => e,
        };
        let mut repair = request.clone();
        repair.messages.push(ChatMessage::assistant(first.clone()));
        repair.messages.push(ChatMessage::user(format!(
            "Your previous reply could not be used: {error}. Reply again with your thought followed by a single JSON object of the form {{\"tool\": <name>, \"args\": {{...}}}} using only the listed tools and their parameters."
        )));
        let second = self.chat(&repair)?;
        match parse_tool_reply(&second) {
            Ok((thought, call)) => Ok(ToolReply { thought, call, raw: second }),
            Err(e) => Err(LlmError::MalformedToolCall { first_raw: first, second_raw: second, error: e }),
        }
    }

    pub fn transcript(&self) -> Vec<Exchange> {
        self.log.lock().expect("log lock").clone()
    }

    /// The transcript as a positional replay session.
    pub fn to_script(&self) -> Vec<ScriptEntry> {
        self.transcript().into_iter().map(|e| ScriptEntry::Positional(e.response)).collect()
    }

    /// SHA-256 over the canonical transcript.
    pub fn transcript_hash(&self) -> String {
        let value = serde_json::to_value(self.transcript()).expect("transcript serializes");
        hex::encode(Sha256::digest(to_canonical_bytes(&value)))
    }
}

fn strip_fences(s: &str) -> String {
    s.lines().filter(|l| !l.trim_start().starts_with("```")).collect::<Vec<_>>().join("\n").trim().to_string()
}

/// Splits a reply into its thought and the embedded `{"tool", "args"}` object,
/// validating the call against the tool registry.
pub fn parse_tool_reply(raw: &str) -> Result<(String, ToolCall), String> {
    for (start, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Json>();
        let Some(Ok(Json::Object(obj))) = stream.next() else { continue };
        if !obj.contains_key("tool") {
            continue;
        }
        let end = start + stream.byte_offset();
        let mut thought_parts = vec![strip_fences(&raw[..start]), strip_fences(&raw[end..])];
        if let Some(t) = obj.get("thought").and_then(Json::as_str) {
            thought_parts.insert(0, t.trim().to_string());
        }
        let thought = thought_parts.into_iter().filter(|p| !p.is_empty()).collect::<Vec<_>>().join("\n");
        let tool = obj["tool"].as_str().ok_or("\"tool\" must be a string")?.to_string();
        let args = match obj.get("args") {
            None | Some(Json::Null) => BTreeMap::new(),
            Some(Json::Object(m)) => m.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            Some(_) => return Err("\"args\" must be an object".into()),
        };
        let call = ToolCall { tool, args };
        toolbox::validate_call(&call)?;
        return Ok((thought, call));
    }
    Err("no JSON object with a \"tool\" key found".into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cotf::ToolKind;

    fn req(format: ResponseFormat) -> ChatRequest {
        ChatRequest::new(vec![ChatMessage::system("sys"), ChatMessage::user("hi")], 0.7, format)
    }

    #[test]
    fn replay_serves_in_order_then_exhausts() {
        let client = LlmClient::scripted(ScriptedSession::from_responses(["first", "second"]));
        assert_eq!(client.chat(&req(ResponseFormat::FreeText)).unwrap(), "first");
        assert_eq!(client.chat(&req(ResponseFormat::FreeText)).unwrap(), "second");
        assert_eq!(
            client.chat(&req(ResponseFormat::FreeText)),
            Err(LlmError::ScriptExhausted { consumed: 2 })
        );
    }

    #[test]
    fn keyed_entries_match_fingerprints() {
        let r = req(ResponseFormat::FreeText);
        let session = ScriptedSession::new(vec![
            ScriptEntry::Positional("positional".into()),
            ScriptEntry::Keyed { fingerprint: Some(r.fingerprint()), response: "keyed".into() },
        ]);
        let client = LlmClient::scripted(session);
        assert_eq!(client.chat(&r).unwrap(), "keyed");
        assert_eq!(client.chat(&r).unwrap(), "positional");
    }

    #[test]
    fn live_backend_requires_key() {
        std::env::remove_var(API_KEY_ENV);
        let err = HttpChatBackend::from_env("http://127.0.0.1:9", "m").unwrap_err();
        assert!(matches!(err, LlmError::Configuration(_)));
    }

    #[test]
    fn invalid_requests_rejected() {
        let client = LlmClient::scripted(ScriptedSession::from_responses(["x"]));
        let bad = ChatRequest::new(vec![ChatMessage::user("no system")], 0.2, ResponseFormat::FreeText);
        assert!(matches!(client.chat(&bad), Err(LlmError::InvalidRequest(_))));
        let hot = ChatRequest::new(vec![ChatMessage::system("s")], 2.5, ResponseFormat::FreeText);
        assert!(matches!(client.chat(&hot), Err(LlmError::InvalidRequest(_))));
        assert_eq!(client.call_count(), 0);
    }

    #[test]
    fn none_call_parses() {
        let client = LlmClient::scripted(ScriptedSession::from_responses([r#"{"tool":"none","args":{}}"#]));
        let reply = client.structured_tool_call(&req(ResponseFormat::ToolCallSchema)).unwrap();
        assert_eq!(reply.call, ToolCall::new(ToolKind::None));
        assert_eq!(reply.thought, "");
    }

    #[test]
    fn unknown_param_triggers_one_repair() {
        let client = LlmClient::scripted(ScriptedSession::from_responses([
            r#"Check it. {"tool":"uniq_value","args":{"table":"frpm","colum":"Low Grade"}}"#,
            r#"Fixed. {"tool":"uniq_value","args":{"table":"frpm","column":"Low Grade"}}"#,
        ]));
        let reply = client.structured_tool_call(&req(ResponseFormat::ToolCallSchema)).unwrap();
        assert_eq!(reply.thought, "Fixed.");
        assert_eq!(reply.call.str_arg("column"), Some("Low Grade"));
        let log = client.transcript();
        assert_eq!(log.len(), 2);
        assert!(log[1].request.messages.last().unwrap().content.contains("colum"));
    }

    #[test]
    fn two_malformed_replies_fail() {
        let client = LlmClient::scripted(ScriptedSession::from_responses(["no json here", "{\"tool\": 3}"]));
        match client.structured_tool_call(&req(ResponseFormat::ToolCallSchema)) {
            Err(LlmError::MalformedToolCall { first_raw, second_raw, .. }) => {
                assert_eq!(first_raw, "no json here");
                assert_eq!(second_raw, "{\"tool\": 3}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn thought_can_live_inside_object() {
        let (thought, call) =
            parse_tool_reply(r#"```json
{"thought": "Low Grade may hold K", "tool": "value_in", "args": {"table": "frpm", "column": "Low Grade", "value": "K"}}
```"#)
            .unwrap();
        assert_eq!(thought, "Low Grade may hold K");
        assert_eq!(call.kind(), Some(ToolKind::ValueIn));
    }

    #[test]
    fn replay_twice_gives_identical_transcripts() {
        let script = ["a", "b", "c"];
        let run = || {
            let c = LlmClient::scripted(ScriptedSession::from_responses(script));
            for _ in 0..3 {
                c.chat(&req(ResponseFormat::FreeText)).unwrap();
            }
            c.transcript_hash()
        };
        assert_eq!(run(), run());
    }

    struct Flaky(AtomicUsize);
    impl ChatBackend for Flaky {
        fn complete(&self, _: &ChatRequest) -> Result<String, LlmError> {
            if self.0.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(LlmError::Provider("503".into()))
            } else {
                Ok("ok".into())
            }
        }
    }

    #[test]
    fn provider_errors_retry_three_times() {
        let client = LlmClient::new(Arc::new(Flaky(AtomicUsize::new(0))))
            .with_retry(RetryPolicy { attempts: 3, base_delay: Duration::from_millis(1) });
        assert_eq!(client.chat(&req(ResponseFormat::FreeText)).unwrap(), "ok");
        assert_eq!(client.call_count(), 3);
        let client = LlmClient::new(Arc::new(Flaky(AtomicUsize::new(0))))
            .with_retry(RetryPolicy { attempts: 2, base_delay: Duration::from_millis(1) });
        assert!(matches!(client.chat(&req(ResponseFormat::FreeText)), Err(LlmError::Provider(_))));
    }

    #[test]
    fn script_file_shapes() {
        let list = ReplayScript::from_json(br#"["x", {"fingerprint": null, "response": "y"}]"#).unwrap();
        assert_eq!(list.session("any").unwrap().remaining(), 2);
        let map = ReplayScript::from_json(br#"{"sessions": {"q1": ["a"]}}"#).unwrap();
        assert!(map.session("q2").is_none());
        assert_eq!(map.session("q1").unwrap().remaining(), 1);
    }
}
