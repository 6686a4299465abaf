//! Scripted offline provider.
//!
//! A script is an ordered list of `(substring → response)` rules matched
//! against the rendered prompt; the first match wins and unmatched prompts get
//! the default response (or a rejection when none is configured). Scripts load
//! from TOML or JSON:
//!
//! ```toml
//! default_response = "I am not sure."
//! fail_first = 0
//!
//! [[rules]]
//! contains = "PING"
//! respond = "PONG"
//! ```

use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};

use async_trait::async_trait;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CompletionProvider, CompletionRequest, ProviderError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: String,
    pub respond: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
    pub default_response: Option<String>,
    /// Number of leading calls that fail transiently.
    pub fail_first: u32,
    pub fail_always: bool,
    pub latency_ms: u64,
}

#[derive(Debug, Error)]
pub enum MockScriptError {
    #[error("cannot read mock script: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid mock script: {0}")]
    Parse(String),
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rule(mut self, contains: impl Into<String>, respond: impl Into<String>) -> Self {
        self.rules.push(MockRule { contains: contains.into(), respond: respond.into() });
        self
    }

    pub fn default_response(mut self, text: impl Into<String>) -> Self {
        self.default_response = Some(text.into());
        self
    }

    pub fn fail_first(mut self, n: u32) -> Self {
        self.fail_first = n;
        self
    }

    pub fn fail_always(mut self) -> Self {
        self.fail_always = true;
        self
    }

    pub fn latency_ms(mut self, ms: u64) -> Self {
        self.latency_ms = ms;
        self
    }

    pub fn from_path(path: &Path) -> Result<Self, MockScriptError> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| MockScriptError::Parse(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| MockScriptError::Parse(e.to_string()))
        }
    }

    pub fn respond_to(&self, prompt: &str) -> Option<&str> {
        self.rules
            .iter()
            .find(|r| prompt.contains(&r.contains))
            .map(|r| r.respond.as_str())
            .or(self.default_response.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct ScriptedMock {
    script: MockScript,
    calls: AtomicU32,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedMock {
    pub fn new(script: MockScript) -> Self {
        Self { script, ..Default::default() }
    }

    pub fn call_count(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    /// Every prompt received, in call order.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().clone()
    }
}

#[async_trait]
impl CompletionProvider for ScriptedMock {
    fn provider_id(&self) -> &str {
        "scripted-mock"
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        self.prompts.lock().push(request.prompt.rendered.clone());
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        if self.script.latency_ms > 0 {
            tokio::time::sleep(std::time::Duration::from_millis(self.script.latency_ms)).await;
        }
        self.in_flight.fetch_sub(1, Ordering::SeqCst);

        if self.script.fail_always || call <= self.script.fail_first {
            return Err(ProviderError::Transient(format!("scripted failure on call {call}")));
        }
        self.script
            .respond_to(&request.prompt.rendered)
            .map(str::to_owned)
            .ok_or_else(|| ProviderError::Rejected("no scripted response matches the prompt".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_matching_rule_wins() {
        let script = MockScript::new().rule("a", "first").rule("ab", "second").default_response("d");
        assert_eq!(script.respond_to("xaby"), Some("first"));
        assert_eq!(script.respond_to("zzz"), Some("d"));
        assert_eq!(MockScript::new().respond_to("zzz"), None);
    }

    #[test]
    fn loads_toml_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("s.toml");
        std::fs::write(&toml_path, "default_response = \"d\"\n[[rules]]\ncontains = \"PING\"\nrespond = \"PONG\"\n").unwrap();
        let json_path = dir.path().join("s.json");
        std::fs::write(&json_path, r#"{"rules":[{"contains":"PING","respond":"PONG"}],"default_response":"d"}"#).unwrap();
        let a = MockScript::from_path(&toml_path).unwrap();
        let b = MockScript::from_path(&json_path).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.respond_to("PING"), Some("PONG"));
    }
}
