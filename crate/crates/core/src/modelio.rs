//! Model access: remote chat-completion endpoints, scripted stand-ins for
//! offline runs, an on-disk response cache, and response parsers.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;
use std::time::Duration;

use base64::Engine;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::promptkit::{Prompt, PromptTask};
use crate::Verdict;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("credential environment variable {var} is not set")]
    Auth { var: String },
    #[error("request to {url} failed after {attempts} attempt(s): {message}")]
    Transport { url: String, attempts: u32, message: String },
    #[error("{url} answered HTTP {status}: {body}")]
    Api { url: String, status: u16, body: String },
    #[error("malformed response from {url}: {message}")]
    Protocol { url: String, message: String },
    #[error("cache {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("attachment {path}: {source}")]
    Attachment {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("scripted model {model} cannot answer prompt {sample}: {message}")]
    Script { model: String, sample: String, message: String },
}

impl ModelError {
    /// Whether a run should stop rather than record the failure and move on.
    pub fn is_fatal(&self) -> bool {
        !matches!(self, ModelError::Script { .. } | ModelError::Protocol { .. })
    }
}

/// Deterministic models used for offline runs and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScriptedModel {
    /// Trusts the tool: repeats its output, accepts every tool output.
    EchoTool,
    /// Answers with the ground truth or gold label.
    Oracle,
    AlwaysAccept,
    AlwaysReject,
}

impl ScriptedModel {
    pub const ALL: [ScriptedModel; 4] = [
        ScriptedModel::EchoTool,
        ScriptedModel::Oracle,
        ScriptedModel::AlwaysAccept,
        ScriptedModel::AlwaysReject,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScriptedModel::EchoTool => "echo-tool",
            ScriptedModel::Oracle => "oracle",
            ScriptedModel::AlwaysAccept => "always-accept",
            ScriptedModel::AlwaysReject => "always-reject",
        }
    }

    /// The raw reply for `prompt`, driven by its hints.
    pub fn respond(self, prompt: &Prompt) -> Result<String, ModelError> {
        let hints = &prompt.meta.hints;
        let missing = |what: &str| ModelError::Script {
            model: self.name().into(),
            sample: prompt.meta.sample_id.clone(),
            message: format!("prompt carries no {what}"),
        };
        let answering = prompt.meta.task == PromptTask::MathAnswer;
        Ok(match (self, answering) {
            (ScriptedModel::EchoTool, true) => match &hints.tool_output {
                Some(out) => format!("Answer: {out}"),
                None => "I need the calculator to answer.".into(),
            },
            (ScriptedModel::EchoTool, false) | (ScriptedModel::AlwaysAccept, false) => "Evaluation: Accept".into(),
            (ScriptedModel::AlwaysReject, false) => "Evaluation: Reject".into(),
            (ScriptedModel::AlwaysAccept | ScriptedModel::AlwaysReject, true) => "Evaluation: n/a".into(),
            (ScriptedModel::Oracle, true) => format!("Answer: {}", hints.answer.ok_or_else(|| missing("answer"))?),
            (ScriptedModel::Oracle, false) => format!("Evaluation: {}", hints.verdict.ok_or_else(|| missing("verdict"))?),
        })
    }
}

impl fmt::Display for ScriptedModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScriptedModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScriptedModel::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown scripted model {s:?} (expected echo-tool, oracle, always-accept or always-reject)"))
    }
}

/// Where completions come from. Written as `scripted:<name>` or an
/// `http(s)://` URL of an OpenAI-compatible API.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Remote(String),
    Scripted(ScriptedModel),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Remote(url) => f.write_str(url),
            Endpoint::Scripted(m) => write!(f, "scripted:{m}"),
        }
    }
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(name) = s.strip_prefix("scripted:") {
            return name.parse().map(Endpoint::Scripted);
        }
        if s.starts_with("http://") || s.starts_with("https://") {
            return Ok(Endpoint::Remote(s.trim_end_matches('/').to_string()));
        }
        Err(format!("endpoint {s:?} is neither scripted:<name> nor an http(s) URL"))
    }
}

impl Serialize for Endpoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

fn default_retries() -> u32 {
    3
}
fn default_timeout() -> u64 {
    120
}
fn default_concurrency() -> usize {
    4
}
fn default_backoff() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model_id: String,
    pub endpoint: Endpoint,
    /// Environment variable holding the bearer token for remote endpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency_limit: usize,
    /// First retry delay; doubles on every further attempt.
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl ModelConfig {
    pub fn scripted(model: ScriptedModel) -> Self {
        Self::new(model.name(), Endpoint::Scripted(model))
    }

    pub fn new(model_id: impl Into<String>, endpoint: Endpoint) -> Self {
        Self {
            model_id: model_id.into(),
            endpoint,
            api_key_env: None,
            temperature: 0.0,
            max_retries: default_retries(),
            timeout_secs: default_timeout(),
            concurrency_limit: default_concurrency(),
            backoff_base_ms: default_backoff(),
            max_tokens: None,
        }
    }

    /// Parses the `--model` shorthand: `scripted:<name>`, or
    /// `<model_id>@<url>` for a remote endpoint.
    pub fn from_spec(spec: &str) -> Result<Self, ModelError> {
        if spec.starts_with("scripted:") {
            let endpoint: Endpoint = spec.parse().map_err(ModelError::Config)?;
            let Endpoint::Scripted(m) = endpoint else { unreachable!() };
            return Ok(Self::scripted(m));
        }
        let (id, url) = spec
            .split_once('@')
            .ok_or_else(|| ModelError::Config(format!("model {spec:?} is neither scripted:<name> nor <model_id>@<url>")))?;
        let endpoint = url.parse().map_err(ModelError::Config)?;
        Ok(Self::new(id, endpoint))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.model_id.trim().is_empty() {
            return Err(ModelError::Config("model_id is empty".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ModelError::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.concurrency_limit == 0 {
            return Err(ModelError::Config("concurrency_limit must be positive".into()));
        }
        if self.max_retries > 16 {
            return Err(ModelError::Config(format!("max_retries {} is unreasonably large", self.max_retries)));
        }
        Ok(())
    }

    pub fn is_scripted(&self) -> bool {
        matches!(self.endpoint, Endpoint::Scripted(_))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content-addressed store of raw completions.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, ModelError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| ModelError::Cache { path: dir.clone(), source })?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Digest over model id, prompt text, attachment contents and
    /// temperature.
    pub fn key(cfg: &ModelConfig, prompt: &Prompt) -> Result<String, ModelError> {
        let mut attachments = Vec::new();
        for path in &prompt.attachments {
            let bytes = fs::read(path).map_err(|source| ModelError::Attachment { path: path.clone(), source })?;
            attachments.push(sha256_hex(&bytes));
        }
        let material = json!({
            "model_id": cfg.model_id,
            "text": prompt.text,
            "attachments": attachments,
            "temperature": format!("{:?}", cfg.temperature),
        });
        Ok(sha256_hex(material.to_string().as_bytes()))
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.txt"))
    }

    pub fn get(&self, key: &str) -> Result<Option<String>, ModelError> {
        let path = self.path(key);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(ModelError::Cache { path, source }),
        }
    }

    /// Writes through a temporary file and renames it into place.
    pub fn put(&self, key: &str, text: &str) -> Result<(), ModelError> {
        let path = self.path(key);
        let parent = path.parent().expect("cache entries live in a shard directory");
        let io = |source| ModelError::Cache { path: path.clone(), source };
        fs::create_dir_all(parent).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(io)?;
        tmp.write_all(text.as_bytes()).map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        Ok(())
    }
}

/// A configured model plus its cache.
#[derive(Debug)]
pub struct ModelClient {
    cfg: ModelConfig,
    cache: Option<ResponseCache>,
    agent: ureq::Agent,
    requests: AtomicU64,
}

impl ModelClient {
    pub fn new(cfg: ModelConfig, cache: Option<ResponseCache>) -> Result<Self, ModelError> {
        cfg.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            cfg,
            cache,
            agent,
            requests: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// HTTP requests issued so far, retries included.
    pub fn network_requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    /// Returns the model's text for `prompt`. Remote results are served from
    /// the cache when present and stored after a successful call.
    pub fn complete(&self, prompt: &Prompt) -> Result<String, ModelError> {
        let url = match &self.cfg.endpoint {
            Endpoint::Scripted(m) => return m.respond(prompt),
            Endpoint::Remote(url) => url,
        };
        let key = match &self.cache {
            Some(_) => Some(ResponseCache::key(&self.cfg, prompt)?),
            None => None,
        };
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(hit) = cache.get(key)? {
                return Ok(hit);
            }
        }
        let token = match &self.cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| ModelError::Auth { var: var.clone() })?),
            None => None,
        };
        let body = self.request_body(prompt)?;
        let text = self.post_with_retries(&chat_url(url), token.as_deref(), &body)?;
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            cache.put(key, &text)?;
        }
        Ok(text)
    }

    fn request_body(&self, prompt: &Prompt) -> Result<Value, ModelError> {
        let content = if prompt.attachments.is_empty() {
            Value::String(prompt.text.clone())
        } else {
            let mut parts = vec![json!({"type": "text", "text": prompt.text})];
            for path in &prompt.attachments {
                let bytes = fs::read(path).map_err(|source| ModelError::Attachment { path: path.clone(), source })?;
                let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
                    Some("jpg" | "jpeg") => "image/jpeg",
                    Some("webp") => "image/webp",
                    Some("gif") => "image/gif",
                    _ => "image/png",
                };
                let data = base64::engine::general_purpose::STANDARD.encode(bytes);
                parts.push(json!({"type": "image_url", "image_url": {"url": format!("data:{mime};base64,{data}")}}));
            }
            Value::Array(parts)
        };
        let mut body = json!({
            "model": self.cfg.model_id,
            "temperature": self.cfg.temperature,
            "messages": [{"role": "user", "content": content}],
        });
        if let Some(n) = self.cfg.max_tokens {
            body["max_tokens"] = json!(n);
        }
        Ok(body)
    }

    fn post_with_retries(&self, url: &str, token: Option<&str>, body: &Value) -> Result<String, ModelError> {
        let attempts = self.cfg.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let factor = 1u64 << (attempt - 1).min(16);
                let delay = self.cfg.backoff_base_ms.saturating_mul(factor).min(60_000);
                std::thread::sleep(Duration::from_millis(delay));
            }
            self.requests.fetch_add(1, Ordering::Relaxed);
            let mut req = self.agent.post(url).header("Content-Type", "application/json");
            if let Some(t) = token {
                req = req.header("Authorization", format!("Bearer {t}"));
            }
            match req.send(body.to_string()) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    if status == 429 || status >= 500 {
                        last = format!("HTTP {status}");
                        continue;
                    }
                    if status >= 400 {
                        return Err(ModelError::Api {
                            url: url.into(),
                            status,
                            body: text.chars().take(500).collect(),
                        });
                    }
                    return extract_content(&text).map_err(|message| ModelError::Protocol { url: url.into(), message });
                }
                Err(e) => {
                    let transient = matches!(
                        e,
                        ureq::Error::Io(_) | ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound
                    );
                    if !transient {
                        return Err(ModelError::Transport {
                            url: url.into(),
                            attempts: attempt + 1,
                            message: e.to_string(),
                        });
                    }
                    last = e.to_string();
                }
            }
        }
        Err(ModelError::Transport {
            url: url.into(),
            attempts,
            message: last,
        })
    }
}

fn chat_url(base: &str) -> String {
    if base.ends_with("/chat/completions") {
        base.to_string()
    } else {
        format!("{base}/chat/completions")
    }
}

fn extract_content(body: &str) -> Result<String, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("invalid JSON: {e}"))?;
    let content = &v["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Ok(s.clone()),
        // Some servers return content as a list of typed parts.
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join("")),
        _ => Err("no choices[0].message.content".into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<Verdict>,
    pub parse_status: ParseStatus,
}

fn field_regex(name: &str) -> Regex {
    Regex::new(&format!(r"(?i)\b{name}\s*:")).expect("static pattern")
}

fn answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| field_regex("answer"))
}

fn evaluation_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| field_regex("evaluation"))
}

fn thought_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| field_regex("thought"))
}

fn trailing_int_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(^|[^\d.])(-?\s*\d+)$").expect("static pattern"))
}

/// The value after the last `<field>:` label: the rest of that line, or the
/// next non-empty line when the label ends the line. Also returns the index of
/// the label's line.
fn last_field(lines: &[&str], re: &Regex) -> Option<(usize, String)> {
    let idx = lines.iter().rposition(|l| re.is_match(l))?;
    let line = lines[idx];
    let end = re.find_iter(line).last()?.end();
    let rest = line[end..].trim();
    if !rest.is_empty() && strip_markup(rest).chars().any(|c| !c.is_whitespace()) {
        return Some((idx, rest.to_string()));
    }
    let next = lines[idx + 1..].iter().find(|l| !l.trim().is_empty())?;
    Some((idx, next.trim().to_string()))
}

fn strip_markup(s: &str) -> String {
    s.chars().filter(|c| !matches!(c, '*' | '`' | '_' | '$' | '"' | '\'')).collect()
}

fn thought_before(lines: &[&str], limit: usize) -> Option<String> {
    let idx = lines[..limit].iter().rposition(|l| thought_re().is_match(l))?;
    let first = lines[idx];
    let end = thought_re().find(first)?.end();
    let mut parts = vec![first[end..].trim()];
    parts.extend(lines[idx + 1..limit].iter().map(|l| l.trim_end()));
    let text = parts.join("\n").trim().to_string();
    (!text.is_empty()).then_some(text)
}

fn normalize_number(raw: &str) -> Option<i64> {
    let mut s = strip_markup(raw).replace(',', "").replace('\u{2212}', "-");
    loop {
        let trimmed = s.trim_end().trim_end_matches(['.', '!', ';', ':', ')', ']']).trim_end();
        if trimmed.len() == s.len() {
            break;
        }
        s = trimmed.to_string();
    }
    let caps = trailing_int_re().captures(&s)?;
    caps[2].replace(char::is_whitespace, "").parse().ok()
}

fn unparseable(text: &str, thought: Option<String>) -> ParsedResponse {
    ParsedResponse {
        raw: text.to_string(),
        thought,
        answer: None,
        evaluation: None,
        parse_status: ParseStatus::Unparseable,
    }
}

/// Extracts the integer after the last `Answer:` label. Never fails; bad
/// input yields [`ParseStatus::Unparseable`].
pub fn parse_answer(text: &str) -> ParsedResponse {
    let lines: Vec<&str> = text.lines().collect();
    let Some((idx, value)) = last_field(&lines, answer_re()) else {
        return unparseable(text, thought_before(&lines, lines.len()));
    };
    let thought = thought_before(&lines, idx);
    match normalize_number(&value) {
        Some(n) => ParsedResponse {
            raw: text.to_string(),
            thought,
            answer: Some(n),
            evaluation: None,
            parse_status: ParseStatus::Ok,
        },
        None => unparseable(text, thought),
    }
}

/// Extracts Accept/Reject after the last `Evaluation:` label.
pub fn parse_evaluation(text: &str) -> ParsedResponse {
    let lines: Vec<&str> = text.lines().collect();
    let Some((idx, value)) = last_field(&lines, evaluation_re()) else {
        return unparseable(text, thought_before(&lines, lines.len()));
    };
    let thought = thought_before(&lines, idx);
    let cleaned = strip_markup(&value).to_ascii_lowercase();
    let word: String = cleaned
        .trim()
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect();
    let verdict = match word.as_str() {
        "accept" | "accepted" => Some(Verdict::Accept),
        "reject" | "rejected" => Some(Verdict::Reject),
        _ => None,
    };
    match verdict {
        Some(v) => ParsedResponse {
            raw: text.to_string(),
            thought,
            answer: None,
            evaluation: Some(v),
            parse_status: ParseStatus::Ok,
        },
        None => unparseable(text, thought),
    }
}
