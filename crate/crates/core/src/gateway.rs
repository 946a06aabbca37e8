//! Provider-agnostic LLM completion gateway.
//!
//! One [`Gateway`] owns a [`TemplateRegistry`], a [`Provider`], an optional
//! append-only request journal, retry policy, and an optional token-bucket
//! rate limit. Every pipeline LLM call goes through [`Gateway::complete`],
//! so a journaled run can be replayed byte-for-byte with
//! [`ReplayProvider`] and no network.
//!
//! Providers:
//! * [`HttpProvider`] - OpenAI-compatible chat-completions endpoint,
//!   configured from `LLM_API_KEY` / `LLM_BASE_URL` / `LLM_MODEL`.
//! * [`MockProvider`] - deterministic offline provider; answers fixture
//!   responses when registered and otherwise synthesizes pipeline-plausible
//!   output (a valid tree, candidate outlines, scores) from the request
//!   hash, so the whole pipeline runs end-to-end without a network.
//! * [`ReplayProvider`] - serves responses recorded in a journal.
//! * [`SequenceProvider`] - scripted responses, for tests.

use std::collections::{BTreeMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::qtree::{parse_tree, render_tree, QTree, TreePath};

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

/// A named prompt template with `{{slot}}` placeholders.
///
/// Every slot must appear exactly once, and the standard templates fence
/// each insertion between explicit `[BEGIN ...]` / `[END ...]` markers so a
/// rendered prompt identifies its slot values unambiguously.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    text: String,
    required_slots: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template `{template}` has no slots")]
    NoSlots { template: String },
    #[error("template `{template}` repeats slot `{slot}`")]
    RepeatedSlot { template: String, slot: String },
    #[error("template `{template}` is missing slot `{slot}`")]
    MissingSlot { template: String, slot: String },
    #[error("template `{template}` does not take slot `{slot}`")]
    UnknownSlot { template: String, slot: String },
    #[error("template `{0}` is already registered")]
    DuplicateTemplate(String),
    #[error("no template named `{0}`")]
    NotRegistered(String),
}

fn find_slots(text: &str) -> Vec<String> {
    let re = regex::Regex::new(r"\{\{([a-z][a-z0-9_]*)\}\}").expect("static regex");
    re.captures_iter(text).map(|c| c[1].to_string()).collect()
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Result<Self, TemplateError> {
        let name = name.into();
        let text = text.into();
        let slots = find_slots(&text);
        if slots.is_empty() {
            return Err(TemplateError::NoSlots { template: name });
        }
        let mut seen = BTreeMap::new();
        for s in &slots {
            if *seen.entry(s.clone()).or_insert(0u32) >= 1 {
                return Err(TemplateError::RepeatedSlot {
                    template: name,
                    slot: s.clone(),
                });
            }
            *seen.get_mut(s).unwrap() += 1;
        }
        Ok(Self {
            name,
            text,
            required_slots: slots,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn required_slots(&self) -> &[String] {
        &self.required_slots
    }

    /// Substitutes every slot; all required slots must be provided, no
    /// extras are accepted, and no placeholder markers may remain.
    pub fn render(&self, slots: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        for required in &self.required_slots {
            if !slots.contains_key(required) {
                return Err(TemplateError::MissingSlot {
                    template: self.name.clone(),
                    slot: required.clone(),
                });
            }
        }
        for given in slots.keys() {
            if !self.required_slots.contains(given) {
                return Err(TemplateError::UnknownSlot {
                    template: self.name.clone(),
                    slot: given.clone(),
                });
            }
        }
        let mut rendered = self.text.clone();
        for (slot, value) in slots {
            rendered = rendered.replace(&format!("{{{{{slot}}}}}"), value);
        }
        Ok(rendered)
    }
}

/// Registry of templates; duplicate names are rejected.
#[derive(Debug, Default, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, template: PromptTemplate) -> Result<(), TemplateError> {
        if self.templates.contains_key(template.name()) {
            return Err(TemplateError::DuplicateTemplate(template.name().to_string()));
        }
        self.templates.insert(template.name().to_string(), template);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .get(name)
            .ok_or_else(|| TemplateError::NotRegistered(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

pub const TPL_TREE_DECOMPOSE: &str = "tree_decompose";
pub const TPL_COVERAGE_GENERATE: &str = "coverage_generate";
pub const TPL_CANDIDATE_EXTRACT: &str = "candidate_extract";
pub const TPL_JUDGE_SCORE: &str = "judge_score";
pub const TPL_RAG_RESPOND: &str = "rag_respond";

/// The five pipeline templates: tree decomposition, coverage-query
/// generation, sequential candidate extraction, judge scoring, and grounded
/// response generation.
pub fn standard_registry() -> TemplateRegistry {
    let mut registry = TemplateRegistry::new();
    let templates = [
        (
            TPL_TREE_DECOMPOSE,
            "You are a query analyst. Decompose the question below into a tree of subqueries \
             that unfolds the scope of information needed to answer it in depth.\n\
             \n\
             Rules:\n\
             - Produce exactly 3 top-level subqueries; every subquery above the deepest level \
             has exactly 3 child subqueries (39 subqueries in total).\n\
             - Deeper subqueries must be more specific than their parents.\n\
             - No two subqueries may ask the same thing.\n\
             - Write one subquery per line as `N. text`, `N.M. text`, or `N.M.K. text`, \
             indented 4 spaces per level.\n\
             - Output only the tree.\n\
             \n\
             [BEGIN QUESTION]\n{{base_query}}\n[END QUESTION]\n",
        ),
        (
            TPL_COVERAGE_GENERATE,
            "You simulate a user refining a question. The user already recognizes the \
             background subquery given below, chosen from the subquery tree.\n\
             \n\
             Write 5 different candidate coverage constraints the user might append to the \
             question. Each candidate must be one or two sentences, mention the background \
             subtopic explicitly, and request the {{intent}} of that subtopic in the eventual \
             answer (inclusion: the answer must cover it; exclusion: the answer must avoid it \
             and focus elsewhere).\n\
             \n\
             Respond as JSON: {\"candidates\": [\"...\", \"...\", \"...\", \"...\", \"...\"]}\n\
             \n\
             [BEGIN QUESTION]\n{{base_query}}\n[END QUESTION]\n\
             \n\
             [BEGIN SUBQUERY TREE]\n{{tree}}\n[END SUBQUERY TREE]\n\
             \n\
             [BEGIN BACKGROUND SUBQUERY]\n{{background}}\n[END BACKGROUND SUBQUERY]\n",
        ),
        (
            TPL_CANDIDATE_EXTRACT,
            "Below are a constrained question and the tree of subqueries available for \
             answering it. Select 3 candidate outlines one after another, each satisfying the \
             constraint, as diverse as possible. An outline is exactly 4 subqueries from the \
             tree that are directly connected or neighboring (parent-child or same-parent \
             siblings).\n\
             \n\
             Respond as JSON:\n\
             {\"candidates\": [{\"queries\": [{\"path\": \"1\", \"text\": \"...\"}, ...]}, ...]}\n\
             \n\
             [BEGIN QUESTION]\n{{c2}}\n[END QUESTION]\n\
             \n\
             [BEGIN SUBQUERY TREE]\n{{tree}}\n[END SUBQUERY TREE]\n",
        ),
        (
            TPL_JUDGE_SCORE,
            "You are a strict judge. Evaluate how faithfully the outline below follows the \
             requirements of the question, using the score rubric.\n\
             \n\
             Reply exactly in this form:\n\
             Rationale: <your reasoning>\n\
             Score: <integer 1-5>\n\
             \n\
             [BEGIN QUESTION]\n{{c2}}\n[END QUESTION]\n\
             \n\
             [BEGIN OUTLINE]\n{{outline}}\n[END OUTLINE]\n\
             \n\
             [BEGIN SCORE RUBRIC]\n{{rubric}}\n[END SCORE RUBRIC]\n",
        ),
        (
            TPL_RAG_RESPOND,
            "Answer the question using only the numbered evidence passages below - do not \
             rely on your own knowledge. Cite passages as [n]. Format the whole response in \
             Markdown.\n\
             {{outline_block}}\n\
             [BEGIN QUESTION]\n{{c2}}\n[END QUESTION]\n\
             \n\
             [BEGIN EVIDENCE]\n{{evidence}}\n[END EVIDENCE]\n",
        ),
    ];
    for (name, text) in templates {
        registry
            .register(PromptTemplate::new(name, text).expect("standard templates are well-formed"))
            .expect("standard template names are distinct");
    }
    registry
}

// ---------------------------------------------------------------------------
// Requests and results
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Text,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub template: String,
    pub slots: BTreeMap<String, String>,
    pub temperature: f64,
    pub max_output: Option<u32>,
    pub mode: Mode,
}

impl CompletionRequest {
    pub fn new(template: impl Into<String>, slots: BTreeMap<String, String>) -> Self {
        Self {
            template: template.into(),
            slots,
            temperature: 1.0,
            max_output: None,
            mode: Mode::Text,
        }
    }

    pub fn json(mut self) -> Self {
        self.mode = Mode::Json;
        self
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }
}

/// Convenience for building slot maps.
pub fn slots<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub provider: String,
    pub latency_ms: u64,
    pub attempt: u32,
}

/// Stable hash of a request: template, mode, temperature, and sorted slots.
/// Identical requests hash identically across processes.
pub fn request_hash(req: &CompletionRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(req.template.as_bytes());
    hasher.update([0x1f]);
    hasher.update(match req.mode {
        Mode::Text => b"text".as_slice(),
        Mode::Json => b"json".as_slice(),
    });
    hasher.update([0x1f]);
    hasher.update(format!("{:?}", req.temperature).as_bytes());
    for (k, v) in &req.slots {
        hasher.update([0x1f]);
        hasher.update(k.as_bytes());
        hasher.update([0x1e]);
        hasher.update(v.as_bytes());
    }
    hex::encode(hasher.finalize())
}

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

/// Raw completion failure, split by whether a retry can help.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("fatal: {0}")]
    Fatal(String),
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &str, req: &CompletionRequest) -> Result<String, ProviderError>;
}

/// Deterministic offline provider.
///
/// Responds with a registered fixture when one matches the request hash;
/// otherwise it synthesizes output appropriate for the standard template
/// named by the request, derived only from the request hash and slots, so
/// two processes always produce identical bytes.
#[derive(Debug, Default)]
pub struct MockProvider {
    fixtures: BTreeMap<String, String>,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a canned response for exactly this request.
    pub fn add_fixture(&mut self, req: &CompletionRequest, response: impl Into<String>) {
        self.fixtures.insert(request_hash(req), response.into());
    }

    fn seed_of(hash: &str) -> u64 {
        u64::from_str_radix(&hash[..16], 16).expect("hash is hex")
    }

    fn synth_tree(base_query: &str) -> String {
        let base: String = base_query.split_whitespace().collect::<Vec<_>>().join(" ");
        let tree = QTree::build_with("q", |path: TreePath| match path.depth() {
            1 => format!("What are the key aspects of {base}? (angle {path})"),
            2 => format!("Which details matter for {base}? (facet {path})"),
            _ => format!("What specifics complete {base}? (point {path})"),
        })
        .expect("synthesized node texts are distinct and single-line");
        render_tree(&tree)
    }

    fn synth_coverage(seed: u64, background: &str, intent: &str) -> String {
        let candidates: Vec<String> = (1..=5)
            .map(|k| {
                if intent == "exclusion" {
                    format!(
                        "I already understand '{background}', so please avoid covering it and \
                         focus on other aspects (angle {}).",
                        (seed % 7) + k
                    )
                } else {
                    format!(
                        "Since I'm curious about '{background}', make sure your answer covers \
                         it in detail (angle {}).",
                        (seed % 7) + k
                    )
                }
            })
            .collect();
        serde_json::json!({ "candidates": candidates }).to_string()
    }

    fn synth_candidates(seed: u64, tree_text: &str) -> String {
        let Ok(tree) = parse_tree("q", tree_text) else {
            return r#"{"candidates": []}"#.to_string();
        };
        let mut cands = Vec::new();
        for i in 0..3u64 {
            let branch = (((seed >> 8) + i) % 3) as u8 + 1;
            let fork = (((seed >> 16) + i) % 3) as u8 + 1;
            let mut paths: Vec<TreePath> = vec![
                TreePath::new(&[branch]).unwrap(),
                TreePath::new(&[branch, fork]).unwrap(),
                TreePath::new(&[branch, fork, 1]).unwrap(),
                TreePath::new(&[branch, fork, 2]).unwrap(),
            ];
            if (seed + i) % 4 == 0 {
                // occasionally over-long, exercising the trim rule downstream
                paths.push(TreePath::new(&[branch, fork, 3]).unwrap());
            }
            let queries: Vec<serde_json::Value> = paths
                .iter()
                .map(|&p| serde_json::json!({"path": p.to_string(), "text": tree.text(p)}))
                .collect();
            cands.push(serde_json::json!({ "queries": queries }));
        }
        serde_json::json!({ "candidates": cands }).to_string()
    }

    fn synth_judgement(seed: u64) -> String {
        let score = (seed % 5) + 1;
        format!(
            "Rationale: deterministic mock assessment of how the outline matches the \
             constraint (key {}).\nScore: {score}",
            seed % 97
        )
    }

    fn synth_response(evidence: &str) -> String {
        let mut out = String::from("## Answer\n\nBased strictly on the provided evidence:\n\n");
        for line in evidence.lines() {
            if let Some(end) = line.strip_prefix('[').and_then(|r| r.find(']')) {
                let idx = &line[1..=end];
                out.push_str(&format!("- Point supported by [{idx}].\n"));
            }
        }
        out.push_str("\nNo claims beyond the evidence were made.\n");
        out
    }
}

impl Provider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, _prompt: &str, req: &CompletionRequest) -> Result<String, ProviderError> {
        let hash = request_hash(req);
        if let Some(fixture) = self.fixtures.get(&hash) {
            return Ok(fixture.clone());
        }
        let seed = Self::seed_of(&hash);
        let slot = |name: &str| req.slots.get(name).cloned().unwrap_or_default();
        Ok(match req.template.as_str() {
            TPL_TREE_DECOMPOSE => Self::synth_tree(&slot("base_query")),
            TPL_COVERAGE_GENERATE => Self::synth_coverage(seed, &slot("background"), &slot("intent")),
            TPL_CANDIDATE_EXTRACT => Self::synth_candidates(seed, &slot("tree")),
            TPL_JUDGE_SCORE => Self::synth_judgement(seed),
            TPL_RAG_RESPOND => Self::synth_response(&slot("evidence")),
            _ => format!("mock:{hash}"),
        })
    }
}

/// Scripted provider: pops one canned outcome per call. For tests.
#[derive(Debug, Default)]
pub struct SequenceProvider {
    responses: Mutex<VecDeque<Result<String, ProviderError>>>,
}

impl SequenceProvider {
    pub fn new(responses: impl IntoIterator<Item = Result<String, ProviderError>>) -> Self {
        Self {
            responses: Mutex::new(responses.into_iter().collect()),
        }
    }
}

impl Provider for SequenceProvider {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, _prompt: &str, _req: &CompletionRequest) -> Result<String, ProviderError> {
        self.responses
            .lock()
            .expect("sequence lock")
            .pop_front()
            .unwrap_or_else(|| Err(ProviderError::Fatal("script exhausted".into())))
    }
}

/// Serves responses recorded in a journal, keyed by request hash. Repeated
/// identical requests are served in recorded order.
#[derive(Debug)]
pub struct ReplayProvider {
    queues: Mutex<BTreeMap<String, VecDeque<String>>>,
}

impl ReplayProvider {
    pub fn from_journal(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let file = File::open(path.as_ref())
            .map_err(|e| GatewayError::Journal(format!("{}: {e}", path.as_ref().display())))?;
        let mut queues: BTreeMap<String, VecDeque<String>> = BTreeMap::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| GatewayError::Journal(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: JournalEntry = serde_json::from_str(&line)
                .map_err(|e| GatewayError::Journal(format!("bad journal line: {e}")))?;
            queues.entry(entry.hash).or_default().push_back(entry.response);
        }
        Ok(Self {
            queues: Mutex::new(queues),
        })
    }
}

impl Provider for ReplayProvider {
    fn name(&self) -> &str {
        "replay"
    }

    fn complete(&self, _prompt: &str, req: &CompletionRequest) -> Result<String, ProviderError> {
        let hash = request_hash(req);
        self.queues
            .lock()
            .expect("replay lock")
            .get_mut(&hash)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| {
                ProviderError::Fatal(format!(
                    "journal has no recorded response for request {hash} (template {})",
                    req.template
                ))
            })
    }
}

/// OpenAI-compatible chat-completions provider.
pub struct HttpProvider {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: String,
    model: String,
}

impl HttpProvider {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            client: reqwest::blocking::Client::new(),
            base_url: base_url.into(),
            api_key: api_key.into(),
            model: model.into(),
        }
    }

    /// Reads `LLM_API_KEY`, `LLM_BASE_URL` (default OpenAI), and `LLM_MODEL`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let api_key = std::env::var("LLM_API_KEY")
            .map_err(|_| GatewayError::Fatal("LLM_API_KEY is not set".into()))?;
        let base_url =
            std::env::var("LLM_BASE_URL").unwrap_or_else(|_| "https://api.openai.com/v1".into());
        let model = std::env::var("LLM_MODEL").unwrap_or_else(|_| "gpt-4-0125-preview".into());
        Ok(Self::new(base_url, api_key, model))
    }

    pub fn model(&self) -> &str {
        &self.model
    }
}

impl Provider for HttpProvider {
    fn name(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str, req: &CompletionRequest) -> Result<String, ProviderError> {
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": req.temperature,
        });
        if let Some(max) = req.max_output {
            body["max_tokens"] = serde_json::json!(max);
        }
        if req.mode == Mode::Json {
            body["response_format"] = serde_json::json!({"type": "json_object"});
        }
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        let resp = self
            .client
            .post(&url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(ProviderError::Transient(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Fatal(format!("status {status}")));
        }
        let value: serde_json::Value = resp
            .json()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Fatal("response has no message content".into()))
    }
}

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 1_000,
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms as f64 * self.factor.powi(attempt as i32 - 1);
        Duration::from_millis(ms as u64)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{template}` is missing slot `{slot}`")]
    SlotMissing { template: String, slot: String },
    #[error("template `{template}` does not take slot `{slot}`")]
    UnknownSlot { template: String, slot: String },
    #[error("provider failed after {attempts} attempts: {last}")]
    ProviderExhausted { attempts: u32, last: String },
    #[error("json-mode output still unparseable after {attempts} attempts: {snippet}")]
    JsonModeUnparseable { attempts: u32, snippet: String },
    #[error("provider error: {0}")]
    Fatal(String),
    #[error("journal error: {0}")]
    Journal(String),
}

/// One journaled request/response pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JournalEntry {
    pub hash: String,
    pub template: String,
    pub slots: BTreeMap<String, String>,
    pub mode: Mode,
    pub temperature: f64,
    pub response: String,
    pub provider: String,
    pub attempt: u32,
    pub latency_ms: u64,
}

struct TokenBucket {
    capacity: f64,
    tokens: f64,
    refill_per_ms: f64,
    last: Instant,
}

impl TokenBucket {
    fn per_minute(rpm: u32) -> Self {
        let rpm = rpm.max(1) as f64;
        Self {
            capacity: rpm,
            tokens: rpm,
            refill_per_ms: rpm / 60_000.0,
            last: Instant::now(),
        }
    }

    fn acquire(&mut self) {
        loop {
            let now = Instant::now();
            let elapsed_ms = now.duration_since(self.last).as_millis() as f64;
            self.last = now;
            self.tokens = (self.tokens + elapsed_ms * self.refill_per_ms).min(self.capacity);
            if self.tokens >= 1.0 {
                self.tokens -= 1.0;
                return;
            }
            let wait_ms = (1.0 - self.tokens) / self.refill_per_ms;
            std::thread::sleep(Duration::from_millis(wait_ms.ceil() as u64));
        }
    }
}

pub struct Gateway {
    registry: TemplateRegistry,
    provider: Box<dyn Provider>,
    journal: Option<Mutex<File>>,
    limiter: Option<Mutex<TokenBucket>>,
    retry: RetryPolicy,
}

impl Gateway {
    pub fn new(registry: TemplateRegistry, provider: Box<dyn Provider>) -> Self {
        Self {
            registry,
            provider,
            journal: None,
            limiter: None,
            retry: RetryPolicy::default(),
        }
    }

    /// Journals every successful completion to an append-only JSONL file.
    pub fn with_journal(mut self, path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path.as_ref())
            .map_err(|e| GatewayError::Journal(format!("{}: {e}", path.as_ref().display())))?;
        self.journal = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, requests_per_minute: u32) -> Self {
        self.limiter = Some(Mutex::new(TokenBucket::per_minute(requests_per_minute)));
        self
    }

    pub fn retry_policy(&self) -> &RetryPolicy {
        &self.retry
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn registry(&self) -> &TemplateRegistry {
        &self.registry
    }

    /// Completes a request: renders the template, applies the rate limit,
    /// retries transient failures with exponential backoff, and in json mode
    /// retries until the output parses as JSON. Successful completions are
    /// journaled.
    pub fn complete(&self, req: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        let template = self.registry.get(&req.template).map_err(|_| {
            GatewayError::UnknownTemplate(req.template.clone())
        })?;
        let prompt = template.render(&req.slots).map_err(|e| match e {
            TemplateError::MissingSlot { template, slot } => {
                GatewayError::SlotMissing { template, slot }
            }
            TemplateError::UnknownSlot { template, slot } => {
                GatewayError::UnknownSlot { template, slot }
            }
            other => GatewayError::Fatal(other.to_string()),
        })?;
        let hash = request_hash(req);

        enum LastFailure {
            Transport(String),
            Json(String),
        }
        let mut last: Option<LastFailure> = None;
        for attempt in 1..=self.retry.max_attempts {
            if let Some(limiter) = &self.limiter {
                limiter.lock().expect("limiter lock").acquire();
            }
            let started = Instant::now();
            match self.provider.complete(&prompt, req) {
                Ok(text) => {
                    if req.mode == Mode::Json
                        && serde_json::from_str::<serde_json::Value>(text.trim()).is_err()
                    {
                        last = Some(LastFailure::Json(snippet(&text)));
                    } else {
                        let result = CompletionResult {
                            text,
                            provider: self.provider.name().to_string(),
                            latency_ms: started.elapsed().as_millis() as u64,
                            attempt,
                        };
                        self.journal_entry(&hash, req, &result)?;
                        return Ok(result);
                    }
                }
                Err(ProviderError::Fatal(msg)) => return Err(GatewayError::Fatal(msg)),
                Err(ProviderError::Transient(msg)) => {
                    last = Some(LastFailure::Transport(msg));
                }
            }
            if attempt < self.retry.max_attempts {
                std::thread::sleep(self.retry.delay(attempt));
            }
        }
        Err(match last {
            Some(LastFailure::Json(snippet)) => GatewayError::JsonModeUnparseable {
                attempts: self.retry.max_attempts,
                snippet,
            },
            Some(LastFailure::Transport(msg)) => GatewayError::ProviderExhausted {
                attempts: self.retry.max_attempts,
                last: msg,
            },
            None => GatewayError::ProviderExhausted {
                attempts: self.retry.max_attempts,
                last: "no attempts were made".into(),
            },
        })
    }

    fn journal_entry(
        &self,
        hash: &str,
        req: &CompletionRequest,
        result: &CompletionResult,
    ) -> Result<(), GatewayError> {
        let Some(journal) = &self.journal else {
            return Ok(());
        };
        let entry = JournalEntry {
            hash: hash.to_string(),
            template: req.template.clone(),
            slots: req.slots.clone(),
            mode: req.mode,
            temperature: req.temperature,
            response: result.text.clone(),
            provider: result.provider.clone(),
            attempt: result.attempt,
            latency_ms: result.latency_ms,
        };
        let line =
            serde_json::to_string(&entry).map_err(|e| GatewayError::Journal(e.to_string()))?;
        let mut file = journal.lock().expect("journal lock");
        writeln!(file, "{line}").map_err(|e| GatewayError::Journal(e.to_string()))?;
        file.flush().map_err(|e| GatewayError::Journal(e.to_string()))
    }
}

fn snippet(text: &str) -> String {
    let t = text.trim();
    if t.len() > 120 {
        format!("{}...", &t[..t.char_indices().take(120).last().map_or(0, |(i, c)| i + c.len_utf8())])
    } else {
        t.to_string()
    }
}

/// A gateway wired for offline use: standard templates, mock provider,
/// immediate retries.
pub fn mock_gateway() -> Gateway {
    Gateway::new(standard_registry(), Box::new(MockProvider::new())).with_retry(RetryPolicy {
        base_delay_ms: 0,
        ..RetryPolicy::default()
    })
}
