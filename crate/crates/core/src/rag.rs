//! Outline-conditioned retrieval-augmented generation.
//!
//! Both modes work under the same total budget of ten documents: vanilla
//! RAG retrieves the top-10 for the C² string alone, outline mode retrieves
//! the top-2 for each of five queries (the four outline subqueries plus the
//! C² string). Retrieved documents go through *associative selection*: each
//! document is split into passages, each passage is scored for answerability
//! against the query that retrieved the document, and only the top-1
//! passage per document survives as evidence.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::c2::C2Query;
use crate::gateway::{slots, CompletionRequest, Gateway, GatewayError, TPL_RAG_RESPOND};
use crate::outline::Outline;
use crate::text::content_word_jaccard;

/// Total documents fetched per C² query, in either mode.
pub const DOC_BUDGET: usize = 10;
/// Documents per query in outline mode (2 x 5 = 10).
pub const OUTLINE_PER_QUERY: usize = 2;

/// One retrieved document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchDoc {
    pub query_used: String,
    /// 1-based rank within its query's result list.
    pub rank: u32,
    pub url: String,
    pub title: String,
    pub body: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RagMode {
    Vanilla,
    Outline,
}

impl std::fmt::Display for RagMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RagMode::Vanilla => "vanilla",
            RagMode::Outline => "outline",
        })
    }
}

impl std::str::FromStr for RagMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_lowercase().as_str() {
            "vanilla" => Ok(RagMode::Vanilla),
            "outline" => Ok(RagMode::Outline),
            other => Err(format!("unknown rag mode `{other}`")),
        }
    }
}

/// Search plan: which strings to search and how many documents per query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RagPlan {
    pub mode: RagMode,
    pub queries: Vec<String>,
    pub per_query_k: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RagError {
    #[error("outline mode requires an outline")]
    OutlineMissing,
    #[error("vanilla mode must not receive an outline")]
    OutlineUnexpected,
    #[error("response generation needs at least one evidence passage")]
    NoEvidence,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Builds the search plan for a C² query. Vanilla: one query (the composed
/// C² string) at k = 10. Outline: the four outline subqueries in canonical
/// order followed by the C² string, at k = 2 each - ten documents total
/// either way.
pub fn plan_searches(c2: &C2Query, outline: Option<&Outline>) -> Result<RagPlan, RagError> {
    match outline {
        None => Ok(RagPlan {
            mode: RagMode::Vanilla,
            queries: vec![c2.composed()],
            per_query_k: DOC_BUDGET,
        }),
        Some(outline) => {
            let mut queries: Vec<String> = outline.texts().to_vec();
            queries.push(c2.composed());
            Ok(RagPlan {
                mode: RagMode::Outline,
                queries,
                per_query_k: OUTLINE_PER_QUERY,
            })
        }
    }
}

/// Like [`plan_searches`] but checks the outline's presence against an
/// explicitly requested mode.
pub fn plan_searches_for_mode(
    c2: &C2Query,
    mode: RagMode,
    outline: Option<&Outline>,
) -> Result<RagPlan, RagError> {
    match (mode, outline) {
        (RagMode::Outline, None) => Err(RagError::OutlineMissing),
        (RagMode::Vanilla, Some(_)) => Err(RagError::OutlineUnexpected),
        _ => plan_searches(c2, outline),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum SearchError {
    #[error("search transport failed: {0}")]
    Transport(String),
    #[error("no canned results for query `{0}`")]
    NoFixture(String),
}

pub trait SearchClient: Send + Sync {
    /// Returns up to `k` ranked documents for the query.
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchDoc>, SearchError>;
}

/// A query that returned fewer documents than requested.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub query: String,
    pub wanted: usize,
    pub got: usize,
}

/// Result of executing a plan; per-query failures are data, not aborts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub docs: Vec<SearchDoc>,
    pub shortfalls: Vec<Shortfall>,
    pub failures: Vec<(String, SearchError)>,
    /// Documents dropped because an earlier query already returned the URL.
    pub deduped: usize,
}

/// Runs every query of the plan, keeping at most `per_query_k` documents per
/// query, deduplicating URLs across queries (earliest occurrence wins), and
/// recording shortfalls instead of padding them.
pub fn execute_plan(plan: &RagPlan, client: &dyn SearchClient) -> ExecutionOutcome {
    let mut outcome = ExecutionOutcome::default();
    let mut seen_urls: BTreeSet<String> = BTreeSet::new();
    for query in &plan.queries {
        match client.search(query, plan.per_query_k) {
            Ok(docs) => {
                let mut kept = 0;
                for doc in docs.into_iter().take(plan.per_query_k) {
                    if seen_urls.insert(doc.url.clone()) {
                        outcome.docs.push(doc);
                    } else {
                        outcome.deduped += 1;
                    }
                    kept += 1;
                }
                if kept < plan.per_query_k {
                    outcome.shortfalls.push(Shortfall {
                        query: query.clone(),
                        wanted: plan.per_query_k,
                        got: kept,
                    });
                }
            }
            Err(e) => outcome.failures.push((query.clone(), e)),
        }
    }
    outcome
}

// ---------------------------------------------------------------------------
// Associative evidence selection
// ---------------------------------------------------------------------------

/// One selected evidence passage (the top-1 of its document).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidencePassage {
    pub doc_url: String,
    pub passage: String,
    /// Answerability of the passage for its paired query, in [0, 1].
    pub answerability: f64,
    pub paired_query: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScorerError {
    #[error("answerability scorer failed: {0}")]
    Failed(String),
}

pub trait AnswerabilityScorer: Send + Sync {
    /// Estimates, in [0, 1], whether the passage can answer the query.
    fn score(&self, query: &str, passage: &str) -> Result<f64, ScorerError>;
}

/// Deterministic lexical scorer: content-word Jaccard similarity.
/// Stands in for a trained answerability model behind the same interface.
#[derive(Debug, Default, Clone, Copy)]
pub struct LexicalScorer;

impl AnswerabilityScorer for LexicalScorer {
    fn score(&self, query: &str, passage: &str) -> Result<f64, ScorerError> {
        Ok(content_word_jaccard(query, passage))
    }
}

/// Window size for unstructured bodies without paragraph breaks.
const WINDOW_CHARS: usize = 512;
const WINDOW_OVERLAP: usize = 128;

/// Splits a document body into passages: blank-line paragraphs when
/// present, otherwise fixed character windows with overlap.
pub fn split_passages(body: &str) -> Vec<String> {
    let paragraphs: Vec<String> = body
        .split("\n\n")
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect();
    if paragraphs.len() > 1 || body.trim().chars().count() <= WINDOW_CHARS {
        return paragraphs;
    }
    let chars: Vec<char> = body.trim().chars().collect();
    let step = WINDOW_CHARS - WINDOW_OVERLAP;
    let mut windows = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let end = (start + WINDOW_CHARS).min(chars.len());
        windows.push(chars[start..end].iter().collect::<String>().trim().to_string());
        if end == chars.len() {
            break;
        }
        start += step;
    }
    windows
}

/// A document skipped during evidence selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedDoc {
    pub url: String,
    pub reason: String,
}

/// Associative selection: scores every passage of every document against
/// the query that retrieved the document and keeps the single
/// highest-scoring passage per document (ties to the earlier passage).
/// Output order follows document order; empty-bodied documents are skipped
/// with a warning.
pub fn select_evidence(
    docs: &[SearchDoc],
    scorer: &dyn AnswerabilityScorer,
) -> Result<(Vec<EvidencePassage>, Vec<SkippedDoc>), ScorerError> {
    let mut evidence = Vec::new();
    let mut skipped = Vec::new();
    for doc in docs {
        let passages = split_passages(&doc.body);
        if passages.is_empty() {
            skipped.push(SkippedDoc {
                url: doc.url.clone(),
                reason: "empty body".into(),
            });
            continue;
        }
        let mut best: Option<(f64, &String)> = None;
        for passage in &passages {
            let score = scorer.score(&doc.query_used, passage)?;
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, passage));
            }
        }
        let (answerability, passage) = best.expect("at least one passage");
        evidence.push(EvidencePassage {
            doc_url: doc.url.clone(),
            passage: passage.clone(),
            answerability,
            paired_query: doc.query_used.clone(),
        });
    }
    Ok((evidence, skipped))
}

// ---------------------------------------------------------------------------
// Response generation
// ---------------------------------------------------------------------------

fn evidence_block(evidence: &[EvidencePassage]) -> String {
    evidence
        .iter()
        .enumerate()
        .map(|(i, e)| format!("[{}] (query: {}) {}", i + 1, e.paired_query, e.passage))
        .collect::<Vec<_>>()
        .join("\n")
}

fn outline_block(outline: Option<&Outline>) -> String {
    match outline {
        None => String::new(),
        Some(o) => format!(
            "\n[BEGIN CONTENT DRAFT]\n{}[END CONTENT DRAFT]\n",
            o.render_block()
        ),
    }
}

/// Generates the grounded Markdown response. Vanilla and outline mode use
/// byte-identical prompts except for the content-draft block.
pub fn generate_response(
    c2: &C2Query,
    outline: Option<&Outline>,
    evidence: &[EvidencePassage],
    gateway: &Gateway,
) -> Result<String, RagError> {
    if evidence.is_empty() {
        return Err(RagError::NoEvidence);
    }
    let req = CompletionRequest::new(
        TPL_RAG_RESPOND,
        slots([
            ("c2", c2.composed()),
            ("outline_block", outline_block(outline)),
            ("evidence", evidence_block(evidence)),
        ]),
    );
    Ok(gateway.complete(&req)?.text)
}

// ---------------------------------------------------------------------------
// Search clients
// ---------------------------------------------------------------------------

/// Serves canned results from a fixture directory. Each query maps to the
/// file `<sha256(query) first 16 hex>.json` holding
/// `[{"url", "title", "body"}, ...]`.
pub struct FixtureSearchClient {
    dir: PathBuf,
}

impl FixtureSearchClient {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn fixture_name(query: &str) -> String {
        let digest = Sha256::digest(query.as_bytes());
        format!("{}.json", hex::encode(&digest[..8]))
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct FixtureDoc {
    url: String,
    title: String,
    body: String,
}

impl SearchClient for FixtureSearchClient {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchDoc>, SearchError> {
        let path = self.dir.join(Self::fixture_name(query));
        let raw = std::fs::read_to_string(&path)
            .map_err(|_| SearchError::NoFixture(query.to_string()))?;
        let docs: Vec<FixtureDoc> =
            serde_json::from_str(&raw).map_err(|e| SearchError::Transport(e.to_string()))?;
        Ok(docs
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(i, d)| SearchDoc {
                query_used: query.to_string(),
                rank: i as u32 + 1,
                url: d.url,
                title: d.title,
                body: d.body,
            })
            .collect())
    }
}

/// In-memory search client for tests and dry runs.
#[derive(Debug, Default)]
pub struct StaticSearchClient {
    results: std::collections::BTreeMap<String, Vec<(String, String, String)>>,
}

impl StaticSearchClient {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `(url, title, body)` rows for a query.
    pub fn with(mut self, query: &str, rows: Vec<(String, String, String)>) -> Self {
        self.results.insert(query.to_string(), rows);
        self
    }
}

impl SearchClient for StaticSearchClient {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchDoc>, SearchError> {
        let rows = self
            .results
            .get(query)
            .ok_or_else(|| SearchError::NoFixture(query.to_string()))?;
        Ok(rows
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, (url, title, body))| SearchDoc {
                query_used: query.to_string(),
                rank: i as u32 + 1,
                url: url.clone(),
                title: title.clone(),
                body: body.clone(),
            })
            .collect())
    }
}

/// Web-search API client (SerpAPI-style GET interface). Reads
/// `SEARCH_API_KEY`; the endpoint and engine are configurable.
pub struct HttpSearchClient {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: String,
    engine: String,
}

impl HttpSearchClient {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, engine: impl Into<String>) -> Self {
        Self {
            client: reqwest::blocking::Client::new(),
            base_url: base_url.into(),
            api_key: api_key.into(),
            engine: engine.into(),
        }
    }

    pub fn from_env() -> Result<Self, SearchError> {
        let api_key = std::env::var("SEARCH_API_KEY")
            .map_err(|_| SearchError::Transport("SEARCH_API_KEY is not set".into()))?;
        let base_url = std::env::var("SEARCH_BASE_URL")
            .unwrap_or_else(|_| "https://serpapi.com/search".into());
        let engine = std::env::var("SEARCH_ENGINE").unwrap_or_else(|_| "duckduckgo".into());
        Ok(Self::new(base_url, api_key, engine))
    }
}

impl SearchClient for HttpSearchClient {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchDoc>, SearchError> {
        let resp = self
            .client
            .get(&self.base_url)
            .query(&[
                ("engine", self.engine.as_str()),
                ("q", query),
                ("api_key", self.api_key.as_str()),
            ])
            .send()
            .map_err(|e| SearchError::Transport(e.to_string()))?
            .error_for_status()
            .map_err(|e| SearchError::Transport(e.to_string()))?;
        let value: serde_json::Value = resp
            .json()
            .map_err(|e| SearchError::Transport(e.to_string()))?;
        let rows = value
            .get("organic_results")
            .and_then(|r| r.as_array())
            .cloned()
            .unwrap_or_default();
        Ok(rows
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, row)| SearchDoc {
                query_used: query.to_string(),
                rank: i as u32 + 1,
                url: row["link"].as_str().unwrap_or_default().to_string(),
                title: row["title"].as_str().unwrap_or_default().to_string(),
                body: row["snippet"].as_str().unwrap_or_default().to_string(),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::c2::{IntentOp, SeedSource};
    use crate::gateway::mock_gateway;
    use crate::qtree::parse_tree;

    const CANONICAL: &str = include_str!("../tests/fixtures/canonical_tree.txt");

    fn fixture() -> (crate::qtree::QTree, C2Query, Outline) {
        let tree = parse_tree("Describe the film The Woman Hunt.", CANONICAL).unwrap();
        let c2 = C2Query {
            id: "t0".into(),
            source: Some(SeedSource::Asqa),
            base_query: tree.base_query().to_string(),
            coverage_query: "Avoid reception.".into(),
            background: "3".parse().unwrap(),
            intent: IntentOp::Exclusion,
            tree_ref: "t0".into(),
        };
        let outline = Outline::new(
            &tree,
            "t0",
            ["1", "1.1", "1.1.1", "1.1.2"].iter().map(|s| s.parse().unwrap()),
        )
        .unwrap();
        (tree, c2, outline)
    }

    fn doc(query: &str, rank: u32, url: &str, body: &str) -> SearchDoc {
        SearchDoc {
            query_used: query.into(),
            rank,
            url: url.into(),
            title: format!("title {rank}"),
            body: body.into(),
        }
    }

    #[test]
    fn vanilla_plan_is_one_query_top_10() {
        let (_, c2, _) = fixture();
        let plan = plan_searches(&c2, None).unwrap();
        assert_eq!(plan.mode, RagMode::Vanilla);
        assert_eq!(plan.queries, vec![c2.composed()]);
        assert_eq!(plan.per_query_k, 10);
    }

    #[test]
    fn outline_plan_is_five_queries_top_2() {
        let (_, c2, outline) = fixture();
        let plan = plan_searches(&c2, Some(&outline)).unwrap();
        assert_eq!(plan.mode, RagMode::Outline);
        assert_eq!(plan.queries.len(), 5);
        assert_eq!(plan.per_query_k, 2);
        assert_eq!(plan.queries[0], outline.texts()[0]);
        assert_eq!(plan.queries[4], c2.composed());
        assert_eq!(plan.queries.len() * plan.per_query_k, DOC_BUDGET);
    }

    #[test]
    fn mode_mismatch_is_a_precondition_error() {
        let (_, c2, outline) = fixture();
        assert_eq!(
            plan_searches_for_mode(&c2, RagMode::Outline, None),
            Err(RagError::OutlineMissing)
        );
        assert_eq!(
            plan_searches_for_mode(&c2, RagMode::Vanilla, Some(&outline)),
            Err(RagError::OutlineUnexpected)
        );
    }

    #[test]
    fn execute_dedups_across_queries_and_records_shortfalls() {
        let plan = RagPlan {
            mode: RagMode::Outline,
            queries: vec!["a".into(), "b".into(), "c".into()],
            per_query_k: 2,
        };
        let client = StaticSearchClient::new()
            .with("a", vec![
                ("https://x/1".into(), "t".into(), "body".into()),
                ("https://x/2".into(), "t".into(), "body".into()),
            ])
            .with("b", vec![
                ("https://x/2".into(), "t".into(), "body".into()),
                ("https://x/3".into(), "t".into(), "body".into()),
            ])
            .with("c", vec![("https://x/4".into(), "t".into(), "body".into())]);
        let outcome = execute_plan(&plan, &client);
        assert_eq!(outcome.docs.len(), 4);
        assert_eq!(outcome.deduped, 1);
        assert_eq!(outcome.shortfalls, vec![Shortfall { query: "c".into(), wanted: 2, got: 1 }]);
        assert!(outcome.failures.is_empty());
    }

    #[test]
    fn search_failures_are_partial_not_fatal() {
        let plan = RagPlan {
            mode: RagMode::Vanilla,
            queries: vec!["present".into(), "missing".into()],
            per_query_k: 1,
        };
        let client = StaticSearchClient::new()
            .with("present", vec![("https://x/1".into(), "t".into(), "b".into())]);
        let outcome = execute_plan(&plan, &client);
        assert_eq!(outcome.docs.len(), 1);
        assert_eq!(outcome.failures.len(), 1);
    }

    #[test]
    fn select_evidence_keeps_argmax_passage_per_doc() {
        let docs = vec![doc(
            "tea seasons quality regions",
            1,
            "https://x/1",
            "football rules and referees\n\ntea quality varies with seasons across regions\n\ncooking pasta",
        )];
        let (evidence, skipped) = select_evidence(&docs, &LexicalScorer).unwrap();
        assert!(skipped.is_empty());
        assert_eq!(evidence.len(), 1);
        assert!(evidence[0].passage.contains("tea quality"));
    }

    #[test]
    fn empty_body_docs_are_skipped_with_warning() {
        let docs = vec![doc("q", 1, "https://x/1", "   ")];
        let (evidence, skipped) = select_evidence(&docs, &LexicalScorer).unwrap();
        assert!(evidence.is_empty());
        assert_eq!(skipped.len(), 1);
    }

    #[test]
    fn lexical_scorer_orders_by_overlap() {
        let hi = LexicalScorer.score("alpha beta gamma delta", "alpha beta gamma nonsense").unwrap();
        let lo = LexicalScorer.score("alpha beta gamma delta", "alpha filler filler filler").unwrap();
        assert!(hi > lo);
    }

    #[test]
    fn window_split_kicks_in_for_unstructured_bodies() {
        let long = "x".repeat(1200);
        let windows = split_passages(&long);
        assert!(windows.len() >= 2);
        assert!(windows.iter().all(|w| w.chars().count() <= 512));
        let structured = "para one\n\npara two";
        assert_eq!(split_passages(structured).len(), 2);
    }

    #[test]
    fn response_prompts_differ_only_in_outline_block() {
        let (_, c2, outline) = fixture();
        let evidence = vec![EvidencePassage {
            doc_url: "https://x/1".into(),
            passage: "some passage".into(),
            answerability: 0.5,
            paired_query: "q".into(),
        }];
        // identical templates except the outline block: render both blocks
        let vanilla = outline_block(None);
        let with_outline = outline_block(Some(&outline));
        assert_eq!(vanilla, "");
        assert!(with_outline.contains("1.1.2. What is the climax of The Woman Hunt?"));

        let gw = mock_gateway();
        let resp = generate_response(&c2, Some(&outline), &evidence, &gw).unwrap();
        assert!(resp.contains("[1]"));
        assert!(generate_response(&c2, None, &[], &gw).is_err());
    }
}
