//! Coverage-conditioned query composition.
//!
//! A C² query is the user's base query concatenated with a *coverage query*
//! that constrains which subtopics the answer must include or exclude. The
//! coverage query is generated from a randomly selected *background
//! subquery* (the knowledge the user already has) and a binary *intent
//! operation*, then kept only if three candidate outlines can be extracted
//! for it.

use std::io::BufRead;
use std::sync::OnceLock;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gateway::{
    slots, CompletionRequest, Gateway, GatewayError, TPL_CANDIDATE_EXTRACT, TPL_COVERAGE_GENERATE,
};
use crate::outline::{parse_candidates, resolve_candidate, ResolvedCandidate};
use crate::qtree::{render_tree, QTree, TreePath};
use crate::text::content_word_jaccard;

/// Binary user intent on the background subtopic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntentOp {
    Inclusion,
    Exclusion,
}

impl IntentOp {
    pub fn opposite(self) -> Self {
        match self {
            IntentOp::Inclusion => IntentOp::Exclusion,
            IntentOp::Exclusion => IntentOp::Inclusion,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IntentOp::Inclusion => "inclusion",
            IntentOp::Exclusion => "exclusion",
        }
    }
}

impl std::fmt::Display for IntentOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for IntentOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_lowercase().as_str() {
            "inclusion" | "include" => Ok(IntentOp::Inclusion),
            "exclusion" | "exclude" => Ok(IntentOp::Exclusion),
            other => Err(format!("unknown intent operation `{other}`")),
        }
    }
}

/// Seed datasets the base queries come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedSource {
    Asqa,
    Longform,
    ExpertQa,
}

impl std::fmt::Display for SeedSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SeedSource::Asqa => "asqa",
            SeedSource::Longform => "longform",
            SeedSource::ExpertQa => "expertqa",
        })
    }
}

impl std::str::FromStr for SeedSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_lowercase().as_str() {
            "asqa" => Ok(SeedSource::Asqa),
            "longform" => Ok(SeedSource::Longform),
            "expertqa" => Ok(SeedSource::ExpertQa),
            other => Err(format!("unknown seed source `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// One base query from a seed dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedQuery {
    pub source: SeedSource,
    pub split: Split,
    pub text: String,
}

/// Optional cleanup applied while ingesting seed queries.
#[derive(Debug, Clone)]
pub struct CleanOptions {
    /// Strip trailing format instructions like "Respond in 3 sentences.".
    pub strip_format_instructions: bool,
    /// Drop queries containing any of these phrases (case-insensitive).
    pub noise_phrases: Vec<String>,
}

impl Default for CleanOptions {
    fn default() -> Self {
        Self {
            strip_format_instructions: true,
            noise_phrases: [
                "does not provide enough information",
                "cannot be answered",
                "unable to provide an answer",
                "no answer can be provided",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }
}

fn format_instruction_re() -> &'static regex::Regex {
    static RE: OnceLock<regex::Regex> = OnceLock::new();
    RE.get_or_init(|| {
        regex::Regex::new(
            r"(?i)\s*(respond|answer|reply|write|describe|explain)\s+(in|with|using)\s+(at\s+(least|most)\s+)?\d+\s*(sentence|word|paragraph|line|bullet)s?\s*[.!]?\s*$",
        )
        .expect("static regex")
    })
}

/// Cleans one seed line; `None` means the line was dropped as noise.
pub fn clean_seed_text(text: &str, opts: &CleanOptions) -> Option<String> {
    let lower = text.to_lowercase();
    if opts
        .noise_phrases
        .iter()
        .any(|p| lower.contains(&p.to_lowercase()))
    {
        return None;
    }
    let mut cleaned = text.trim().to_string();
    if opts.strip_format_instructions {
        cleaned = format_instruction_re().replace(&cleaned, "").trim().to_string();
    }
    (!cleaned.is_empty()).then_some(cleaned)
}

/// Reads seed queries, one per line. Lines that parse as JSON objects take
/// their `text` (or `question`) field; anything else is used verbatim.
/// Blank lines are skipped; with `clean` set, noisy lines are dropped and
/// format instructions stripped.
pub fn read_seed_queries(
    reader: impl BufRead,
    source: SeedSource,
    split: Split,
    clean: Option<&CleanOptions>,
) -> std::io::Result<Vec<SeedQuery>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let text = if trimmed.starts_with('{') {
            match serde_json::from_str::<serde_json::Value>(trimmed) {
                Ok(v) => v
                    .get("text")
                    .or_else(|| v.get("question"))
                    .and_then(|t| t.as_str())
                    .map(str::to_string),
                Err(_) => None,
            }
        } else {
            Some(trimmed.to_string())
        };
        let Some(text) = text else { continue };
        let text = match clean {
            Some(opts) => match clean_seed_text(&text, opts) {
                Some(t) => t,
                None => continue,
            },
            None => text,
        };
        out.push(SeedQuery {
            source,
            split,
            text,
        });
    }
    Ok(out)
}

/// A finalized coverage-conditioned query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C2Query {
    pub id: String,
    pub source: Option<SeedSource>,
    pub base_query: String,
    pub coverage_query: String,
    #[serde(rename = "background_path")]
    pub background: TreePath,
    pub intent: IntentOp,
    #[serde(rename = "tree_id")]
    pub tree_ref: String,
}

impl C2Query {
    /// The full C² prompt string: base and coverage query joined by a space.
    pub fn composed(&self) -> String {
        compose_c2(&self.base_query, &self.coverage_query)
    }
}

/// Concatenates base and coverage query with a single space.
pub fn compose_c2(base: &str, coverage: &str) -> String {
    format!("{} {}", base.trim(), coverage.trim())
        .trim()
        .to_string()
}

/// Uniformly selects one of the 39 subqueries as the background subquery.
/// Deterministic per seed, including across processes.
pub fn select_background(tree: &QTree, seed: u64) -> TreePath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths: Vec<TreePath> = tree.nodes().map(|(p, _)| p).collect();
    paths[rng.random_range(0..paths.len())]
}

/// Assigns intents to a batch so the realized counts match the
/// `inclusion:exclusion` ratio exactly (largest-remainder rule; the pattern
/// cycles every `inclusion + exclusion` items).
pub fn assign_intents(n: usize, inclusion: u32, exclusion: u32) -> Result<Vec<IntentOp>, C2Error> {
    let (a, total) = (inclusion as usize, (inclusion + exclusion) as usize);
    if total == 0 {
        return Err(C2Error::BadIntentRatio);
    }
    Ok((0..n)
        .map(|i| {
            if ((i + 1) * a) / total > (i * a) / total {
                IntentOp::Inclusion
            } else {
                IntentOp::Exclusion
            }
        })
        .collect())
}

/// Soft lint over a coverage query; warnings flag a query as "noisy" for
/// the export stage but never block the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LintWarning {
    /// Coverage queries should be one or two sentences.
    SentenceCount { got: usize },
    /// The coverage query never mentions the background subtopic.
    NoBackgroundMention,
    /// A configured noise phrase appears in the query.
    NoisePhrase { phrase: String },
}

pub fn lint_coverage(
    coverage_query: &str,
    background_text: &str,
    noise_phrases: &[String],
) -> Vec<LintWarning> {
    let mut warnings = Vec::new();
    let sentences = coverage_query
        .split(['.', '!', '?'])
        .filter(|s| s.chars().any(char::is_alphanumeric))
        .count();
    if !(1..=2).contains(&sentences) {
        warnings.push(LintWarning::SentenceCount { got: sentences });
    }
    if content_word_jaccard(coverage_query, background_text) == 0.0 {
        warnings.push(LintWarning::NoBackgroundMention);
    }
    let lower = coverage_query.to_lowercase();
    for phrase in noise_phrases {
        if lower.contains(&phrase.to_lowercase()) {
            warnings.push(LintWarning::NoisePhrase {
                phrase: phrase.clone(),
            });
        }
    }
    warnings
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum C2Error {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("coverage generation returned {0} candidates, expected 5")]
    BadCoverageCount(usize),
    #[error("coverage output is not the expected JSON shape: {0}")]
    BadCoverageShape(String),
    #[error("intent ratio must have at least one nonzero side")]
    BadIntentRatio,
    #[error("all coverage candidates were rejected")]
    Rejected(CoverageRejection),
}

/// Per-candidate failure reasons when no coverage query survives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRejection {
    /// One list of reasons per coverage candidate, in generation order.
    pub failures: Vec<Vec<String>>,
}

/// Number of preliminary coverage queries sampled per base query.
pub const COVERAGE_SAMPLES: usize = 5;

/// Generates five candidate coverage queries for the selected background
/// subquery and intent, in a single json-mode completion.
pub fn generate_coverage(
    tree: &QTree,
    background: TreePath,
    intent: IntentOp,
    gateway: &Gateway,
) -> Result<Vec<String>, C2Error> {
    let req = CompletionRequest::new(
        TPL_COVERAGE_GENERATE,
        slots([
            ("base_query", tree.base_query().to_string()),
            ("tree", render_tree(tree)),
            ("background", tree.text(background).to_string()),
            ("intent", intent.to_string()),
        ]),
    )
    .json();
    let result = gateway.complete(&req)?;
    let value: serde_json::Value = serde_json::from_str(result.text.trim())
        .map_err(|e| C2Error::BadCoverageShape(e.to_string()))?;
    let candidates: Vec<String> = value
        .get("candidates")
        .and_then(|c| c.as_array())
        .ok_or_else(|| C2Error::BadCoverageShape("missing `candidates` array".into()))?
        .iter()
        .filter_map(|v| v.as_str())
        .map(str::to_string)
        .collect();
    if candidates.len() < COVERAGE_SAMPLES {
        return Err(C2Error::BadCoverageCount(candidates.len()));
    }
    Ok(candidates.into_iter().take(COVERAGE_SAMPLES).collect())
}

/// A coverage query that survived candidate-outline extraction, together
/// with its three vetted candidate outlines.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalizedC2 {
    pub coverage_query: String,
    /// Index of the accepted candidate among the five generated.
    pub chosen_index: usize,
    /// Exactly three valid candidate outlines.
    pub candidates: Vec<ResolvedCandidate>,
}

pub(crate) fn candidate_request(tree: &QTree, c2_text: &str) -> CompletionRequest {
    CompletionRequest::new(
        TPL_CANDIDATE_EXTRACT,
        slots([
            ("c2", c2_text.to_string()),
            ("tree", render_tree(tree)),
        ]),
    )
    .json()
}

/// Tries each coverage candidate in order, requesting three sequential
/// candidate outlines for it; the first candidate whose three outlines all
/// parse and validate is accepted. Json-unparseable extraction output
/// counts against that candidate; transport failures abort.
pub fn finalize_coverage(
    tree: &QTree,
    tree_ref: &str,
    coverage_candidates: &[String],
    gateway: &Gateway,
) -> Result<FinalizedC2, C2Error> {
    let mut failures: Vec<Vec<String>> = Vec::with_capacity(coverage_candidates.len());
    for (index, coverage) in coverage_candidates.iter().enumerate() {
        let c2_text = compose_c2(tree.base_query(), coverage);
        let req = candidate_request(tree, &c2_text);
        let text = match gateway.complete(&req) {
            Ok(result) => result.text,
            Err(GatewayError::JsonModeUnparseable { attempts, snippet }) => {
                failures.push(vec![format!(
                    "candidate extraction unparseable after {attempts} attempts: {snippet}"
                )]);
                continue;
            }
            Err(other) => return Err(other.into()),
        };
        let slots = match parse_candidates(&text) {
            Ok(slots) => slots,
            Err(doc) => {
                failures.push(vec![doc.to_string()]);
                continue;
            }
        };
        let mut reasons = Vec::new();
        let mut resolved = Vec::new();
        if slots.len() != 3 {
            reasons.push(format!("expected 3 candidate outlines, got {}", slots.len()));
        }
        for (slot_index, slot) in slots.into_iter().enumerate() {
            match slot {
                Ok(raw) => match resolve_candidate(tree, tree_ref, &raw) {
                    Ok(candidate) => resolved.push(candidate),
                    Err(failure) => reasons.push(format!("slot {}: {failure}", slot_index + 1)),
                },
                Err(e) => reasons.push(format!("slot {}: {e}", slot_index + 1)),
            }
        }
        if reasons.is_empty() && resolved.len() == 3 {
            return Ok(FinalizedC2 {
                coverage_query: coverage.clone(),
                chosen_index: index,
                candidates: resolved,
            });
        }
        failures.push(reasons);
    }
    Err(C2Error::Rejected(CoverageRejection { failures }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{mock_gateway, MockProvider, RetryPolicy};
    use crate::gateway::{Gateway, standard_registry};
    use crate::qtree::parse_tree;
    use std::io::Cursor;

    const CANONICAL: &str = include_str!("../tests/fixtures/canonical_tree.txt");

    fn canonical() -> QTree {
        parse_tree("Describe the film The Woman Hunt.", CANONICAL).unwrap()
    }

    #[test]
    fn compose_matches_paper_example() {
        let base = "Describe the film The Woman Hunt.";
        let cov = "Since I'm already familiar with how audiences and critics received The Woman \
                   Hunt, please avoid discussing reviews or reception in your explanation.";
        assert_eq!(compose_c2(base, cov), format!("{base} {cov}"));
        assert_eq!(compose_c2(" Q? ", " Include X. "), "Q? Include X.");
    }

    #[test]
    fn background_selection_is_seed_deterministic() {
        let tree = canonical();
        let a = select_background(&tree, 11);
        let b = select_background(&tree, 11);
        assert_eq!(a, b);
        assert!(tree.nodes().any(|(p, _)| p == a));
    }

    #[test]
    fn intent_assignment_matches_ratio_exactly() {
        let intents = assign_intents(10, 1, 1).unwrap();
        let inc = intents.iter().filter(|i| **i == IntentOp::Inclusion).count();
        assert_eq!(inc, 5);
        let intents = assign_intents(9, 2, 1).unwrap();
        let inc = intents.iter().filter(|i| **i == IntentOp::Inclusion).count();
        assert_eq!(inc, 6);
        assert!(assign_intents(4, 0, 0).is_err());
    }

    #[test]
    fn seed_reader_handles_plain_and_jsonl() {
        let data = "What is tea?\n\n{\"text\": \"Who was Ada Lovelace?\"}\n{\"broken\n";
        let seeds =
            read_seed_queries(Cursor::new(data), SeedSource::Asqa, Split::Train, None).unwrap();
        assert_eq!(seeds.len(), 2);
        assert_eq!(seeds[1].text, "Who was Ada Lovelace?");
    }

    #[test]
    fn cleaning_strips_format_instructions_and_noise() {
        let opts = CleanOptions::default();
        assert_eq!(
            clean_seed_text("What is a quasar? Respond in 3 sentences.", &opts).unwrap(),
            "What is a quasar?"
        );
        assert_eq!(
            clean_seed_text(
                "This does not provide enough information for an answer to be provided.",
                &opts
            ),
            None
        );
    }

    #[test]
    fn lint_flags_long_and_unrelated_coverage() {
        let bg = "What are the main events in The Woman Hunt?";
        assert!(lint_coverage(
            "Given my interest in the main events of The Woman Hunt, include them.",
            bg,
            &[]
        )
        .is_empty());
        let warnings = lint_coverage("One. Two. Three. Four.", bg, &[]);
        assert!(warnings
            .iter()
            .any(|w| matches!(w, LintWarning::SentenceCount { got: 4 })));
        assert!(warnings
            .iter()
            .any(|w| matches!(w, LintWarning::NoBackgroundMention)));
    }

    #[test]
    fn generate_coverage_passes_through_mock_candidates() {
        let tree = canonical();
        let gw = mock_gateway();
        let bg: TreePath = "1.3".parse().unwrap();
        let cands = generate_coverage(&tree, bg, IntentOp::Inclusion, &gw).unwrap();
        assert_eq!(cands.len(), 5);
        for c in &cands {
            assert!(c.contains("themes"), "candidate should mention background: {c}");
        }
    }

    #[test]
    fn finalize_accepts_first_fully_valid_candidate() {
        let tree = canonical();
        let coverage = vec![
            "Bad candidate one.".to_string(),
            "Good candidate two about themes.".to_string(),
        ];
        let mut mock = MockProvider::new();
        // candidate 1: extraction output that never parses as JSON
        mock.add_fixture(
            &candidate_request(&tree, &compose_c2(tree.base_query(), &coverage[0])),
            "not json at all",
        );
        let gw = Gateway::new(standard_registry(), Box::new(mock)).with_retry(RetryPolicy {
            base_delay_ms: 0,
            ..RetryPolicy::default()
        });
        let finalized = finalize_coverage(&tree, "t0", &coverage, &gw).unwrap();
        assert_eq!(finalized.chosen_index, 1);
        assert_eq!(finalized.candidates.len(), 3);
        for c in &finalized.candidates {
            assert_eq!(c.outline.paths().len(), 4);
        }
    }

    #[test]
    fn finalize_rejects_with_per_candidate_reasons() {
        let tree = canonical();
        let coverage: Vec<String> = (0..5).map(|i| format!("Candidate {i}.")).collect();
        let mut mock = MockProvider::new();
        for cov in &coverage {
            mock.add_fixture(
                &candidate_request(&tree, &compose_c2(tree.base_query(), cov)),
                r#"{"candidates": [{"queries": [{"path": "1", "text": "x"}]}]}"#,
            );
        }
        let gw = Gateway::new(standard_registry(), Box::new(mock)).with_retry(RetryPolicy {
            base_delay_ms: 0,
            ..RetryPolicy::default()
        });
        match finalize_coverage(&tree, "t0", &coverage, &gw) {
            Err(C2Error::Rejected(rej)) => {
                assert_eq!(rej.failures.len(), 5);
                assert!(rej.failures.iter().all(|r| !r.is_empty()));
            }
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn c2_record_serializes_with_interface_field_names() {
        let q = C2Query {
            id: "asqa-train-00001".into(),
            source: Some(SeedSource::Asqa),
            base_query: "Q?".into(),
            coverage_query: "Include X.".into(),
            background: "1.2".parse().unwrap(),
            intent: IntentOp::Inclusion,
            tree_ref: "asqa-train-00001".into(),
        };
        let json = serde_json::to_value(&q).unwrap();
        assert_eq!(json["background_path"], "1.2");
        assert_eq!(json["tree_id"], "asqa-train-00001");
        assert_eq!(json["intent"], "inclusion");
    }
}
