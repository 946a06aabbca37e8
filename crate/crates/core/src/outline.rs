//! Outlines: four connected-or-neighboring tree nodes that serve as search
//! queries and content draft for one C² query.
//!
//! This module owns everything that manipulates outlines as path sets:
//! validity checking, exhaustive enumeration of every valid outline a tree
//! admits, the leaf-trimming heuristic for over-long candidates, the
//! seeded random-walk baseline, synthetic opposite-intent negatives, and
//! parsing of LLM-produced candidate JSON.
//!
//! Because the tree topology is fixed at 3x3x3, outline membership and
//! connectivity are purely structural: every syntactically valid
//! [`TreePath`] names a node of every valid tree. Path strings that do not
//! parse (e.g. `"1.4"`, `"1.1.1.1"`) surface as [`Violation::UnknownPath`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::c2::IntentOp;
use crate::qtree::{parse_listing_lines, ParseError, QTree, TreePath, NODE_COUNT};
use crate::text::{normalize_ws, relative_edit_distance};

/// Number of subqueries in a validated outline.
pub const OUTLINE_SIZE: usize = 4;

/// One reason a path set fails to be a valid outline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Not exactly four paths.
    WrongSize { got: usize },
    /// The same path appears more than once.
    Duplicate { path: TreePath },
    /// The induced graph under tree adjacency is not connected.
    Disconnected,
    /// A path reference that names no tree node.
    UnknownPath { given: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::WrongSize { got } => write!(f, "wrong size: {got} paths, expected 4"),
            Violation::Duplicate { path } => write!(f, "duplicate path {path}"),
            Violation::Disconnected => write!(f, "paths are not connected"),
            Violation::UnknownPath { given } => write!(f, "unknown path `{given}`"),
        }
    }
}

/// Outcome of outline validation: all violations, not just the first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlineVerdict {
    pub violations: Vec<Violation>,
}

impl OutlineVerdict {
    pub fn valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for OutlineVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.valid() {
            return write!(f, "valid");
        }
        let mut first = true;
        for v in &self.violations {
            if !first {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
            first = false;
        }
        Ok(())
    }
}

/// Adjacency of two nodes: parent-child or same-parent siblings.
fn adjacent(a: TreePath, b: TreePath) -> bool {
    a.parent() == Some(b) || b.parent() == Some(a) || (a != b && a.parent() == b.parent())
}

/// Whether a set of distinct paths induces a connected graph.
/// Vacuously true for fewer than two paths.
fn is_connected(paths: &BTreeSet<TreePath>) -> bool {
    let Some(&start) = paths.iter().next() else {
        return true;
    };
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(p) = stack.pop() {
        for &q in paths {
            if !seen.contains(&q) && adjacent(p, q) {
                seen.insert(q);
                stack.push(q);
            }
        }
    }
    seen.len() == paths.len()
}

/// Validates a typed path sequence as an outline, reporting every violation.
pub fn validate_outline(paths: &[TreePath]) -> OutlineVerdict {
    let mut violations = Vec::new();
    if paths.len() != OUTLINE_SIZE {
        violations.push(Violation::WrongSize { got: paths.len() });
    }
    let mut distinct = BTreeSet::new();
    let mut reported = BTreeSet::new();
    for &p in paths {
        if !distinct.insert(p) && reported.insert(p) {
            violations.push(Violation::Duplicate { path: p });
        }
    }
    if distinct.len() >= 2 && !is_connected(&distinct) {
        violations.push(Violation::Disconnected);
    }
    OutlineVerdict { violations }
}

/// Validates raw path strings, mapping unparseable references to
/// [`Violation::UnknownPath`] and checking the rest as usual.
pub fn validate_outline_refs<S: AsRef<str>>(refs: &[S]) -> OutlineVerdict {
    let mut violations = Vec::new();
    let mut paths = Vec::new();
    for r in refs {
        match r.as_ref().parse::<TreePath>() {
            Ok(p) => paths.push(p),
            Err(_) => violations.push(Violation::UnknownPath {
                given: r.as_ref().to_string(),
            }),
        }
    }
    if refs.len() != OUTLINE_SIZE {
        violations.push(Violation::WrongSize { got: refs.len() });
    }
    let mut distinct = BTreeSet::new();
    let mut reported = BTreeSet::new();
    for &p in &paths {
        if !distinct.insert(p) && reported.insert(p) {
            violations.push(Violation::Duplicate { path: p });
        }
    }
    if distinct.len() >= 2 && !is_connected(&distinct) {
        violations.push(Violation::Disconnected);
    }
    OutlineVerdict { violations }
}

/// A validated outline: four distinct connected paths in canonical
/// (preorder) order, with the subquery texts of the source tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outline {
    #[serde(rename = "tree_id")]
    tree_ref: String,
    paths: Vec<TreePath>,
    texts: Vec<String>,
}

/// Construction failure carrying the full verdict.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid outline: {0}")]
pub struct InvalidOutline(pub OutlineVerdict);

impl Outline {
    /// Canonicalizes (sorts) the paths, validates them, and attaches the
    /// tree's texts. Any permutation of the same four paths yields an equal
    /// `Outline` value.
    pub fn new(
        tree: &QTree,
        tree_ref: impl Into<String>,
        paths: impl IntoIterator<Item = TreePath>,
    ) -> Result<Self, InvalidOutline> {
        let mut paths: Vec<TreePath> = paths.into_iter().collect();
        paths.sort();
        let verdict = validate_outline(&paths);
        if !verdict.valid() {
            return Err(InvalidOutline(verdict));
        }
        let texts = paths.iter().map(|&p| tree.text(p).to_string()).collect();
        Ok(Self {
            tree_ref: tree_ref.into(),
            paths,
            texts,
        })
    }

    pub fn tree_ref(&self) -> &str {
        &self.tree_ref
    }

    pub fn paths(&self) -> &[TreePath] {
        &self.paths
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn contains(&self, path: TreePath) -> bool {
        self.paths.contains(&path)
    }

    /// Renders the outline in the indented listing format (a sub-listing of
    /// the tree), with a trailing newline.
    pub fn render_block(&self) -> String {
        let mut out = String::new();
        for (path, text) in self.paths.iter().zip(&self.texts) {
            for _ in 1..path.depth() {
                out.push_str("    ");
            }
            out.push_str(&path.to_string());
            out.push_str(". ");
            out.push_str(text);
            out.push('\n');
        }
        out
    }
}

/// Parses a rendered outline block back into `(path, text)` pairs.
pub fn parse_outline_block(raw: &str) -> Result<Vec<(TreePath, String)>, ParseError> {
    Ok(parse_listing_lines(raw)?
        .into_iter()
        .map(|(_, p, t)| (p, t))
        .collect())
}

// ---------------------------------------------------------------------------
// Exhaustive enumeration
// ---------------------------------------------------------------------------

/// Bitmask adjacency over the 39 fixed paths, indexed in preorder.
struct AdjacencyIndex {
    paths: Vec<TreePath>,
    adj: Vec<u64>,
}

impl AdjacencyIndex {
    fn build() -> Self {
        let paths = TreePath::all();
        let index: BTreeMap<TreePath, usize> =
            paths.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let adj = paths
            .iter()
            .map(|&p| {
                let mut mask = 0u64;
                for q in paths.iter().copied() {
                    if adjacent(p, q) {
                        mask |= 1 << index[&q];
                    }
                }
                mask
            })
            .collect();
        Self { paths, adj }
    }
}

/// Enumerates every valid outline of the tree, in canonical order.
///
/// Uses anchored connected-subgraph enumeration: for each anchor node, all
/// connected 4-sets whose minimum node is the anchor are grown through
/// exclusive neighborhoods, so each subgraph is produced exactly once.
pub fn enumerate_outlines(tree: &QTree, tree_ref: &str) -> Vec<Outline> {
    let ix = AdjacencyIndex::build();
    let mut masks = Vec::new();
    for v in 0..NODE_COUNT {
        let above = u64::MAX << (v + 1);
        let sub = 1u64 << v;
        extend_subgraph(sub, ix.adj[v] & above, above, &ix.adj, &mut masks);
    }
    let mut outlines: Vec<Outline> = masks
        .into_iter()
        .map(|mask| {
            let paths = (0..NODE_COUNT).filter(|&i| mask & (1 << i) != 0).map(|i| ix.paths[i]);
            Outline::new(tree, tree_ref, paths).expect("enumerated subgraphs are valid outlines")
        })
        .collect();
    outlines.sort_by(|a, b| a.paths.cmp(&b.paths));
    outlines
}

fn extend_subgraph(sub: u64, ext: u64, above: u64, adj: &[u64], out: &mut Vec<u64>) {
    if sub.count_ones() as usize == OUTLINE_SIZE {
        out.push(sub);
        return;
    }
    let closed = (0..NODE_COUNT)
        .filter(|&i| sub & (1 << i) != 0)
        .fold(sub, |acc, i| acc | adj[i]);
    let mut rest = ext;
    while rest != 0 {
        let w = rest.trailing_zeros() as usize;
        let wbit = 1u64 << w;
        rest &= !wbit;
        let new_ext = rest | (adj[w] & above & !closed);
        extend_subgraph(sub | wbit, new_ext, above, adj, out);
    }
}

// ---------------------------------------------------------------------------
// Trimming
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TrimError {
    /// Trimming is only defined for more than four paths.
    #[error("trim expects more than 4 paths, got {0}")]
    NotEnoughPaths(usize),
    #[error("duplicate path {0} in trim input")]
    DuplicatePath(TreePath),
    /// No sequence of leaf removals reaches a connected 4-set; the error
    /// carries the untrimmed input.
    #[error("no connected 4-path outline reachable by leaf removals")]
    Untrimmable { input: Vec<TreePath> },
}

fn component_sizes(paths: &BTreeSet<TreePath>) -> Vec<usize> {
    let mut remaining: BTreeSet<TreePath> = paths.clone();
    let mut sizes = Vec::new();
    while let Some(&start) = remaining.iter().next() {
        let mut stack = vec![start];
        remaining.remove(&start);
        let mut size = 1;
        while let Some(p) = stack.pop() {
            let linked: Vec<TreePath> = remaining
                .iter()
                .copied()
                .filter(|&q| adjacent(p, q))
                .collect();
            for q in linked {
                remaining.remove(&q);
                stack.push(q);
                size += 1;
            }
        }
        sizes.push(size);
    }
    sizes
}

/// Repeatedly removes the deepest leaf of the selected sub-tree (a node with
/// no selected children; ties broken by numerically largest path) until four
/// paths remain, skipping removals that would make a valid result
/// unreachable. Fails with [`TrimError::Untrimmable`] exactly when no leaf
/// removal sequence can reach a connected 4-set - that is, when no connected
/// component of the input has at least four nodes.
pub fn trim_outline(paths: &[TreePath]) -> Result<Vec<TreePath>, TrimError> {
    if paths.len() <= OUTLINE_SIZE {
        return Err(TrimError::NotEnoughPaths(paths.len()));
    }
    let mut selected: BTreeSet<TreePath> = BTreeSet::new();
    for &p in paths {
        if !selected.insert(p) {
            return Err(TrimError::DuplicatePath(p));
        }
    }
    while selected.len() > OUTLINE_SIZE {
        // Leaves of the induced sub-tree: deepest first, largest path first.
        let mut leaves: Vec<TreePath> = selected
            .iter()
            .copied()
            .filter(|p| {
                !(1..=3).any(|k| p.child(k).map(|c| selected.contains(&c)).unwrap_or(false))
            })
            .collect();
        leaves.sort_by(|a, b| b.depth().cmp(&a.depth()).then(b.cmp(a)));
        let admissible = leaves.iter().copied().find(|&leaf| {
            let mut rest = selected.clone();
            rest.remove(&leaf);
            component_sizes(&rest).into_iter().max().unwrap_or(0) >= OUTLINE_SIZE
        });
        match admissible {
            Some(leaf) => {
                selected.remove(&leaf);
            }
            None => {
                return Err(TrimError::Untrimmable {
                    input: paths.to_vec(),
                });
            }
        }
    }
    Ok(selected.into_iter().collect())
}

// ---------------------------------------------------------------------------
// Random baseline and synthetic negatives
// ---------------------------------------------------------------------------

/// Grows a connected 4-set from `start` by repeatedly selecting a uniformly
/// random unselected neighbor of the current selection.
fn grow_walk(rng: &mut ChaCha8Rng, start: TreePath) -> BTreeSet<TreePath> {
    let mut selected = BTreeSet::from([start]);
    while selected.len() < OUTLINE_SIZE {
        let frontier: Vec<TreePath> = selected
            .iter()
            .flat_map(|&p| neighbor_paths(p))
            .filter(|p| !selected.contains(p))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let pick = frontier[rng.random_range(0..frontier.len())];
        selected.insert(pick);
    }
    selected
}

fn neighbor_paths(p: TreePath) -> BTreeSet<TreePath> {
    let mut out = BTreeSet::new();
    if let Some(parent) = p.parent() {
        out.insert(parent);
    }
    for k in 1..=3 {
        if let Some(child) = p.child(k) {
            out.insert(child);
        }
    }
    out.extend(p.siblings());
    out
}

/// The random outline baseline: a uniformly random start node extended in
/// random directions until four subqueries are connected. Deterministic for
/// a fixed seed, including across processes.
pub fn random_outline(tree: &QTree, tree_ref: &str, seed: u64) -> Outline {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all = TreePath::all();
    let start = all[rng.random_range(0..all.len())];
    let paths = grow_walk(&mut rng, start);
    Outline::new(tree, tree_ref, paths).expect("random walks always produce valid outlines")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynNegError {
    /// The resampling budget was exhausted without finding a satisfying
    /// outline. Practically unreachable on 3x3x3 trees.
    #[error("no satisfying synthetic negative in {attempts} walks")]
    Unsatisfiable { attempts: u32 },
}

/// Walk budget for synthetic-negative rejection sampling.
pub const SYNNEG_WALK_BUDGET: u32 = 1_000;

/// Synthesizes an opposite-intent negative for a positive outline.
///
/// For an `Inclusion` positive (which covers the background subquery) the
/// negative must *not* contain the background: walks are seeded at a random
/// non-background node and resampled whenever they touch the background.
/// For an `Exclusion` positive the negative must contain the background:
/// walks are seeded at the background itself. Either way the result differs
/// from the positive.
pub fn synthetic_negative(
    tree: &QTree,
    tree_ref: &str,
    positive: &Outline,
    background: TreePath,
    intent: IntentOp,
    seed: u64,
) -> Result<Outline, SynNegError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all = TreePath::all();
    for _ in 0..SYNNEG_WALK_BUDGET {
        let paths = match intent {
            IntentOp::Inclusion => {
                let start = loop {
                    let candidate = all[rng.random_range(0..all.len())];
                    if candidate != background {
                        break candidate;
                    }
                };
                let paths = grow_walk(&mut rng, start);
                if paths.contains(&background) {
                    continue;
                }
                paths
            }
            IntentOp::Exclusion => grow_walk(&mut rng, background),
        };
        let ordered: Vec<TreePath> = paths.into_iter().collect();
        if ordered == positive.paths() {
            continue;
        }
        return Ok(Outline::new(tree, tree_ref, ordered)
            .expect("random walks always produce valid outlines"));
    }
    Err(SynNegError::Unsatisfiable {
        attempts: SYNNEG_WALK_BUDGET,
    })
}

// ---------------------------------------------------------------------------
// LLM candidate parsing
// ---------------------------------------------------------------------------

/// A candidate outline as extracted from LLM JSON, before any vetting.
/// Paths are kept as raw strings so unresolvable references can be reported
/// as [`Violation::UnknownPath`] instead of aborting the parse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCandidate {
    pub path_refs: Vec<String>,
    pub texts: Vec<String>,
}

/// Whole-document failure: nothing could be extracted.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CandidatesError {
    #[error("candidate output is not valid JSON: {0}")]
    Json(String),
    #[error("candidate output has no `candidates` array")]
    MissingCandidates,
}

/// Per-slot failure; other slots are unaffected.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CandidateError {
    #[error("candidate slot is malformed: {0}")]
    Shape(String),
    #[error("candidate has no queries")]
    Empty,
}

/// Parses the candidate-outline JSON contract:
/// `{"candidates": [{"queries": [{"path": "1.1", "text": "..."}]}, ...]}`.
///
/// Returns up to three slots, each parsed independently so one malformed
/// slot does not abort the others.
pub fn parse_candidates(raw: &str) -> Result<Vec<Result<RawCandidate, CandidateError>>, CandidatesError> {
    let value: serde_json::Value =
        serde_json::from_str(raw.trim()).map_err(|e| CandidatesError::Json(e.to_string()))?;
    let slots = value
        .get("candidates")
        .and_then(|c| c.as_array())
        .ok_or(CandidatesError::MissingCandidates)?;
    Ok(slots.iter().take(3).map(parse_candidate_slot).collect())
}

fn parse_candidate_slot(slot: &serde_json::Value) -> Result<RawCandidate, CandidateError> {
    let queries = slot
        .get("queries")
        .and_then(|q| q.as_array())
        .ok_or_else(|| CandidateError::Shape("expected object with a `queries` array".into()))?;
    if queries.is_empty() {
        return Err(CandidateError::Empty);
    }
    let mut path_refs = Vec::with_capacity(queries.len());
    let mut texts = Vec::with_capacity(queries.len());
    for q in queries {
        let path = q
            .get("path")
            .and_then(|p| p.as_str())
            .ok_or_else(|| CandidateError::Shape("query without a string `path`".into()))?;
        let text = q.get("text").and_then(|t| t.as_str()).unwrap_or_default();
        path_refs.push(path.to_string());
        texts.push(text.to_string());
    }
    Ok(RawCandidate { path_refs, texts })
}

/// Why a structurally parsed candidate was rejected during vetting.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CandidateFailure {
    #[error("invalid outline: {0}")]
    Invalid(OutlineVerdict),
    #[error(transparent)]
    Trim(#[from] TrimError),
}

/// A candidate text that drifted from the tree's node text beyond the
/// warning threshold; the tree text wins.
#[derive(Debug, Clone, PartialEq)]
pub struct TextDrift {
    pub path: TreePath,
    pub given: String,
    pub distance: f64,
}

/// Drift beyond this normalized edit distance is flagged as a warning.
pub const TEXT_DRIFT_THRESHOLD: f64 = 0.2;

/// A vetted candidate: trimmed if over-long, validated, with candidate texts
/// reconciled against the tree (the tree is ground truth).
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedCandidate {
    pub outline: Outline,
    pub trimmed: bool,
    pub warnings: Vec<TextDrift>,
}

/// Vets one raw candidate against a tree: resolves path references, trims
/// over-long candidates by the leaf rule, validates, and overwrites
/// candidate texts with the tree's (warning on heavy drift).
pub fn resolve_candidate(
    tree: &QTree,
    tree_ref: &str,
    raw: &RawCandidate,
) -> Result<ResolvedCandidate, CandidateFailure> {
    let mut paths = Vec::with_capacity(raw.path_refs.len());
    for r in &raw.path_refs {
        match r.parse::<TreePath>() {
            Ok(p) => paths.push(p),
            Err(_) => {
                return Err(CandidateFailure::Invalid(validate_outline_refs(
                    &raw.path_refs,
                )))
            }
        }
    }
    let distinct: BTreeSet<TreePath> = paths.iter().copied().collect();
    let kept: Vec<TreePath>;
    let trimmed;
    if distinct.len() == paths.len() && paths.len() > OUTLINE_SIZE {
        kept = trim_outline(&paths)?;
        trimmed = true;
    } else {
        let verdict = validate_outline(&paths);
        if !verdict.valid() {
            return Err(CandidateFailure::Invalid(verdict));
        }
        kept = {
            let mut sorted = paths.clone();
            sorted.sort();
            sorted
        };
        trimmed = false;
    }
    let mut warnings = Vec::new();
    for &p in &kept {
        let original = paths.iter().position(|&q| q == p).expect("kept paths come from input");
        let given = &raw.texts[original];
        if given.is_empty() {
            continue;
        }
        let distance =
            relative_edit_distance(&normalize_ws(given), &normalize_ws(tree.text(p)));
        if distance > TEXT_DRIFT_THRESHOLD {
            warnings.push(TextDrift {
                path: p,
                given: given.clone(),
                distance,
            });
        }
    }
    let outline =
        Outline::new(tree, tree_ref, kept).map_err(|e| CandidateFailure::Invalid(e.0))?;
    Ok(ResolvedCandidate {
        outline,
        trimmed,
        warnings,
    })
}
