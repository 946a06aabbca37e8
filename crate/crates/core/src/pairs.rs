//! Training-set export: SFT records and the three DPO configurations.
//!
//! Every completion teaches the planner model to *sequentially* generate
//! the full subquery tree and then select one outline, so a completion is
//! the rendered tree, a fixed separator line, and the rendered outline -
//! and re-parses losslessly into `(tree, outline)`.
//!
//! DPO negatives come in two kinds: `scored` (the judge's lowest-scored
//! candidate - a hard negative with the *same* intent) and `synthetic`
//! (an opposite-intent outline built from the background subquery).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::c2::{C2Query, IntentOp};
use crate::judge::{rank_candidates, JudgeError, JudgedOutline};
use crate::outline::{parse_outline_block, synthetic_negative, Outline, SynNegError};
use crate::qtree::{parse_tree, render_tree, ParseError, QTree, TreePath};

/// One supervised fine-tuning record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: String,
    pub completion: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeKind {
    Scored,
    Synthetic,
}

/// One preference-pair record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoRecord {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub negative_kind: NegativeKind,
}

/// Separator between the generated tree and the selected outline inside a
/// completion.
pub const COMPLETION_SEPARATOR: &str = "### Selected Outline";

/// Instruction wrapper turning a C² string into the planner prompt.
pub fn planner_prompt(c2_text: &str) -> String {
    format!(
        "Decompose the question below into a tree of subqueries, then select the outline of \
         four connected subqueries that best satisfies the stated constraint.\n\n{c2_text}"
    )
}

/// Renders the tree listing, the separator line, and the outline block.
pub fn render_completion(tree: &QTree, outline: &Outline) -> String {
    format!(
        "{}{COMPLETION_SEPARATOR}\n{}",
        render_tree(tree),
        outline.render_block()
    )
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CompletionParseError {
    #[error("completion has no `{COMPLETION_SEPARATOR}` separator")]
    MissingSeparator,
    #[error("tree section: {0}")]
    Tree(ParseError),
    #[error("outline section: {0}")]
    Outline(ParseError),
}

/// Inverse of [`render_completion`]: recovers the tree (under the given base
/// query) and the selected outline's paths.
pub fn parse_completion(
    base_query: &str,
    completion: &str,
) -> Result<(QTree, Vec<TreePath>), CompletionParseError> {
    let marker = format!("\n{COMPLETION_SEPARATOR}\n");
    let split_at = completion
        .find(&marker)
        .ok_or(CompletionParseError::MissingSeparator)?;
    let tree_part = &completion[..split_at + 1];
    let outline_part = &completion[split_at + marker.len()..];
    let tree = parse_tree(base_query, tree_part).map_err(CompletionParseError::Tree)?;
    let outline = parse_outline_block(outline_part)
        .map_err(CompletionParseError::Outline)?
        .into_iter()
        .map(|(p, _)| p)
        .collect();
    Ok((tree, outline))
}

/// Stable per-item seed derivation: mixes a run seed with an item key.
pub fn derive_seed(base: u64, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PairsError {
    #[error("no tree with id `{0}`")]
    MissingTree(String),
    #[error("query {id} has {got} candidates, expected 3")]
    WrongCandidateCount { id: String, got: usize },
    #[error(transparent)]
    Judge(#[from] JudgeError),
    #[error("query {id}: {source}")]
    SynNeg { id: String, source: SynNegError },
    #[error("scored and synthetic streams disagree: {0}")]
    CombineMismatch(String),
}

/// Input to the SFT builder: one finalized query with its three candidates
/// and the lint verdict.
#[derive(Debug, Clone)]
pub struct SftInput {
    pub c2: C2Query,
    pub candidates: Vec<Outline>,
    pub noisy: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SftStats {
    pub queries: usize,
    pub noisy_dropped: usize,
    pub records: usize,
}

/// Emits one record per (query, candidate) - three per query - dropping
/// queries the lint filter flagged as noisy.
pub fn build_sft(
    inputs: &[SftInput],
    trees: &BTreeMap<String, QTree>,
) -> Result<(Vec<SftRecord>, SftStats), PairsError> {
    let mut records = Vec::new();
    let mut stats = SftStats {
        queries: inputs.len(),
        ..SftStats::default()
    };
    for input in inputs {
        if input.noisy {
            stats.noisy_dropped += 1;
            continue;
        }
        if input.candidates.len() != 3 {
            return Err(PairsError::WrongCandidateCount {
                id: input.c2.id.clone(),
                got: input.candidates.len(),
            });
        }
        let tree = trees
            .get(&input.c2.tree_ref)
            .ok_or_else(|| PairsError::MissingTree(input.c2.tree_ref.clone()))?;
        let prompt = planner_prompt(&input.c2.composed());
        for outline in &input.candidates {
            records.push(SftRecord {
                prompt: prompt.clone(),
                completion: render_completion(tree, outline),
            });
        }
    }
    stats.records = records.len();
    Ok((records, stats))
}

/// Input to the DPO builder: one query with its three judged candidates.
#[derive(Debug, Clone)]
pub struct DpoInput {
    pub c2: C2Query,
    pub judged: Vec<JudgedOutline>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DpoStats {
    pub queries: usize,
    pub ties_skipped: usize,
    pub records: usize,
}

/// Provenance of one scored pair, carried so synthetic negatives can be
/// built for the same prompt later.
#[derive(Debug, Clone)]
pub struct PairMeta {
    pub c2_id: String,
    pub tree_ref: String,
    pub background: TreePath,
    pub intent: IntentOp,
    pub chosen: Outline,
}

/// One record per non-tied query: chosen = highest-scored candidate,
/// rejected = lowest-scored. Queries whose highest and lowest scores
/// coincide are skipped and counted.
pub fn build_dpo(
    inputs: &[DpoInput],
    trees: &BTreeMap<String, QTree>,
) -> Result<(Vec<DpoRecord>, Vec<PairMeta>, DpoStats), PairsError> {
    let mut records = Vec::new();
    let mut meta = Vec::new();
    let mut stats = DpoStats {
        queries: inputs.len(),
        ..DpoStats::default()
    };
    for input in inputs {
        let ranking = rank_candidates(&input.judged)?;
        let best = &input.judged[ranking.best];
        let worst = &input.judged[ranking.worst];
        if ranking.tie || best.outline == worst.outline {
            stats.ties_skipped += 1;
            continue;
        }
        let tree = trees
            .get(&input.c2.tree_ref)
            .ok_or_else(|| PairsError::MissingTree(input.c2.tree_ref.clone()))?;
        records.push(DpoRecord {
            prompt: planner_prompt(&input.c2.composed()),
            chosen: render_completion(tree, &best.outline),
            rejected: render_completion(tree, &worst.outline),
            negative_kind: NegativeKind::Scored,
        });
        meta.push(PairMeta {
            c2_id: input.c2.id.clone(),
            tree_ref: input.c2.tree_ref.clone(),
            background: input.c2.background,
            intent: input.c2.intent,
            chosen: best.outline.clone(),
        });
    }
    stats.records = records.len();
    Ok((records, meta, stats))
}

/// Keeps every prompt and chosen completion of the scored stream but
/// replaces each rejected completion with a synthetic opposite-intent
/// outline.
pub fn build_synneg(
    scored: &[DpoRecord],
    meta: &[PairMeta],
    trees: &BTreeMap<String, QTree>,
    seed: u64,
) -> Result<Vec<DpoRecord>, PairsError> {
    if scored.len() != meta.len() {
        return Err(PairsError::CombineMismatch(format!(
            "{} records vs {} metadata rows",
            scored.len(),
            meta.len()
        )));
    }
    scored
        .iter()
        .zip(meta)
        .map(|(record, m)| {
            let tree = trees
                .get(&m.tree_ref)
                .ok_or_else(|| PairsError::MissingTree(m.tree_ref.clone()))?;
            let negative = synthetic_negative(
                tree,
                &m.tree_ref,
                &m.chosen,
                m.background,
                m.intent,
                derive_seed(seed, &m.c2_id),
            )
            .map_err(|source| PairsError::SynNeg {
                id: m.c2_id.clone(),
                source,
            })?;
            Ok(DpoRecord {
                prompt: record.prompt.clone(),
                chosen: record.chosen.clone(),
                rejected: render_completion(tree, &negative),
                negative_kind: NegativeKind::Synthetic,
            })
        })
        .collect()
}

/// Concatenates the scored stream with the synthetic stream (scored first).
/// Both must cover the same prompts with identical chosen completions.
pub fn build_combined(
    scored: &[DpoRecord],
    synneg: &[DpoRecord],
) -> Result<Vec<DpoRecord>, PairsError> {
    if scored.len() != synneg.len() {
        return Err(PairsError::CombineMismatch(format!(
            "{} scored vs {} synthetic records",
            scored.len(),
            synneg.len()
        )));
    }
    let scored_prompts: BTreeSet<(&str, &str)> = scored
        .iter()
        .map(|r| (r.prompt.as_str(), r.chosen.as_str()))
        .collect();
    let synneg_prompts: BTreeSet<(&str, &str)> = synneg
        .iter()
        .map(|r| (r.prompt.as_str(), r.chosen.as_str()))
        .collect();
    if scored_prompts != synneg_prompts {
        return Err(PairsError::CombineMismatch(
            "prompt/chosen sets differ between streams".into(),
        ));
    }
    Ok(scored.iter().chain(synneg).cloned().collect())
}

/// Counts emitted alongside the export files.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ExportCounts {
    pub queries: usize,
    pub noisy_dropped: usize,
    pub sft_records: usize,
    pub ties_skipped: usize,
    pub dpo_scored_records: usize,
    pub dpo_synneg_records: usize,
    pub dpo_combined_records: usize,
}

/// Renders the metadata sidecar: the export counts plus the training
/// configuration the datasets are intended for. Informational only -
/// nothing in the pipeline consumes it.
pub fn training_metadata_yaml(counts: &ExportCounts) -> String {
    format!(
        "counts:\n\
         \x20 queries: {}\n\
         \x20 noisy_dropped: {}\n\
         \x20 sft_records: {}\n\
         \x20 ties_skipped: {}\n\
         \x20 dpo_scored_records: {}\n\
         \x20 dpo_synneg_records: {}\n\
         \x20 dpo_combined_records: {}\n\
         training_hyperparameters:\n\
         \x20 sft:\n\
         \x20   epochs: 1\n\
         \x20   per_device_batch_size: 14\n\
         \x20   learning_rate: 2.0e-5\n\
         \x20   lr_schedule: cosine\n\
         \x20   warmup_ratio: 0.1\n\
         \x20   gradient_accumulation_steps: 1\n\
         \x20 dpo:\n\
         \x20   epochs: 1\n\
         \x20   per_device_batch_size: 8\n\
         \x20   learning_rate: 5.0e-7\n\
         \x20   lr_schedule: cosine\n\
         \x20   warmup_ratio: 0.1\n\
         \x20   gradient_accumulation_steps: 2\n\
         \x20   beta: 0.01\n",
        counts.queries,
        counts.noisy_dropped,
        counts.sft_records,
        counts.ties_skipped,
        counts.dpo_scored_records,
        counts.dpo_synneg_records,
        counts.dpo_combined_records,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::c2::SeedSource;
    use crate::qtree::parse_tree;

    const CANONICAL: &str = include_str!("../tests/fixtures/canonical_tree.txt");

    fn fixture() -> (BTreeMap<String, QTree>, C2Query) {
        let tree = parse_tree("Describe the film The Woman Hunt.", CANONICAL).unwrap();
        let c2 = C2Query {
            id: "t0".into(),
            source: Some(SeedSource::Asqa),
            base_query: tree.base_query().to_string(),
            coverage_query: "Please avoid discussing reviews or reception.".into(),
            background: "3".parse().unwrap(),
            intent: IntentOp::Exclusion,
            tree_ref: "t0".into(),
        };
        let mut trees = BTreeMap::new();
        trees.insert("t0".to_string(), tree);
        (trees, c2)
    }

    fn outline(trees: &BTreeMap<String, QTree>, specs: &[&str]) -> Outline {
        Outline::new(
            &trees["t0"],
            "t0",
            specs.iter().map(|s| s.parse().unwrap()),
        )
        .unwrap()
    }

    fn candidates(trees: &BTreeMap<String, QTree>) -> Vec<Outline> {
        vec![
            outline(trees, &["1", "1.1", "1.1.1", "1.1.2"]),
            outline(trees, &["2", "2.1", "2.1.1", "2.1.2"]),
            outline(trees, &["1", "1.2", "1.2.1", "1.2.3"]),
        ]
    }

    #[test]
    fn completion_round_trips() {
        let (trees, _) = fixture();
        let o = outline(&trees, &["1", "1.1", "1.1.1", "1.1.2"]);
        let completion = render_completion(&trees["t0"], &o);
        let (tree_back, paths) =
            parse_completion("Describe the film The Woman Hunt.", &completion).unwrap();
        assert_eq!(tree_back, trees["t0"]);
        assert_eq!(paths, o.paths());
    }

    #[test]
    fn sft_emits_three_per_query_and_drops_noisy() {
        let (trees, c2) = fixture();
        let make = |id: &str, noisy: bool| {
            let mut c2 = c2.clone();
            c2.id = id.to_string();
            SftInput {
                c2,
                candidates: candidates(&trees),
                noisy,
            }
        };
        let inputs: Vec<SftInput> = (0..10)
            .map(|i| make(&format!("q{i}"), i < 2))
            .collect();
        let (records, stats) = build_sft(&inputs, &trees).unwrap();
        assert_eq!(stats.queries, 10);
        assert_eq!(stats.noisy_dropped, 2);
        assert_eq!(records.len(), 24);
        for r in &records {
            let (_, paths) =
                parse_completion("Describe the film The Woman Hunt.", &r.completion).unwrap();
            assert_eq!(paths.len(), 4);
        }
    }

    fn judged(c2: &C2Query, outlines: &[Outline], scores: &[u8]) -> Vec<JudgedOutline> {
        outlines
            .iter()
            .zip(scores)
            .map(|(o, &score)| JudgedOutline {
                c2_id: c2.id.clone(),
                outline: o.clone(),
                score,
                rationale: "r".into(),
                judge_model: "m".into(),
            })
            .collect()
    }

    #[test]
    fn dpo_skips_ties_and_orders_by_score() {
        let (trees, c2) = fixture();
        let cands = candidates(&trees);
        let inputs: Vec<DpoInput> = [[2u8, 4, 3], [3, 3, 3], [5, 1, 1]]
            .iter()
            .enumerate()
            .map(|(i, scores)| {
                let mut c2 = c2.clone();
                c2.id = format!("q{i}");
                DpoInput {
                    judged: judged(&c2, &cands, scores),
                    c2,
                }
            })
            .collect();
        let (records, meta, stats) = build_dpo(&inputs, &trees).unwrap();
        assert_eq!(stats.queries, 3);
        assert_eq!(stats.ties_skipped, 1);
        assert_eq!(records.len(), 2);
        assert_eq!(meta.len(), 2);
        // (2,4,3): chosen is candidate #2, rejected candidate #1
        assert!(records[0].chosen.contains("2. Who directed The Woman Hunt?"));
        assert!(records[0].rejected.contains("1.1.1. What initiates the conflict"));
        assert!(records.iter().all(|r| r.chosen != r.rejected));
    }

    #[test]
    fn synneg_replaces_rejected_with_opposite_intent_outline() {
        let (trees, mut c2) = fixture();
        c2.intent = IntentOp::Exclusion;
        let cands = candidates(&trees);
        let inputs = vec![DpoInput {
            c2: c2.clone(),
            judged: judged(&c2, &cands, &[4, 2, 3]),
        }];
        let (scored, meta, _) = build_dpo(&inputs, &trees).unwrap();
        let synneg = build_synneg(&scored, &meta, &trees, 9).unwrap();
        assert_eq!(synneg.len(), 1);
        assert_eq!(synneg[0].prompt, scored[0].prompt);
        assert_eq!(synneg[0].chosen, scored[0].chosen);
        assert_eq!(synneg[0].negative_kind, NegativeKind::Synthetic);
        // exclusion intent: the synthetic negative must CONTAIN the background
        let (_, paths) =
            parse_completion(&trees["t0"].base_query().to_string(), &synneg[0].rejected).unwrap();
        assert!(paths.contains(&"3".parse().unwrap()));
    }

    #[test]
    fn combined_doubles_with_identical_chosen_per_prompt() {
        let (trees, c2) = fixture();
        let cands = candidates(&trees);
        let inputs: Vec<DpoInput> = (0..4)
            .map(|i| {
                let mut c2 = c2.clone();
                c2.id = format!("q{i}");
                c2.coverage_query = format!("Please avoid aspect {i} entirely.");
                DpoInput {
                    judged: judged(&c2, &cands, &[4, 2, 3]),
                    c2,
                }
            })
            .collect();
        let (scored, meta, _) = build_dpo(&inputs, &trees).unwrap();
        let synneg = build_synneg(&scored, &meta, &trees, 1).unwrap();
        let combined = build_combined(&scored, &synneg).unwrap();
        assert_eq!(combined.len(), 8);
        // per prompt: exactly two records with identical chosen
        let mut by_prompt: BTreeMap<&str, Vec<&DpoRecord>> = BTreeMap::new();
        for r in &combined {
            by_prompt.entry(r.prompt.as_str()).or_default().push(r);
        }
        assert_eq!(by_prompt.len(), 4);
        for rs in by_prompt.values() {
            assert_eq!(rs.len(), 2);
            assert_eq!(rs[0].chosen, rs[1].chosen);
        }
        let distinct: BTreeSet<(&str, &str)> = combined
            .iter()
            .map(|r| (r.prompt.as_str(), r.rejected.as_str()))
            .collect();
        assert_eq!(distinct.len(), combined.len(), "duplicate (prompt, rejected) pairs");
    }

    #[test]
    fn metadata_yaml_echoes_training_table() {
        let yaml = training_metadata_yaml(&ExportCounts::default());
        for needle in [
            "learning_rate: 2.0e-5",
            "per_device_batch_size: 14",
            "learning_rate: 5.0e-7",
            "per_device_batch_size: 8",
            "gradient_accumulation_steps: 2",
            "beta: 0.01",
            "lr_schedule: cosine",
            "warmup_ratio: 0.1",
        ] {
            assert!(yaml.contains(needle), "missing {needle}");
        }
    }
}
