//! The seven pipeline commands. Each consumes the previous stage's JSONL
//! and emits its own, with per-item failures logged rather than fatal.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use c2q_core::c2::{
    assign_intents, finalize_coverage, generate_coverage, lint_coverage, read_seed_queries,
    select_background, C2Query, CleanOptions, IntentOp, SeedSource, Split,
};
use c2q_core::gateway::{slots, CompletionRequest, Gateway, TPL_TREE_DECOMPOSE};
use c2q_core::judge::{rank_candidates, score_outline, JudgedOutline, Rubric};
use c2q_core::outline::{random_outline, Outline};
use c2q_core::pairs::{
    build_combined, build_dpo, build_sft, build_synneg, derive_seed, training_metadata_yaml,
    DpoInput, ExportCounts, SftInput,
};
use c2q_core::qtree::{parse_tree, QTree, TreePath};
use c2q_core::rag::{
    execute_plan, generate_response, plan_searches_for_mode, select_evidence, LexicalScorer,
    RagMode, SearchClient, SearchDoc, SearchError,
};
use c2q_core::stats::{render_report, Contingency, ReportInputs, ScoreTable};

use crate::config::PipelineConfig;
use crate::jsonl::{read_stage, write_stage, FileHeader, ResumableWriter};
use crate::runner::parallel_map;
use crate::CmdReport;

pub const SCHEMA_TREES: &str = "c2q/trees/v1";
pub const SCHEMA_C2: &str = "c2q/c2/v1";
pub const SCHEMA_CANDIDATES: &str = "c2q/candidates/v1";
pub const SCHEMA_JUDGED: &str = "c2q/judged/v1";
pub const SCHEMA_OUTLINES: &str = "c2q/outlines/v1";
pub const SCHEMA_SFT: &str = "c2q/sft/v1";
pub const SCHEMA_DPO: &str = "c2q/dpo/v1";
pub const SCHEMA_RAG: &str = "c2q/rag/v1";

fn header(cfg: &PipelineConfig, schema: &str) -> FileHeader {
    FileHeader::new(schema, &cfg.config_hash(), cfg.seed)
}

// ---------------------------------------------------------------------------
// Stage records
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeRecord {
    pub id: String,
    pub source: Option<SeedSource>,
    pub split: Option<Split>,
    pub tree: QTree,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub c2_id: String,
    pub candidates: Vec<Outline>,
}

/// Judged interface row: flat paths plus the candidate index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgedRow {
    pub c2_id: String,
    pub candidate_index: usize,
    pub paths: Vec<String>,
    pub score: u8,
    pub rationale: String,
    pub judge_model: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RagRow {
    pub c2_id: String,
    pub mode: RagMode,
    pub queries: Vec<String>,
    pub doc_urls: Vec<String>,
    pub passages: Vec<String>,
    pub response_markdown: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRow {
    pub c2_id: String,
    pub system: String,
    pub score: u8,
}

// ---------------------------------------------------------------------------
// build-trees
// ---------------------------------------------------------------------------

pub struct BuildTreesArgs {
    pub seeds: PathBuf,
    pub source: SeedSource,
    pub split: Split,
    pub clean: bool,
    pub limit: Option<usize>,
    pub out: PathBuf,
}

pub fn cmd_build_trees(
    cfg: &PipelineConfig,
    gateway: &Gateway,
    args: &BuildTreesArgs,
) -> anyhow::Result<CmdReport> {
    let file = File::open(&args.seeds)
        .with_context(|| format!("cannot open seed file {}", args.seeds.display()))?;
    let clean_opts = args.clean.then(CleanOptions::default);
    let seeds = read_seed_queries(
        BufReader::new(file),
        args.source,
        args.split,
        clean_opts.as_ref(),
    )?;
    let seeds: Vec<_> = match args.limit {
        Some(n) => seeds.into_iter().take(n).collect(),
        None => seeds,
    };

    let mut writer = ResumableWriter::open(&args.out, &header(cfg, SCHEMA_TREES))?;
    let mut report = CmdReport::default();
    let todo: Vec<(String, String)> = seeds
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("{}-{}-{:05}", args.source, args.split, i), s.text.clone()))
        .filter(|(id, _)| {
            if writer.contains(id) {
                report.skipped += 1;
                false
            } else {
                true
            }
        })
        .collect();

    let results = parallel_map(todo, cfg.workers, |(id, base_query)| {
        let req = CompletionRequest::new(
            TPL_TREE_DECOMPOSE,
            slots([("base_query", base_query.clone())]),
        );
        let text = gateway.complete(&req).map_err(|e| e.to_string())?.text;
        let tree = parse_tree(base_query.clone(), &text).map_err(|e| e.to_string())?;
        Ok::<_, String>(TreeRecord {
            id: id.clone(),
            source: Some(args.source),
            split: Some(args.split),
            tree,
        })
    });

    for result in results {
        match result {
            Ok(record) => {
                writer.write(&record)?;
                report.processed += 1;
            }
            Err(reason) => {
                log::warn!("build-trees: rejected: {reason}");
                report.failed += 1;
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// gen-c2
// ---------------------------------------------------------------------------

pub struct GenC2Args {
    pub trees: PathBuf,
    pub c2_out: PathBuf,
    pub candidates_out: PathBuf,
}

pub fn cmd_gen_c2(
    cfg: &PipelineConfig,
    gateway: &Gateway,
    args: &GenC2Args,
) -> anyhow::Result<CmdReport> {
    let trees = read_stage::<TreeRecord>(&args.trees, SCHEMA_TREES)?;
    let (inc, exc) = cfg.intent_ratio_parts()?;
    let intents = assign_intents(trees.rows.len(), inc, exc).map_err(|e| anyhow::anyhow!("{e}"))?;

    let mut c2_writer = ResumableWriter::open(&args.c2_out, &header(cfg, SCHEMA_C2))?;
    let mut cand_writer =
        ResumableWriter::open(&args.candidates_out, &header(cfg, SCHEMA_CANDIDATES))?;
    let mut report = CmdReport::default();

    let todo: Vec<(TreeRecord, IntentOp)> = trees
        .rows
        .into_iter()
        .zip(intents)
        .filter(|(record, _)| {
            if c2_writer.contains(&record.id) {
                report.skipped += 1;
                false
            } else {
                true
            }
        })
        .collect();

    let results = parallel_map(todo, cfg.workers, |(record, intent)| {
        let item_seed = derive_seed(cfg.seed, &record.id);
        let background = select_background(&record.tree, item_seed);
        let coverage = generate_coverage(&record.tree, background, *intent, gateway)
            .map_err(|e| e.to_string())?;
        let finalized = finalize_coverage(&record.tree, &record.id, &coverage, gateway)
            .map_err(|e| e.to_string())?;
        let c2 = C2Query {
            id: record.id.clone(),
            source: record.source,
            base_query: record.tree.base_query().to_string(),
            coverage_query: finalized.coverage_query.clone(),
            background,
            intent: *intent,
            tree_ref: record.id.clone(),
        };
        let candidates = CandidateRecord {
            c2_id: record.id.clone(),
            candidates: finalized
                .candidates
                .iter()
                .map(|c| c.outline.clone())
                .collect(),
        };
        Ok::<_, String>((c2, candidates))
    });

    for result in results {
        match result {
            Ok((c2, candidates)) => {
                c2_writer.write(&c2)?;
                cand_writer.write(&candidates)?;
                report.processed += 1;
            }
            Err(reason) => {
                log::warn!("gen-c2: rejected: {reason}");
                report.failed += 1;
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// judge
// ---------------------------------------------------------------------------

pub struct JudgeArgs {
    pub c2: PathBuf,
    pub candidates: PathBuf,
    pub out: PathBuf,
}

pub fn cmd_judge(
    cfg: &PipelineConfig,
    gateway: &Gateway,
    args: &JudgeArgs,
) -> anyhow::Result<CmdReport> {
    let c2 = read_stage::<C2Query>(&args.c2, SCHEMA_C2)?;
    let candidates = read_stage::<CandidateRecord>(&args.candidates, SCHEMA_CANDIDATES)?;
    let by_id: BTreeMap<String, Vec<Outline>> = candidates
        .rows
        .into_iter()
        .map(|r| (r.c2_id, r.candidates))
        .collect();

    let mut writer = ResumableWriter::open(&args.out, &header(cfg, SCHEMA_JUDGED))?;
    let mut report = CmdReport::default();
    let rubric = Rubric::standard();

    let todo: Vec<(C2Query, Vec<Outline>)> = c2
        .rows
        .into_iter()
        .filter(|q| {
            if writer.contains(&q.id) {
                report.skipped += 1;
                false
            } else {
                true
            }
        })
        .filter_map(|q| match by_id.get(&q.id) {
            Some(outlines) => Some((q, outlines.clone())),
            None => {
                log::warn!("judge: no candidates for {}", q.id);
                report.failed += 1;
                None
            }
        })
        .collect();

    let results = parallel_map(todo, cfg.workers, |(q, outlines)| {
        let mut rows = Vec::with_capacity(outlines.len());
        for (index, outline) in outlines.iter().enumerate() {
            let judged = score_outline(q, outline, &rubric, gateway).map_err(|e| e.to_string())?;
            rows.push(JudgedRow {
                c2_id: q.id.clone(),
                candidate_index: index,
                paths: outline.paths().iter().map(|p| p.to_string()).collect(),
                score: judged.score,
                rationale: judged.rationale,
                judge_model: judged.judge_model,
            });
        }
        Ok::<_, String>(rows)
    });

    for result in results {
        match result {
            Ok(rows) => {
                for row in &rows {
                    writer.write(row)?;
                }
                report.processed += 1;
            }
            Err(reason) => {
                log::warn!("judge: failed: {reason}");
                report.failed += 1;
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// export
// ---------------------------------------------------------------------------

pub struct ExportArgs {
    pub trees: PathBuf,
    pub c2: PathBuf,
    pub candidates: PathBuf,
    pub judged: PathBuf,
    pub out_dir: PathBuf,
}

pub fn cmd_export(cfg: &PipelineConfig, args: &ExportArgs) -> anyhow::Result<CmdReport> {
    let trees = read_stage::<TreeRecord>(&args.trees, SCHEMA_TREES)?;
    let c2 = read_stage::<C2Query>(&args.c2, SCHEMA_C2)?;
    let candidates = read_stage::<CandidateRecord>(&args.candidates, SCHEMA_CANDIDATES)?;
    let judged = read_stage::<JudgedRow>(&args.judged, SCHEMA_JUDGED)?;

    let tree_map: BTreeMap<String, QTree> = trees
        .rows
        .into_iter()
        .map(|r| (r.id, r.tree))
        .collect();
    let cand_map: BTreeMap<String, Vec<Outline>> = candidates
        .rows
        .into_iter()
        .map(|r| (r.c2_id, r.candidates))
        .collect();
    let mut judged_map: BTreeMap<String, Vec<JudgedRow>> = BTreeMap::new();
    for row in judged.rows {
        judged_map.entry(row.c2_id.clone()).or_default().push(row);
    }

    let noise = CleanOptions::default().noise_phrases;
    let mut sft_inputs = Vec::new();
    let mut dpo_inputs = Vec::new();
    let mut report = CmdReport::default();
    for q in &c2.rows {
        let Some(cands) = cand_map.get(&q.id) else {
            log::warn!("export: no candidates for {}", q.id);
            report.failed += 1;
            continue;
        };
        let Some(tree) = tree_map.get(&q.tree_ref) else {
            log::warn!("export: no tree {} for {}", q.tree_ref, q.id);
            report.failed += 1;
            continue;
        };
        let noisy = !lint_coverage(&q.coverage_query, tree.text(q.background), &noise).is_empty();
        sft_inputs.push(SftInput {
            c2: q.clone(),
            candidates: cands.clone(),
            noisy,
        });
        if let Some(mut rows) = judged_map.get(&q.id).cloned() {
            rows.sort_by_key(|r| r.candidate_index);
            if rows.len() == cands.len() {
                let judged_outlines: Vec<JudgedOutline> = rows
                    .iter()
                    .zip(cands)
                    .map(|(row, outline)| JudgedOutline {
                        c2_id: row.c2_id.clone(),
                        outline: outline.clone(),
                        score: row.score,
                        rationale: row.rationale.clone(),
                        judge_model: row.judge_model.clone(),
                    })
                    .collect();
                dpo_inputs.push(DpoInput {
                    c2: q.clone(),
                    judged: judged_outlines,
                });
            } else {
                log::warn!("export: {} has {} judged rows, expected 3", q.id, rows.len());
                report.failed += 1;
            }
        }
        report.processed += 1;
    }

    let (sft_records, sft_stats) = build_sft(&sft_inputs, &tree_map)?;
    let (dpo_records, meta, dpo_stats) = build_dpo(&dpo_inputs, &tree_map)?;
    let synneg = build_synneg(&dpo_records, &meta, &tree_map, cfg.seed)?;
    let combined = build_combined(&dpo_records, &synneg)?;

    std::fs::create_dir_all(&args.out_dir)?;
    write_stage(
        &args.out_dir.join("sft.jsonl"),
        &header(cfg, SCHEMA_SFT),
        &sft_records,
    )?;
    write_stage(
        &args.out_dir.join("dpo_scored.jsonl"),
        &header(cfg, SCHEMA_DPO),
        &dpo_records,
    )?;
    write_stage(
        &args.out_dir.join("dpo_synneg.jsonl"),
        &header(cfg, SCHEMA_DPO),
        &synneg,
    )?;
    write_stage(
        &args.out_dir.join("dpo_combined.jsonl"),
        &header(cfg, SCHEMA_DPO),
        &combined,
    )?;

    let counts = ExportCounts {
        queries: sft_stats.queries,
        noisy_dropped: sft_stats.noisy_dropped,
        sft_records: sft_stats.records,
        ties_skipped: dpo_stats.ties_skipped,
        dpo_scored_records: dpo_records.len(),
        dpo_synneg_records: synneg.len(),
        dpo_combined_records: combined.len(),
    };
    let meta_header = header(cfg, "c2q/metadata/v1");
    let yaml = format!(
        "# {} version={} config_hash={} seed={}\n{}",
        meta_header.schema,
        meta_header.version,
        meta_header.config_hash,
        meta_header.seed,
        training_metadata_yaml(&counts)
    );
    std::fs::write(args.out_dir.join("metadata.yaml"), yaml)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// baseline
// ---------------------------------------------------------------------------

pub struct BaselineArgs {
    pub trees: PathBuf,
    pub per_tree: usize,
    pub out: PathBuf,
}

pub fn cmd_baseline(cfg: &PipelineConfig, args: &BaselineArgs) -> anyhow::Result<CmdReport> {
    let trees = read_stage::<TreeRecord>(&args.trees, SCHEMA_TREES)?;
    let mut rows = Vec::new();
    for record in &trees.rows {
        for k in 0..args.per_tree {
            let seed = derive_seed(cfg.seed, &format!("{}/{k}", record.id));
            rows.push(random_outline(&record.tree, &record.id, seed));
        }
    }
    let processed = rows.len();
    write_stage(&args.out, &header(cfg, SCHEMA_OUTLINES), &rows)?;
    Ok(CmdReport {
        processed,
        ..CmdReport::default()
    })
}

// ---------------------------------------------------------------------------
// rag
// ---------------------------------------------------------------------------

pub struct RagArgs {
    pub c2: PathBuf,
    pub candidates: Option<PathBuf>,
    pub judged: Option<PathBuf>,
    pub mode: RagMode,
    pub out: PathBuf,
}

/// Deterministic offline search results derived from the query hash, so a
/// mock pipeline can exercise the full RAG path without fixtures.
pub struct SyntheticSearchClient;

impl SearchClient for SyntheticSearchClient {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchDoc>, SearchError> {
        let digest = hex::encode(&Sha256::digest(query.as_bytes())[..6]);
        Ok((1..=k as u32)
            .map(|rank| SearchDoc {
                query_used: query.to_string(),
                rank,
                url: format!("https://search.invalid/{digest}/{rank}"),
                title: format!("Result {rank} for {digest}"),
                body: format!(
                    "General background unrelated to the request.\n\n\
                     Details addressing: {query} (result {rank}).\n\n\
                     Closing remarks of document {rank}."
                ),
            })
            .collect())
    }
}

/// Picks the best-judged candidate outline per query.
fn best_outlines(
    judged: &[JudgedRow],
    candidates: &BTreeMap<String, Vec<Outline>>,
) -> anyhow::Result<BTreeMap<String, Outline>> {
    let mut by_id: BTreeMap<String, Vec<JudgedRow>> = BTreeMap::new();
    for row in judged {
        by_id.entry(row.c2_id.clone()).or_default().push(row.clone());
    }
    let mut best = BTreeMap::new();
    for (id, mut rows) in by_id {
        rows.sort_by_key(|r| r.candidate_index);
        let Some(outlines) = candidates.get(&id) else {
            continue;
        };
        if rows.len() != outlines.len() {
            continue;
        }
        let judged_outlines: Vec<JudgedOutline> = rows
            .iter()
            .zip(outlines)
            .map(|(row, outline)| JudgedOutline {
                c2_id: id.clone(),
                outline: outline.clone(),
                score: row.score,
                rationale: row.rationale.clone(),
                judge_model: row.judge_model.clone(),
            })
            .collect();
        let ranking = rank_candidates(&judged_outlines)?;
        best.insert(id, judged_outlines[ranking.best].outline.clone());
    }
    Ok(best)
}

pub fn cmd_rag(
    cfg: &PipelineConfig,
    gateway: &Gateway,
    search: &dyn SearchClient,
    args: &RagArgs,
) -> anyhow::Result<CmdReport> {
    let c2 = read_stage::<C2Query>(&args.c2, SCHEMA_C2)?;
    let best = match (args.mode, &args.judged, &args.candidates) {
        (RagMode::Outline, Some(judged_path), Some(cand_path)) => {
            let judged = read_stage::<JudgedRow>(judged_path, SCHEMA_JUDGED)?;
            let candidates = read_stage::<CandidateRecord>(cand_path, SCHEMA_CANDIDATES)?;
            let cand_map = candidates
                .rows
                .into_iter()
                .map(|r| (r.c2_id, r.candidates))
                .collect();
            best_outlines(&judged.rows, &cand_map)?
        }
        (RagMode::Outline, _, _) => {
            anyhow::bail!("outline mode needs --judged and --candidates")
        }
        (RagMode::Vanilla, _, _) => BTreeMap::new(),
    };

    let mut writer = ResumableWriter::open(&args.out, &header(cfg, SCHEMA_RAG))?;
    let mut report = CmdReport::default();
    let todo: Vec<C2Query> = c2
        .rows
        .into_iter()
        .filter(|q| {
            if writer.contains(&q.id) {
                report.skipped += 1;
                false
            } else {
                true
            }
        })
        .collect();

    let results = parallel_map(todo, cfg.workers, |q| {
        let outline = best.get(&q.id);
        if args.mode == RagMode::Outline && outline.is_none() {
            return Err(format!("no judged outline for {}", q.id));
        }
        let plan =
            plan_searches_for_mode(q, args.mode, outline).map_err(|e| e.to_string())?;
        let outcome = execute_plan(&plan, search);
        for (query, err) in &outcome.failures {
            log::warn!("rag: search failed for `{query}`: {err}");
        }
        let (evidence, skipped) =
            select_evidence(&outcome.docs, &LexicalScorer).map_err(|e| e.to_string())?;
        for s in &skipped {
            log::warn!("rag: skipped document {}: {}", s.url, s.reason);
        }
        let response =
            generate_response(q, outline, &evidence, gateway).map_err(|e| e.to_string())?;
        Ok::<_, String>(RagRow {
            c2_id: q.id.clone(),
            mode: args.mode,
            queries: plan.queries,
            doc_urls: outcome.docs.iter().map(|d| d.url.clone()).collect(),
            passages: evidence.iter().map(|e| e.passage.clone()).collect(),
            response_markdown: response,
        })
    });

    for result in results {
        match result {
            Ok(row) => {
                writer.write(&row)?;
                report.processed += 1;
            }
            Err(reason) => {
                log::warn!("rag: failed: {reason}");
                report.failed += 1;
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

pub struct StatsArgs {
    pub scores: PathBuf,
    pub intents: Option<PathBuf>,
    /// (label, csv path) pairs.
    pub contingencies: Vec<(String, PathBuf)>,
    pub out: PathBuf,
}

/// Reads JSONL rows, tolerating (and skipping) a leading header line, so
/// externally produced score files work unchanged.
fn read_rows_lenient<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let file =
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 && serde_json::from_str::<FileHeader>(&line).is_ok() {
            continue;
        }
        rows.push(
            serde_json::from_str(&line)
                .map_err(|e| anyhow::anyhow!("{} line {}: {e}", path.display(), i + 1))?,
        );
    }
    Ok(rows)
}

#[derive(Debug, Deserialize)]
struct IntentRow {
    #[serde(alias = "id")]
    c2_id: String,
    intent: IntentOp,
}

/// Parses a 2x2 contingency CSV: two `a,b` / `c,d` rows, or one
/// `a,b,c,d` row; `#`-prefixed and non-numeric lines are ignored.
pub fn parse_contingency_csv(path: &Path) -> anyhow::Result<Contingency> {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut cells = Vec::new();
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: Vec<u64> = line
            .split(',')
            .map(str::trim)
            .map(str::parse)
            .collect::<Result<_, _>>()
            .unwrap_or_default();
        cells.extend(parsed);
    }
    if cells.len() != 4 {
        anyhow::bail!(
            "{} must contain exactly 4 counts (a,b / c,d), found {}",
            path.display(),
            cells.len()
        );
    }
    Ok(Contingency::new(cells[0], cells[1], cells[2], cells[3]))
}

pub fn cmd_stats(cfg: &PipelineConfig, args: &StatsArgs) -> anyhow::Result<CmdReport> {
    let rows: Vec<ScoreRow> = read_rows_lenient(&args.scores)?;
    // group per system, preserving first-appearance order
    let mut order: Vec<String> = Vec::new();
    let mut tables: BTreeMap<String, ScoreTable> = BTreeMap::new();
    for row in &rows {
        if !tables.contains_key(&row.system) {
            order.push(row.system.clone());
            tables.insert(row.system.clone(), ScoreTable::new(&row.system));
        }
        tables
            .get_mut(&row.system)
            .expect("table just inserted")
            .insert(&row.c2_id, row.score)
            .map_err(|e| anyhow::anyhow!("{}: {e}", args.scores.display()))?;
    }
    let tables: Vec<ScoreTable> = order.into_iter().map(|s| tables.remove(&s).unwrap()).collect();

    let intents = match &args.intents {
        Some(path) => {
            let rows: Vec<IntentRow> = read_rows_lenient(path)?;
            Some(rows.into_iter().map(|r| (r.c2_id, r.intent)).collect())
        }
        None => None,
    };

    let mut contingencies = Vec::new();
    for (label, path) in &args.contingencies {
        contingencies.push((label.clone(), parse_contingency_csv(path)?));
    }

    let report_md = render_report(&ReportInputs {
        tables,
        intents,
        contingencies,
    })?;
    let h = header(cfg, "c2q/report/v1");
    let full = format!(
        "<!-- {} version={} config_hash={} seed={} -->\n{}",
        h.schema, h.version, h.config_hash, h.seed, report_md
    );
    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&args.out, full)?;
    Ok(CmdReport {
        processed: rows.len(),
        ..CmdReport::default()
    })
}

