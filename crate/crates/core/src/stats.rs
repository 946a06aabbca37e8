//! Evaluation statistics: mean/SD score tables, pairwise win/tie/loss,
//! intent-operation breakdown, the exact McNemar test, Pearson correlation,
//! and the Markdown report that mirrors the evaluation tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::c2::IntentOp;

/// Scores of one system keyed by C² query id. Scores are 1-5; ids unique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreTable {
    system: String,
    scores: BTreeMap<String, u8>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("score {score} for id `{id}` is outside 1-5")]
    ScoreOutOfRange { id: String, score: u8 },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("need at least {needed} scores, got {got}")]
    TooFewScores { needed: usize, got: usize },
    #[error("tables cover different id sets ({left} vs {right} ids, first mismatch `{example}`)")]
    IdMismatch {
        left: usize,
        right: usize,
        example: String,
    },
    #[error("id `{0}` has no intent operation")]
    MissingIntent(String),
    #[error("contingency table has no discordant pairs")]
    NoDiscordantPairs,
    #[error("input lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("variance is zero in at least one input")]
    DegenerateVariance,
}

impl ScoreTable {
    pub fn new(system: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            scores: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, score: u8) -> Result<(), StatsError> {
        let id = id.into();
        if !(1..=5).contains(&score) {
            return Err(StatsError::ScoreOutOfRange { id, score });
        }
        if self.scores.contains_key(&id) {
            return Err(StatsError::DuplicateId(id));
        }
        self.scores.insert(id, score);
        Ok(())
    }

    pub fn system(&self) -> &str {
        &self.system
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u8)> {
        self.scores.iter().map(|(id, &s)| (id.as_str(), s))
    }
}

fn mean_sd_of(values: &[f64]) -> Result<(f64, f64), StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFewScores {
            needed: 2,
            got: values.len(),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

/// Arithmetic mean and sample standard deviation (n-1 denominator).
pub fn mean_sd(table: &ScoreTable) -> Result<(f64, f64), StatsError> {
    let values: Vec<f64> = table.iter().map(|(_, s)| f64::from(s)).collect();
    mean_sd_of(&values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Pairwise {
    pub win: usize,
    pub tie: usize,
    pub loss: usize,
}

/// Per-id comparison of two systems over identical id sets; `win` counts
/// ids where the first system scores strictly higher.
pub fn pairwise(a: &ScoreTable, b: &ScoreTable) -> Result<Pairwise, StatsError> {
    if a.scores.len() != b.scores.len()
        || a.scores.keys().zip(b.scores.keys()).any(|(x, y)| x != y)
    {
        let example = a
            .scores
            .keys()
            .find(|k| !b.scores.contains_key(*k))
            .or_else(|| b.scores.keys().find(|k| !a.scores.contains_key(*k)))
            .cloned()
            .unwrap_or_default();
        return Err(StatsError::IdMismatch {
            left: a.scores.len(),
            right: b.scores.len(),
            example,
        });
    }
    let mut out = Pairwise::default();
    for (id, &sa) in &a.scores {
        let sb = b.scores[id];
        match sa.cmp(&sb) {
            std::cmp::Ordering::Greater => out.win += 1,
            std::cmp::Ordering::Equal => out.tie += 1,
            std::cmp::Ordering::Less => out.loss += 1,
        }
    }
    Ok(out)
}

/// Mean/SD per intent operation; a bucket with no scores is absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IntentBreakdown {
    pub inclusion: Option<(f64, f64)>,
    pub exclusion: Option<(f64, f64)>,
}

pub fn intent_breakdown(
    table: &ScoreTable,
    intents: &BTreeMap<String, IntentOp>,
) -> Result<IntentBreakdown, StatsError> {
    let mut inc = Vec::new();
    let mut exc = Vec::new();
    for (id, score) in table.iter() {
        match intents.get(id) {
            Some(IntentOp::Inclusion) => inc.push(f64::from(score)),
            Some(IntentOp::Exclusion) => exc.push(f64::from(score)),
            None => return Err(StatsError::MissingIntent(id.to_string())),
        }
    }
    let bucket = |values: &[f64]| -> Result<Option<(f64, f64)>, StatsError> {
        if values.is_empty() {
            Ok(None)
        } else {
            mean_sd_of(values).map(Some)
        }
    };
    Ok(IntentBreakdown {
        inclusion: bucket(&inc)?,
        exclusion: bucket(&exc)?,
    })
}

/// 2x2 paired-outcome counts. Rows are system X (unsatisfactory /
/// satisfactory), columns system Y: `a` = both unsatisfactory, `b` =
/// X-unsatisfactory and Y-satisfactory, `c` = X-satisfactory and
/// Y-unsatisfactory, `d` = both satisfactory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contingency {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl Contingency {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    /// min(b, c), the exact-test statistic.
    pub statistic: u64,
    /// Two-sided exact binomial p-value, clamped at 1.
    pub p_value: f64,
}

/// Exact McNemar test over the discordant pairs: statistic = min(b, c),
/// p = min(1, 2 * sum_{i=0..min(b,c)} C(b+c, i) / 2^(b+c)), computed in
/// log space so large counts cannot underflow.
pub fn mcnemar_exact(t: &Contingency) -> Result<McNemar, StatsError> {
    let n = (t.b + t.c) as usize;
    if n == 0 {
        return Err(StatsError::NoDiscordantPairs);
    }
    let m = t.b.min(t.c) as usize;
    // ln k! table up to n
    let mut ln_fact = vec![0.0f64; n + 1];
    for k in 1..=n {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    let ln2 = std::f64::consts::LN_2;
    let terms: Vec<f64> = (0..=m)
        .map(|i| ln_fact[n] - ln_fact[i] - ln_fact[n - i] - n as f64 * ln2)
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    let p = (2.0 * lse.exp()).min(1.0);
    Ok(McNemar {
        statistic: m as u64,
        p_value: p,
    })
}

/// Product-moment correlation in [-1, 1].
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewScores {
            needed: 3,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    Ok(cov / (vx * vy).sqrt())
}

/// p-value rendering: four decimal places, "< 0.001" below a thousandth.
pub fn format_p(p: f64) -> String {
    if p < 0.001 {
        "< 0.001".to_string()
    } else {
        format!("{p:.4}")
    }
}

/// Everything the Markdown report can carry; empty sections are omitted.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    /// Score tables in presentation order.
    pub tables: Vec<ScoreTable>,
    /// Intent operation per id, for the per-intent section.
    pub intents: Option<BTreeMap<String, IntentOp>>,
    /// Labeled contingency tables for McNemar tests.
    pub contingencies: Vec<(String, Contingency)>,
}

/// Renders the evaluation report: mean/SD per system, pairwise comparisons
/// over shared id sets, the per-intent breakdown, and exact McNemar tests.
pub fn render_report(inputs: &ReportInputs) -> Result<String, StatsError> {
    let mut out = String::from("# Evaluation Report\n");

    if !inputs.tables.is_empty() {
        out.push_str("\n## Outline scores (five-point Likert)\n\n");
        out.push_str("| System | Mean | SD | n |\n|---|---|---|---|\n");
        for table in &inputs.tables {
            let (mean, sd) = mean_sd(table)?;
            out.push_str(&format!(
                "| {} | {:.2} | {:.2} | {} |\n",
                table.system(),
                mean,
                sd,
                table.len()
            ));
        }
    }

    let mut pair_rows = Vec::new();
    for (i, a) in inputs.tables.iter().enumerate() {
        for b in inputs.tables.iter().skip(i + 1) {
            if let Ok(p) = pairwise(a, b) {
                pair_rows.push((a.system().to_string(), b.system().to_string(), p));
            }
        }
    }
    if !pair_rows.is_empty() {
        out.push_str("\n## Pairwise comparison\n\n");
        out.push_str("| A | B | A wins | Tie | B wins |\n|---|---|---|---|---|\n");
        for (a, b, p) in pair_rows {
            out.push_str(&format!("| {a} | {b} | {} | {} | {} |\n", p.win, p.tie, p.loss));
        }
    }

    if let Some(intents) = &inputs.intents {
        let mut rows = Vec::new();
        for table in &inputs.tables {
            if let Ok(breakdown) = intent_breakdown(table, intents) {
                rows.push((table.system().to_string(), breakdown));
            }
        }
        if !rows.is_empty() {
            out.push_str("\n## Scores by intent operation\n\n");
            out.push_str(
                "| System | Inclusion mean | Inclusion SD | Exclusion mean | Exclusion SD |\n\
                 |---|---|---|---|---|\n",
            );
            let cell = |v: Option<(f64, f64)>, pick_mean: bool| match v {
                Some((m, s)) => format!("{:.2}", if pick_mean { m } else { s }),
                None => "-".to_string(),
            };
            for (system, b) in rows {
                out.push_str(&format!(
                    "| {system} | {} | {} | {} | {} |\n",
                    cell(b.inclusion, true),
                    cell(b.inclusion, false),
                    cell(b.exclusion, true),
                    cell(b.exclusion, false),
                ));
            }
        }
    }

    if !inputs.contingencies.is_empty() {
        out.push_str("\n## McNemar exact tests\n\n");
        for (label, table) in &inputs.contingencies {
            let result = mcnemar_exact(table)?;
            out.push_str(&format!(
                "- {label}: statistic {}, p {} (n = {}, discordant = {})\n",
                result.statistic,
                format_p(result.p_value),
                table.total(),
                table.b + table.c,
            ));
        }
    }

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(system: &str, scores: &[u8]) -> ScoreTable {
        let mut t = ScoreTable::new(system);
        for (i, &s) in scores.iter().enumerate() {
            t.insert(format!("q{i:04}"), s).unwrap();
        }
        t
    }

    #[test]
    fn mean_sd_hand_fixtures() {
        let (m, s) = mean_sd(&table("x", &[3, 3, 3, 3])).unwrap();
        assert_eq!((m, s), (3.0, 0.0));
        let (m, s) = mean_sd(&table("x", &[1, 5])).unwrap();
        assert_eq!(m, 3.0);
        assert!((s - 8f64.sqrt()).abs() < 1e-12);
        assert!(matches!(
            mean_sd(&table("x", &[4])),
            Err(StatsError::TooFewScores { .. })
        ));
    }

    #[test]
    fn mean_shifts_and_sd_is_shift_invariant() {
        let raw = [1.0, 2.0, 2.0, 3.0, 4.0, 5.0, 3.0];
        let shifted: Vec<f64> = raw.iter().map(|v| v + 7.0).collect();
        let (m1, s1) = mean_sd_of(&raw).unwrap();
        let (m2, s2) = mean_sd_of(&shifted).unwrap();
        assert!((m2 - (m1 + 7.0)).abs() < 1e-12);
        assert!((s2 - s1).abs() < 1e-12);
    }

    #[test]
    fn score_table_rejects_bad_rows() {
        let mut t = ScoreTable::new("x");
        t.insert("a", 3).unwrap();
        assert!(matches!(t.insert("a", 4), Err(StatsError::DuplicateId(_))));
        assert!(matches!(
            t.insert("b", 6),
            Err(StatsError::ScoreOutOfRange { .. })
        ));
    }

    #[test]
    fn pairwise_counts_and_antisymmetry() {
        let a = table("a", &[4, 3, 2]);
        let b = table("b", &[3, 3, 3]);
        let p = pairwise(&a, &b).unwrap();
        assert_eq!((p.win, p.tie, p.loss), (1, 1, 1));
        let q = pairwise(&b, &a).unwrap();
        assert_eq!(p.win, q.loss);
        assert_eq!(p.loss, q.win);

        let same = pairwise(&a, &a).unwrap();
        assert_eq!((same.win, same.tie, same.loss), (0, 3, 0));

        let mut c = ScoreTable::new("c");
        c.insert("other", 1).unwrap();
        c.insert("rows", 1).unwrap();
        c.insert("here", 1).unwrap();
        assert!(matches!(pairwise(&a, &c), Err(StatsError::IdMismatch { .. })));
    }

    #[test]
    fn intent_breakdown_buckets() {
        let t = table("x", &[4, 4, 2, 2]);
        let mut intents = BTreeMap::new();
        intents.insert("q0000".to_string(), IntentOp::Inclusion);
        intents.insert("q0001".to_string(), IntentOp::Inclusion);
        intents.insert("q0002".to_string(), IntentOp::Exclusion);
        intents.insert("q0003".to_string(), IntentOp::Exclusion);
        let b = intent_breakdown(&t, &intents).unwrap();
        assert_eq!(b.inclusion, Some((4.0, 0.0)));
        assert_eq!(b.exclusion, Some((2.0, 0.0)));

        // all-inclusion: exclusion bucket absent
        let t2 = table("y", &[3, 5]);
        let mut all_inc = BTreeMap::new();
        all_inc.insert("q0000".to_string(), IntentOp::Inclusion);
        all_inc.insert("q0001".to_string(), IntentOp::Inclusion);
        let b2 = intent_breakdown(&t2, &all_inc).unwrap();
        assert!(b2.exclusion.is_none());
        assert!(b2.inclusion.is_some());

        let missing = BTreeMap::new();
        assert!(matches!(
            intent_breakdown(&t2, &missing),
            Err(StatsError::MissingIntent(_))
        ));
    }

    #[test]
    fn mcnemar_reproduces_reported_tests() {
        // search-query evaluation: b = 606, c = 60
        let r = mcnemar_exact(&Contingency::new(179, 606, 60, 155)).unwrap();
        assert_eq!(r.statistic, 60);
        assert!(r.p_value < 0.001);
        // content-draft evaluation: b = 271, c = 207
        let r = mcnemar_exact(&Contingency::new(130, 271, 207, 392)).unwrap();
        assert_eq!(r.statistic, 207);
        assert!((r.p_value - 0.0039111).abs() < 1e-4);
    }

    #[test]
    fn mcnemar_symmetric_and_clamped() {
        let r = mcnemar_exact(&Contingency::new(0, 5, 5, 0)).unwrap();
        assert_eq!(r.statistic, 5);
        assert_eq!(r.p_value, 1.0);
        let ab = mcnemar_exact(&Contingency::new(0, 17, 4, 0)).unwrap();
        let ba = mcnemar_exact(&Contingency::new(0, 4, 17, 0)).unwrap();
        assert_eq!(ab.statistic, ba.statistic);
        assert!((ab.p_value - ba.p_value).abs() < 1e-15);
        assert!(matches!(
            mcnemar_exact(&Contingency::new(10, 0, 0, 10)),
            Err(StatsError::NoDiscordantPairs)
        ));
    }

    #[test]
    fn pearson_hand_fixtures() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson_r(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_r(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        let y = [2.0, 1.0, 4.0, 3.0];
        assert!((pearson_r(&x, &y).unwrap() - 0.6).abs() < 1e-12);
        assert!(matches!(
            pearson_r(&x, &[1.0, 1.0, 1.0, 1.0]),
            Err(StatsError::DegenerateVariance)
        ));
        assert!(matches!(
            pearson_r(&x, &[1.0]),
            Err(StatsError::LengthMismatch(4, 1))
        ));
    }

    #[test]
    fn report_renders_all_sections() {
        let mut intents = BTreeMap::new();
        for i in 0..4 {
            intents.insert(
                format!("q{i:04}"),
                if i % 2 == 0 { IntentOp::Inclusion } else { IntentOp::Exclusion },
            );
        }
        let inputs = ReportInputs {
            tables: vec![table("sft", &[4, 3, 2, 3]), table("dpo", &[5, 4, 3, 4])],
            intents: Some(intents),
            contingencies: vec![(
                "search_query_eval".into(),
                Contingency::new(179, 606, 60, 155),
            )],
        };
        let report = render_report(&inputs).unwrap();
        assert!(report.contains("| sft | 3.00 |"));
        assert!(report.contains("## Pairwise comparison"));
        assert!(report.contains("| sft | dpo | 0 | 0 | 4 |"));
        assert!(report.contains("## Scores by intent operation"));
        assert!(report.contains("statistic 60, p < 0.001"));
    }
}
