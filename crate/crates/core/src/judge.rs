//! LLM-as-judge scoring of outlines against C² queries.
//!
//! The judge sees the C² query, the rendered outline, and the five-point
//! rubric, and must answer with a rationale followed by `Score: N`. Scores
//! rank the three candidate outlines of each query into a best/worst pair
//! for preference-pair export.

use serde::{Deserialize, Serialize};

use crate::c2::C2Query;
use crate::gateway::{slots, CompletionRequest, Gateway, GatewayError, TPL_JUDGE_SCORE};
use crate::outline::Outline;

/// The five-point Likert rubric used for every outline judgement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rubric {
    levels: [String; 5],
}

const STANDARD_RUBRIC: [&str; 5] = [
    "The sub-questions/responses entirely disregards the instructions, providing content \
     unrelated to the instruction.",
    "The sub-questions/responses show a superficial attempt to follow instructions but \
     significantly strays from the intended task, missing key objectives.",
    "The sub-questions/responses generally adheres to the instructions but overlooks certain \
     details or nuances, achieving only a partial match with the instruction.",
    "The sub-questions/responses is closely aligned with the instructions, exhibiting minor \
     deviations that slightly affect the completeness of the execution.",
    "The sub-questions/responses exhibits impeccable adherence to the instructions, capturing \
     all nuances and completing the task as specified.",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("rubric level {0} has an empty description")]
pub struct EmptyRubricLevel(usize);

impl Rubric {
    /// The standard five-level rubric.
    pub fn standard() -> Self {
        Self {
            levels: STANDARD_RUBRIC.map(str::to_string),
        }
    }

    pub fn custom(levels: [String; 5]) -> Result<Self, EmptyRubricLevel> {
        for (i, level) in levels.iter().enumerate() {
            if level.trim().is_empty() {
                return Err(EmptyRubricLevel(i + 1));
            }
        }
        Ok(Self { levels })
    }

    pub fn description(&self, score: u8) -> Option<&str> {
        (1..=5)
            .contains(&score)
            .then(|| self.levels[score as usize - 1].as_str())
    }

    /// Renders the rubric as numbered lines for prompt insertion.
    pub fn render(&self) -> String {
        self.levels
            .iter()
            .enumerate()
            .map(|(i, level)| format!("{}: {level}", i + 1))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

impl Default for Rubric {
    fn default() -> Self {
        Self::standard()
    }
}

/// An outline judged against one C² query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgedOutline {
    pub c2_id: String,
    pub outline: Outline,
    pub score: u8,
    pub rationale: String,
    pub judge_model: String,
}

/// The judge's output did not contain a usable score.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScoreParseError {
    #[error("no `Score:` marker found")]
    Missing,
    #[error("score {0} is outside 1-5")]
    OutOfRange(u32),
}

/// Extracts the last `Score: N` occurrence, tolerating surrounding markdown
/// and suffixes like `3/5`. Values outside 1-5 are rejected.
pub fn parse_score(raw: &str) -> Result<u8, ScoreParseError> {
    static RE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    let re = RE.get_or_init(|| {
        regex::Regex::new(r"(?i)\bscore\b\s*:\s*\*{0,2}\s*(\d+)").expect("static regex")
    });
    let last = re
        .captures_iter(raw)
        .last()
        .ok_or(ScoreParseError::Missing)?;
    let value: u32 = last[1].parse().map_err(|_| ScoreParseError::Missing)?;
    if !(1..=5).contains(&value) {
        return Err(ScoreParseError::OutOfRange(value));
    }
    Ok(value as u8)
}

/// Rationale text: everything after a leading `Rationale:` marker with the
/// trailing score line removed; falls back to the full response.
fn extract_rationale(raw: &str) -> String {
    let body = raw.trim();
    let after_marker = body
        .split_once("Rationale:")
        .map(|(_, rest)| rest)
        .unwrap_or(body);
    let without_score = after_marker
        .rsplit_once("Score:")
        .map(|(head, _)| head)
        .unwrap_or(after_marker)
        .trim();
    if without_score.is_empty() {
        body.to_string()
    } else {
        without_score.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum JudgeError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("judge output unparseable after {attempts} attempts: {last}")]
    ScoreUnparseable { attempts: u32, last: ScoreParseError },
    #[error("ranking expects exactly 3 judged outlines, got {0}")]
    WrongCandidateCount(usize),
}

/// Scores one outline against a C² query, retrying unparseable judge output
/// up to the gateway's attempt budget.
pub fn score_outline(
    c2: &C2Query,
    outline: &Outline,
    rubric: &Rubric,
    gateway: &Gateway,
) -> Result<JudgedOutline, JudgeError> {
    let req = CompletionRequest::new(
        TPL_JUDGE_SCORE,
        slots([
            ("c2", c2.composed()),
            ("outline", outline.render_block()),
            ("rubric", rubric.render()),
        ]),
    );
    let budget = gateway.retry_policy().max_attempts;
    let mut last = ScoreParseError::Missing;
    for _ in 0..budget {
        let result = gateway.complete(&req)?;
        match parse_score(&result.text) {
            Ok(score) => {
                return Ok(JudgedOutline {
                    c2_id: c2.id.clone(),
                    outline: outline.clone(),
                    score,
                    rationale: extract_rationale(&result.text),
                    judge_model: result.provider,
                })
            }
            Err(e) => last = e,
        }
    }
    Err(JudgeError::ScoreUnparseable {
        attempts: budget,
        last,
    })
}

/// Best/worst positions among three judged candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ranking {
    pub best: usize,
    pub worst: usize,
    /// True iff the highest and lowest scores coincide; such queries are
    /// skipped during preference-pair export.
    pub tie: bool,
}

/// Ranks exactly three judged outlines. Equal maxima break toward the
/// earlier candidate, equal minima toward the earlier candidate as well.
pub fn rank_candidates(judged: &[JudgedOutline]) -> Result<Ranking, JudgeError> {
    if judged.len() != 3 {
        return Err(JudgeError::WrongCandidateCount(judged.len()));
    }
    let mut best = 0;
    let mut worst = 0;
    for (i, j) in judged.iter().enumerate() {
        if j.score > judged[best].score {
            best = i;
        }
        if j.score < judged[worst].score {
            worst = i;
        }
    }
    Ok(Ranking {
        best,
        worst,
        tie: judged[best].score == judged[worst].score,
    })
}
