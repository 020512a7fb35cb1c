//! ROUGE scoring, the paired t-test, expert-rating aggregation and
//! corpus-level evaluation reports.

mod ratings;
mod rouge;
mod stats;

pub use ratings::{
    aggregate_ratings, read_ratings_csv, write_ratings_csv, CaseStat, Dimension, DimensionStat, RatingSheet,
    RatingSummary,
};
pub use rouge::{metric_tokens, rouge_all, rouge_l, rouge_n, RougeScore, RougeVariant};
pub use stats::{mean, paired_t_test, sample_sd, t_two_sided_p, TestResult};

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataprep::TrainingExample;
use crate::model::{Model, Tokenizer};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("paired samples differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("paired t-test needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("samples contain non-finite values")]
    NonFinite,
    #[error("no rating sheets")]
    NoRatings,
    #[error("case {case_id}: rater {rater_id} appears more than once")]
    DuplicateRating { case_id: String, rater_id: String },
    #[error("case {case_id}, rater {rater_id}: {dimension} score {score} is outside 1..=4")]
    ScoreOutOfRange {
        case_id: String,
        rater_id: String,
        dimension: Dimension,
        score: u8,
    },
    #[error("empty test set")]
    EmptyTestSet,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub const VARIANTS: [RougeVariant; 3] = [RougeVariant::N(1), RougeVariant::N(2), RougeVariant::L];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    /// 1-based position in the test set.
    pub case: usize,
    pub output: String,
    /// ROUGE-1, ROUGE-2, ROUGE-L.
    pub scores: [RougeScore; 3],
    /// Generation failure; the scores are zero when set.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub measure: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusEvaluation {
    pub cases: Vec<CaseResult>,
    pub summary: Vec<SummaryRow>,
}

impl CorpusEvaluation {
    /// Per-case values of one measure (`recall`, `precision` or `f1`).
    pub fn values(&self, variant: RougeVariant, measure: &str) -> Vec<f64> {
        let k = VARIANTS.iter().position(|v| *v == variant).expect("known variant");
        self.cases.iter().map(|c| pick(&c.scores[k], measure)).collect()
    }

    pub fn mean_f1(&self, variant: RougeVariant) -> f64 {
        mean(&self.values(variant, "f1"))
    }
}

fn pick(s: &RougeScore, measure: &str) -> f64 {
    match measure {
        "recall" => s.recall,
        "precision" => s.precision,
        "f1" => s.f1,
        other => panic!("unknown measure {other}"),
    }
}

const MEASURES: [&str; 3] = ["recall", "precision", "f1"];

fn summarize(cases: &[CaseResult]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for (k, v) in VARIANTS.iter().enumerate() {
        for m in MEASURES {
            let xs: Vec<f64> = cases.iter().map(|c| pick(&c.scores[k], m)).collect();
            rows.push(SummaryRow {
                variant: v.to_string(),
                measure: m.to_string(),
                mean: mean(&xs),
                sd: sample_sd(&xs),
            });
        }
    }
    rows
}

/// Scores already generated outputs against references.
pub fn score_outputs(outputs: &[Result<String, String>], references: &[&str]) -> CorpusEvaluation {
    let cases: Vec<CaseResult> = outputs
        .iter()
        .zip(references)
        .enumerate()
        .map(|(i, (out, reference))| match out {
            Ok(text) => CaseResult {
                case: i + 1,
                output: text.clone(),
                scores: rouge_all(text, reference),
                error: None,
            },
            Err(e) => CaseResult {
                case: i + 1,
                output: String::new(),
                scores: VARIANTS.map(RougeScore::zero),
                error: Some(e.clone()),
            },
        })
        .collect();
    let summary = summarize(&cases);
    CorpusEvaluation { cases, summary }
}

/// Greedy completion of every test prompt, scored against its reference
/// completion. A failed generation scores zero and is recorded on its case.
pub fn evaluate_corpus(
    model: &Model,
    tokenizer: &Tokenizer,
    testset: &[TrainingExample],
    max_new: usize,
) -> Result<CorpusEvaluation, EvalError> {
    if testset.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let outputs: Vec<Result<String, String>> = testset
        .iter()
        .map(|ex| {
            model
                .generate(tokenizer, &tokenizer.encode(&ex.prompt), max_new)
                .map_err(|e| e.to_string())
        })
        .collect();
    let refs: Vec<&str> = testset.iter().map(|e| e.completion.as_str()).collect();
    Ok(score_outputs(&outputs, &refs))
}

/// Flat per-case CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRow {
    pub case: usize,
    pub rouge1_recall: f64,
    pub rouge1_precision: f64,
    pub rouge1_f1: f64,
    pub rouge2_recall: f64,
    pub rouge2_precision: f64,
    pub rouge2_f1: f64,
    #[serde(rename = "rougeL_recall")]
    pub rouge_l_recall: f64,
    #[serde(rename = "rougeL_precision")]
    pub rouge_l_precision: f64,
    #[serde(rename = "rougeL_f1")]
    pub rouge_l_f1: f64,
    pub error: String,
}

impl CaseRow {
    pub fn f1(&self, variant: RougeVariant) -> f64 {
        match variant {
            RougeVariant::N(1) => self.rouge1_f1,
            RougeVariant::N(2) => self.rouge2_f1,
            RougeVariant::L => self.rouge_l_f1,
            RougeVariant::N(n) => panic!("rouge{n} is not stored"),
        }
    }
}

impl From<&CaseResult> for CaseRow {
    fn from(c: &CaseResult) -> Self {
        let [a, b, l] = c.scores;
        Self {
            case: c.case,
            rouge1_recall: a.recall,
            rouge1_precision: a.precision,
            rouge1_f1: a.f1,
            rouge2_recall: b.recall,
            rouge2_precision: b.precision,
            rouge2_f1: b.f1,
            rouge_l_recall: l.recall,
            rouge_l_precision: l.precision,
            rouge_l_f1: l.f1,
            error: c.error.clone().unwrap_or_default(),
        }
    }
}

pub fn read_case_csv(path: &Path) -> Result<Vec<CaseRow>, EvalError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(EvalError::from)).collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One generated completion, as stored in `outputs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRow {
    pub case: usize,
    pub output: String,
    pub error: Option<String>,
}

/// Writes `cases.csv`, `outputs.jsonl`, `summary.csv`, `summary.json` and
/// `report.md` into `dir`.
pub fn write_eval_reports(dir: &Path, eval: &CorpusEvaluation) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    write_csv(&dir.join("cases.csv"), eval.cases.iter().map(CaseRow::from))?;
    let mut lines = String::new();
    for c in &eval.cases {
        let row = OutputRow {
            case: c.case,
            output: c.output.clone(),
            error: c.error.clone(),
        };
        lines.push_str(&serde_json::to_string(&row)?);
        lines.push('\n');
    }
    std::fs::write(dir.join("outputs.jsonl"), lines)?;
    write_csv(&dir.join("summary.csv"), &eval.summary)?;
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&eval.summary)?)?;

    let mut md = String::from("# ROUGE evaluation\n\n| variant | measure | mean | sd |\n|---|---|---|---|\n");
    for r in &eval.summary {
        let _ = writeln!(md, "| {} | {} | {:.4} | {:.4} |", r.variant, r.measure, r.mean, r.sd);
    }
    md.push_str("\n| case | ROUGE-1 F1 | ROUGE-2 F1 | ROUGE-L F1 | error |\n|---|---|---|---|---|\n");
    for c in &eval.cases {
        let _ = writeln!(
            md,
            "| {} | {:.4} | {:.4} | {:.4} | {} |",
            c.case,
            c.scores[0].f1,
            c.scores[1].f1,
            c.scores[2].f1,
            c.error.as_deref().unwrap_or("")
        );
    }
    std::fs::write(dir.join("report.md"), md)?;
    Ok(())
}

/// Writes `ratings_dimensions.csv`, `ratings_cases.csv`, `ratings.json`
/// and `ratings.md` into `dir`.
pub fn write_rating_reports(dir: &Path, summary: &RatingSummary) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    write_csv(&dir.join("ratings_dimensions.csv"), &summary.dimensions)?;
    write_csv(&dir.join("ratings_cases.csv"), &summary.cases)?;
    std::fs::write(dir.join("ratings.json"), serde_json::to_string_pretty(summary)?)?;
    let mut md = String::from("# Expert ratings\n\n| dimension | mean | sd |\n|---|---|---|\n");
    for d in &summary.dimensions {
        let _ = writeln!(md, "| {} | {:.2} | {:.2} |", d.dimension, d.mean, d.sd);
    }
    md.push_str("\n| case | sheets | mean | sd |\n|---|---|---|---|\n");
    for c in &summary.cases {
        let _ = writeln!(md, "| {} | {} | {:.2} | {:.2} |", c.case_id, c.sheets, c.mean, c.sd);
    }
    if let Some(low) = summary.lowest_case() {
        let _ = writeln!(md, "\nLowest case: {} (mean {:.2})", low.case_id, low.mean);
    }
    std::fs::write(dir.join("ratings.md"), md)?;
    Ok(())
}
