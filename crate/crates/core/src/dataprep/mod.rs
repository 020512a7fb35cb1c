//! Letter parsing, anonymization, prompt/completion formatting and a
//! synthetic letter corpus.
//!
//! A raw letter is a head of labeled lines followed by a body that starts
//! at the first line beginning with `Dear`:
//!
//! ```text
//! Date: 14.07.2020
//! Author: Dr. Miriam Keller, Senior Physician
//! Recipient: Dr. Tobias Brandt, General Practice, Erlangen
//! Patient: Anna Sommer, born 03.04.1956, ID 4711023
//!
//! Diagnoses:
//! Sigmoid carcinoma pT3 pN1 M0
//!
//! Secondary diagnoses:
//! Type 2 diabetes
//!
//! Tumor-specific anamnesis:
//! 01/2020: Change in bowel habits.
//! 02-03/2020: Adjuvant chemotherapy.
//!
//! Planned treatment: Follow-up imaging.
//!
//! Dear colleague,
//! ...
//! ```

mod anonymize;
mod dates;
mod format;
mod synth;

pub use anonymize::{anonymize, AnonymizationPolicy, MASK};
pub use dates::{count_day_dates, days_in_text, parse_date_spec, parse_day, shift_dates_in_text, DatePoint, DateSpec};
pub use format::{format_example, render_letter, truncate_to_budget, Task, TrainingExample};

use format::truncate_with;
pub use synth::{generate_synthetic_corpus, synthetic_records, CONSIDER_PHRASE, SCHEDULE_PHRASE};

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::pretokenize;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing mandatory section: {0}")]
    MissingSection(&'static str),
    #[error("line {line}: malformed date {text:?}")]
    BadDate { line: usize, text: String },
    #[error("line {line}: history entry dated before the previous entry")]
    HistoryOrder { line: usize },
    #[error("letter body is empty")]
    EmptyBody,
    #[error("summary examples need patient identifiers removed first")]
    IdentifiersPresent,
    #[error("prompt needs {needed} tokens with the salutation but the budget is {max}")]
    OverBudget { needed: usize, max: usize },
    #[error("line {line}: {message}")]
    Jsonl { line: usize, message: String },
    #[error("letter {index}: {source}")]
    InLetter {
        index: usize,
        #[source]
        source: Box<DataError>,
    },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentIntent {
    Recommended,
    Planned,
}

impl TreatmentIntent {
    /// Head label used when serializing.
    pub fn label(self) -> &'static str {
        match self {
            TreatmentIntent::Recommended => "Recommended treatment",
            TreatmentIntent::Planned => "Planned treatment",
        }
    }
}

impl fmt::Display for TreatmentIntent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TreatmentIntent::Recommended => "recommended",
            TreatmentIntent::Planned => "planned",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patient {
    pub name: String,
    /// `dd.mm.yyyy`, or the mask once anonymized.
    pub birth_date: Option<String>,
    pub id: Option<String>,
    /// Comma-separated parts of the patient line that matched nothing else.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryEntry {
    pub date: DateSpec,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LetterRecord {
    pub document_date: NaiveDate,
    pub author: String,
    pub recipients: Vec<String>,
    pub patient: Option<Patient>,
    /// Unlabeled head lines outside any list section, kept verbatim.
    pub head_notes: Vec<String>,
    pub diagnoses: Vec<String>,
    pub secondary_diagnoses: Vec<String>,
    /// Undated lines of the anamnesis that precede the first dated entry.
    pub anamnesis_preface: Vec<String>,
    pub history: Vec<HistoryEntry>,
    pub intent: TreatmentIntent,
    pub treatment: String,
    pub body: String,
}

impl LetterRecord {
    /// Every day-precision date of the record in a fixed order: the
    /// document date, history anchors (month-precision ones included), then
    /// `dd.mm.yyyy` dates found in the free-text fields.
    pub fn all_dates(&self) -> Vec<NaiveDate> {
        let mut out = vec![self.document_date];
        out.extend(self.history.iter().flat_map(|h| h.date.points()).map(DatePoint::anchor));
        for text in self.text_fields() {
            out.extend(days_in_text(text));
        }
        out
    }

    /// Free-text fields, in a fixed order.
    pub fn text_fields(&self) -> Vec<&str> {
        let mut v: Vec<&str> = vec![&self.author];
        v.extend(self.recipients.iter().map(String::as_str));
        v.extend(self.head_notes.iter().map(String::as_str));
        v.extend(self.diagnoses.iter().map(String::as_str));
        v.extend(self.secondary_diagnoses.iter().map(String::as_str));
        v.extend(self.anamnesis_preface.iter().map(String::as_str));
        v.extend(self.history.iter().map(|h| h.text.as_str()));
        v.push(&self.treatment);
        v.push(&self.body);
        v
    }

    fn text_fields_mut(&mut self) -> Vec<&mut String> {
        let mut v: Vec<&mut String> = vec![&mut self.author];
        v.extend(self.recipients.iter_mut());
        v.extend(self.head_notes.iter_mut());
        v.extend(self.diagnoses.iter_mut());
        v.extend(self.secondary_diagnoses.iter_mut());
        v.extend(self.anamnesis_preface.iter_mut());
        v.extend(self.history.iter_mut().map(|h| &mut h.text));
        v.push(&mut self.treatment);
        v.push(&mut self.body);
        v
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Head,
    Diagnoses,
    Secondary,
    Anamnesis,
    Treatment,
}

fn strip_label<'a>(line: &'a str, labels: &[&str]) -> Option<&'a str> {
    labels
        .iter()
        .find_map(|l| line.strip_prefix(l))
        .map(str::trim)
}

fn parse_patient(rest: &str, line: usize) -> Result<Patient, DataError> {
    let mut parts = rest.split(", ");
    let name = parts.next().unwrap_or("").trim().to_string();
    let mut p = Patient {
        name,
        birth_date: None,
        id: None,
        notes: Vec::new(),
    };
    for part in parts {
        let part = part.trim();
        if let Some(b) = part.strip_prefix("born ") {
            if parse_day(b).is_none() {
                return Err(DataError::BadDate {
                    line,
                    text: b.to_string(),
                });
            }
            p.birth_date = Some(b.trim().to_string());
        } else if let Some(id) = part.strip_prefix("ID ") {
            p.id = Some(id.trim().to_string());
        } else {
            p.notes.push(part.to_string());
        }
    }
    Ok(p)
}

/// The date prefix of a history line: leading text up to the first colon
/// made only of digits and date punctuation, with at least one `.` or `/`.
fn history_prefix(line: &str) -> Option<(&str, &str)> {
    if !line.starts_with(|c: char| c.is_ascii_digit()) {
        return None;
    }
    let (head, rest) = line.split_once(':')?;
    let date_like = head
        .chars()
        .all(|c| c.is_ascii_digit() || matches!(c, '.' | '/' | '-' | '–' | ' '))
        && head.contains(['.', '/']);
    date_like.then(|| (head.trim(), rest.trim()))
}

/// Parses a raw letter. Errors name the missing section or the line of a
/// malformed date.
pub fn parse_letter(raw: &str) -> Result<LetterRecord, DataError> {
    let lines: Vec<&str> = raw.lines().collect();
    let body_start = lines
        .iter()
        .position(|l| l.trim_start().starts_with("Dear"))
        .ok_or(DataError::MissingSection("salutation"))?;
    let body = lines[body_start..].join("\n").trim_end().to_string();

    let mut document_date = None;
    let mut author = String::new();
    let mut recipients = Vec::new();
    let mut patient = None;
    let mut head_notes = Vec::new();
    let mut diagnoses = None;
    let mut secondary = None;
    let mut preface = Vec::new();
    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut anamnesis_seen = false;
    let mut treatment: Option<(TreatmentIntent, String)> = None;
    let mut section = Section::Head;

    for (i, raw_line) in lines[..body_start].iter().enumerate() {
        let no = i + 1;
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = strip_label(line, &["Date:"]) {
            document_date = Some(parse_day(rest).ok_or_else(|| DataError::BadDate {
                line: no,
                text: rest.to_string(),
            })?);
            section = Section::Head;
        } else if let Some(rest) = strip_label(line, &["Author:"]) {
            author = rest.to_string();
            section = Section::Head;
        } else if let Some(rest) = strip_label(line, &["Recipient:"]) {
            recipients.push(rest.to_string());
            section = Section::Head;
        } else if let Some(rest) = strip_label(line, &["Patient:"]) {
            patient = Some(parse_patient(rest, no)?);
            section = Section::Head;
        } else if let Some(rest) = strip_label(line, &["Diagnoses:"]) {
            let list = diagnoses.get_or_insert_with(Vec::new);
            if !rest.is_empty() {
                list.push(rest.to_string());
            }
            section = Section::Diagnoses;
        } else if let Some(rest) = strip_label(line, &["Secondary diagnoses:"]) {
            let list = secondary.get_or_insert_with(Vec::new);
            if !rest.is_empty() {
                list.push(rest.to_string());
            }
            section = Section::Secondary;
        } else if let Some(rest) = strip_label(line, &["Tumor-specific anamnesis:"]) {
            anamnesis_seen = true;
            if !rest.is_empty() {
                preface.push(rest.to_string());
            }
            section = Section::Anamnesis;
        } else if let Some(rest) = strip_label(line, &["Recommended treatment:", "Recommendation:"]) {
            treatment = Some((TreatmentIntent::Recommended, rest.to_string()));
            section = Section::Treatment;
        } else if let Some(rest) = strip_label(line, &["Planned treatment:", "Planned:"]) {
            treatment = Some((TreatmentIntent::Planned, rest.to_string()));
            section = Section::Treatment;
        } else {
            match section {
                Section::Head => head_notes.push(line.to_string()),
                Section::Diagnoses => diagnoses.get_or_insert_with(Vec::new).push(line.to_string()),
                Section::Secondary => secondary.get_or_insert_with(Vec::new).push(line.to_string()),
                Section::Treatment => {
                    let t = &mut treatment.as_mut().expect("section implies treatment").1;
                    if !t.is_empty() {
                        t.push('\n');
                    }
                    t.push_str(line);
                }
                Section::Anamnesis => match history_prefix(line) {
                    Some((date, text)) => {
                        let date = parse_date_spec(date).ok_or_else(|| DataError::BadDate {
                            line: no,
                            text: date.to_string(),
                        })?;
                        if let Some(prev) = history.last() {
                            if !prev.date.starts_before_or_with(&date) {
                                return Err(DataError::HistoryOrder { line: no });
                            }
                        }
                        history.push(HistoryEntry {
                            date,
                            text: text.to_string(),
                        });
                    }
                    None => match history.last_mut() {
                        Some(h) => {
                            h.text.push('\n');
                            h.text.push_str(line);
                        }
                        None => preface.push(line.to_string()),
                    },
                },
            }
        }
    }

    let document_date = document_date.ok_or(DataError::MissingSection("Date"))?;
    let diagnoses = diagnoses.ok_or(DataError::MissingSection("Diagnoses"))?;
    let secondary_diagnoses = secondary.ok_or(DataError::MissingSection("Secondary diagnoses"))?;
    if !anamnesis_seen {
        return Err(DataError::MissingSection("Tumor-specific anamnesis"));
    }
    let (intent, treatment) = treatment.ok_or(DataError::MissingSection("Recommended/Planned treatment"))?;
    Ok(LetterRecord {
        document_date,
        author,
        recipients,
        patient,
        head_notes,
        diagnoses,
        secondary_diagnoses,
        anamnesis_preface: preface,
        history,
        intent,
        treatment,
        body,
    })
}

/// How [`prepare_examples`] turns raw letters into training examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrepareOptions {
    pub task: Task,
    /// Seed for per-letter date shifts; `None` leaves identifiers and
    /// dates untouched. The summary task requires anonymization.
    pub anonymize: Option<u64>,
    pub max_tokens: usize,
}

/// Largest shift, in days, drawn for anonymization.
pub const MAX_SHIFT_DAYS: i64 = 1000;

/// Parses, optionally anonymizes, formats and truncates every letter.
/// Errors name the 0-based letter index.
pub fn prepare_examples(raw: &[String], opts: &PrepareOptions) -> Result<Vec<TrainingExample>, DataError> {
    use rand::{Rng, SeedableRng};
    let mut rng = opts.anonymize.map(rand_chacha::ChaCha8Rng::seed_from_u64);
    let policy = match opts.task {
        Task::Summary => AnonymizationPolicy::Summary,
        Task::Letter => AnonymizationPolicy::Display,
    };
    raw.iter()
        .enumerate()
        .map(|(index, text)| {
            let shift = rng.as_mut().map(|r| r.random_range(-MAX_SHIFT_DAYS..=MAX_SHIFT_DAYS));
            let one = || -> Result<TrainingExample, DataError> {
                let mut record = parse_letter(text)?;
                if let Some(days) = shift {
                    record = anonymize(&record, policy, days);
                }
                let ex = format_example(&record, opts.task)?;
                truncate_with(&ex, |t| pretokenize(t).len(), opts.max_tokens)
            };
            one().map_err(|e| DataError::InLetter {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct RawLine {
    raw: String,
}

/// Reads a corpus: a JSON-lines file of `{"raw": ...}` objects, or a
/// directory of `.txt` files (one letter each, sorted by file name).
pub fn read_raw_corpus(path: &Path) -> Result<Vec<String>, DataError> {
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == "txt"));
        files.sort();
        return files
            .iter()
            .map(|p| std::fs::read_to_string(p).map_err(DataError::from))
            .collect();
    }
    read_jsonl::<RawLine>(path).map(|v| v.into_iter().map(|r| r.raw).collect())
}

pub fn write_raw_corpus(path: &Path, letters: &[String]) -> Result<(), DataError> {
    let rows: Vec<RawLine> = letters.iter().map(|raw| RawLine { raw: raw.clone() }).collect();
    write_jsonl(path, &rows)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DataError> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DataError::Jsonl {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), DataError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in rows {
        let line = serde_json::to_string(r).map_err(|e| DataError::Jsonl {
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}
