use serde::{Deserialize, Serialize};

use crate::model::{pretokenize, Tokenizer};

use super::{DataError, LetterRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Clinical content only: no author, recipients or patient block.
    Summary,
    /// Full head including physician details.
    Letter,
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "summary" => Ok(Task::Summary),
            "letter" => Ok(Task::Letter),
            other => Err(format!("unknown task {other:?} (expected summary or letter)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub prompt: String,
    pub completion: String,
    /// Prompt and completion pieces plus the begin and end markers.
    pub token_count: usize,
}

fn count(prompt: &str, completion: &str) -> usize {
    pretokenize(prompt).len() + pretokenize(completion).len() + 2
}

fn head(record: &LetterRecord, task: Task) -> String {
    let mut sections: Vec<String> = Vec::new();
    let mut top = vec![format!("Date: {}", record.document_date.format("%d.%m.%Y"))];
    if task == Task::Letter {
        if !record.author.is_empty() {
            top.push(format!("Author: {}", record.author));
        }
        top.extend(record.recipients.iter().map(|r| format!("Recipient: {r}")));
        if let Some(p) = &record.patient {
            let mut parts = vec![p.name.clone()];
            parts.extend(p.birth_date.iter().map(|b| format!("born {b}")));
            parts.extend(p.id.iter().map(|i| format!("ID {i}")));
            parts.extend(p.notes.iter().cloned());
            top.push(format!("Patient: {}", parts.join(", ")));
        }
        top.extend(record.head_notes.iter().cloned());
    }
    sections.push(top.join("\n"));

    let list = |label: &str, items: &[String]| {
        std::iter::once(format!("{label}:"))
            .chain(items.iter().cloned())
            .collect::<Vec<_>>()
            .join("\n")
    };
    sections.push(list("Diagnoses", &record.diagnoses));
    sections.push(list("Secondary diagnoses", &record.secondary_diagnoses));
    let mut anamnesis = record.anamnesis_preface.clone();
    anamnesis.extend(record.history.iter().map(|h| format!("{}: {}", h.date, h.text)));
    sections.push(list("Tumor-specific anamnesis", &anamnesis));
    sections.push(format!("{}: {}", record.intent.label(), record.treatment));
    sections.join("\n\n")
}

/// Serializes a record as a prompt (labeled head sections in fixed order,
/// one blank line between sections) and a completion (the body).
pub fn format_example(record: &LetterRecord, task: Task) -> Result<TrainingExample, DataError> {
    if record.body.trim().is_empty() {
        return Err(DataError::EmptyBody);
    }
    if task == Task::Summary && record.patient.is_some() {
        return Err(DataError::IdentifiersPresent);
    }
    let prompt = head(record, task);
    let completion = record.body.clone();
    Ok(TrainingExample {
        token_count: count(&prompt, &completion),
        prompt,
        completion,
    })
}

/// The raw letter text of a record; parses back to an equal record.
pub fn render_letter(record: &LetterRecord) -> String {
    format!("{}\n\n{}\n", head(record, Task::Letter), record.body)
}

const ABBREVIATIONS: [&str; 12] = [
    "Dr", "Mr", "Ms", "Mrs", "Prof", "e.g", "i.e", "approx", "vs", "ca", "No", "Fig",
];

/// Byte offsets at which the completion may be cut: after sentence-ending
/// punctuation followed by whitespace, and at line ends.
fn cut_points(text: &str) -> Vec<usize> {
    let bytes = text.as_bytes();
    let mut cuts = Vec::new();
    for (i, ch) in text.char_indices() {
        let end = i + ch.len_utf8();
        let next_ws = end == text.len() || bytes[end].is_ascii_whitespace();
        match ch {
            '\n' => cuts.push(i),
            '.' | '!' | '?' if next_ws => {
                let word_start = text[..i].rfind(char::is_whitespace).map_or(0, |p| p + 1);
                let word = &text[word_start..i];
                let initial = word.len() == 1 && word.chars().all(|c| c.is_ascii_uppercase());
                if ch != '.' || !(ABBREVIATIONS.contains(&word) || initial) {
                    cuts.push(end);
                }
            }
            _ => {}
        }
    }
    cuts.push(text.len());
    cuts.dedup();
    cuts
}

/// Shortens the completion to the longest prefix ending at a sentence or
/// line boundary that fits `max_tokens`. The prompt is never cut.
pub fn truncate_to_budget(
    example: &TrainingExample,
    tokenizer: &Tokenizer,
    max_tokens: usize,
) -> Result<TrainingExample, DataError> {
    truncate_with(example, |t| tokenizer.encode(t).len(), max_tokens)
}

/// [`truncate_to_budget`] with an arbitrary token counter.
pub(crate) fn truncate_with(
    example: &TrainingExample,
    tokens: impl Fn(&str) -> usize,
    max_tokens: usize,
) -> Result<TrainingExample, DataError> {
    let prompt_tokens = tokens(&example.prompt) + 2;
    let total = prompt_tokens + tokens(&example.completion);
    if total <= max_tokens {
        return Ok(TrainingExample {
            token_count: total,
            ..example.clone()
        });
    }
    let mut best = None;
    for cut in cut_points(&example.completion) {
        let prefix = example.completion[..cut].trim_end();
        if prefix.is_empty() {
            continue;
        }
        let n = prompt_tokens + tokens(prefix);
        if n > max_tokens {
            if best.is_none() {
                return Err(DataError::OverBudget { needed: n, max: max_tokens });
            }
            break;
        }
        best = Some((prefix, n));
    }
    let (completion, token_count) = best.ok_or(DataError::OverBudget {
        needed: prompt_tokens,
        max: max_tokens,
    })?;
    Ok(TrainingExample {
        prompt: example.prompt.clone(),
        completion: completion.to_string(),
        token_count,
    })
}
