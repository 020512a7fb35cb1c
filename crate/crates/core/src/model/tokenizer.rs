use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ModelError;

pub const BOS: usize = 0;
pub const EOD: usize = 1;
pub const UNK: usize = 2;
pub const PAD: usize = 3;

const SPECIALS: [&str; 4] = ["<bos>", "<eod>", "<unk>", "<pad>"];

/// Splits text into word pieces: maximal runs of alphanumeric characters,
/// runs of line breaks, and runs of one repeated symbol. Inside a dotted
/// date the month keeps both dots (`06.08.2020` -> `06`, `.08.`, `2020`),
/// so day, month and year pieces never share a form. Other whitespace
/// only separates pieces.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let ch = text[i..].chars().next().expect("in bounds");
        let mut end = i + ch.len_utf8();
        if ch.is_alphanumeric() {
            while let Some(c) = text[end..].chars().next().filter(|c| c.is_alphanumeric()) {
                end += c.len_utf8();
            }
        } else if ch == '.' && i > 0 && bytes[i - 1].is_ascii_digit() {
            if let Some(len) = inner_date_field(&bytes[i + 1..]) {
                end = i + len + 2;
            }
        } else if ch.is_whitespace() && ch != '\n' {
            i = end;
            continue;
        } else {
            while text[end..].starts_with(ch) {
                end += ch.len_utf8();
            }
        }
        out.push(&text[i..end]);
        i = end;
    }
    out
}

/// Length of `d.` or `dd.` at the start of `rest` when a digit follows.
fn inner_date_field(rest: &[u8]) -> Option<usize> {
    let digits = rest.iter().take(3).take_while(|b| b.is_ascii_digit()).count();
    let is_field = (1..=2).contains(&digits)
        && rest.get(digits) == Some(&b'.')
        && rest.get(digits + 1).is_some_and(u8::is_ascii_digit);
    is_field.then_some(digits)
}

/// Word-level vocabulary with four reserved ids (begin, end-of-document,
/// unknown, pad).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "TokenizerRepr", into = "TokenizerRepr")]
pub struct Tokenizer {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerRepr {
    vocab: Vec<String>,
}

impl From<TokenizerRepr> for Tokenizer {
    fn from(r: TokenizerRepr) -> Self {
        Self::from_vocab(r.vocab)
    }
}

impl From<Tokenizer> for TokenizerRepr {
    fn from(t: Tokenizer) -> Self {
        Self { vocab: t.vocab }
    }
}

impl Tokenizer {
    fn from_vocab(vocab: Vec<String>) -> Self {
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self { vocab, index }
    }

    /// Keeps the `max_size - 4` most frequent pieces of `corpus`; equal
    /// counts are ordered lexicographically. `max_size` includes the specials.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Self, ModelError> {
        if corpus.iter().all(|t| t.as_ref().trim().is_empty()) {
            return Err(ModelError::EmptyCorpus);
        }
        if max_size < SPECIALS.len() {
            return Err(ModelError::Config(format!(
                "vocabulary size {max_size} cannot hold the {} special tokens",
                SPECIALS.len()
            )));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for text in corpus {
            for piece in pretokenize(text.as_ref()) {
                *counts.entry(piece).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let vocab = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(
                ranked
                    .into_iter()
                    .take(max_size - SPECIALS.len())
                    .map(|(w, _)| w.to_string()),
            )
            .collect();
        Ok(Self::from_vocab(vocab))
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.index.get(piece).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.vocab.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        pretokenize(text)
            .into_iter()
            .map(|p| self.id(p).unwrap_or(UNK))
            .collect()
    }

    fn pieces(&self, ids: &[usize]) -> Result<Vec<&str>, ModelError> {
        ids.iter()
            .map(|&id| {
                self.token(id).ok_or(ModelError::TokenOutOfRange {
                    id,
                    vocab: self.len(),
                })
            })
            .collect()
    }

    /// Joins pieces with single spaces.
    pub fn decode(&self, ids: &[usize]) -> Result<String, ModelError> {
        Ok(self.pieces(ids)?.join(" "))
    }

    /// Like [`decode`](Self::decode) but re-attaches punctuation the way it
    /// is usually written: no space before `. , : ; ) ! ?`, none after `(`,
    /// none around `-` and `/`, and dotted dates are rejoined.
    pub fn render(&self, ids: &[usize]) -> Result<String, ModelError> {
        let pieces = self.pieces(ids)?;
        let mut out = String::new();
        for (i, piece) in pieces.iter().enumerate() {
            if i > 0 && needs_space(&pieces[..i], piece) {
                out.push(' ');
            }
            out.push_str(piece);
        }
        Ok(out)
    }
}

fn is_digits(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_digit())
}

fn is_month_piece(s: &str) -> bool {
    s.len() > 2 && s.starts_with('.') && s.ends_with('.') && is_digits(&s[1..s.len() - 1])
}

fn needs_space(before: &[&str], piece: &str) -> bool {
    let prev = before[before.len() - 1];
    if prev.starts_with('\n') || piece.starts_with('\n') {
        return false;
    }
    if is_month_piece(piece) || (is_month_piece(prev) && is_digits(piece)) {
        return false;
    }
    if matches!(piece, "." | "," | ":" | ";" | ")" | "!" | "?" | "-" | "/" | "%") {
        return false;
    }
    if matches!(prev, "(" | "-" | "/") {
        return false;
    }
    // 06 . 08 . 2020 -> 06.08.2020
    if prev == "." && is_digits(piece) && before.len() >= 2 && is_digits(before[before.len() - 2]) {
        return false;
    }
    true
}
