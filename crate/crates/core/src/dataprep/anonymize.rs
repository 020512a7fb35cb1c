use super::{shift_dates_in_text, HistoryEntry, LetterRecord, Patient};

/// Replacement for masked identifiers.
pub const MASK: &str = "*****";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnonymizationPolicy {
    /// Drops the patient block entirely (summary-task data).
    Summary,
    /// Keeps the patient block with name, birth date and id masked.
    Display,
}

/// Identifier strings to scrub from free text, longest first so the full
/// name is replaced before its parts.
fn identifiers(p: &Patient) -> Vec<String> {
    let mut ids = vec![p.name.clone()];
    ids.extend(
        p.name
            .split(|c: char| !c.is_alphanumeric() && c != '-' && c != '\'')
            .filter(|s| s.chars().count() >= 2)
            .map(str::to_string),
    );
    ids.extend(p.id.iter().cloned());
    ids.extend(p.birth_date.iter().cloned());
    ids.retain(|s| !s.trim().is_empty());
    ids.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    ids.dedup();
    ids
}

fn scrub(text: &str, ids: &[String]) -> String {
    ids.iter().fold(text.to_string(), |t, id| t.replace(id.as_str(), MASK))
}

/// Removes or masks patient identifiers and shifts every date by
/// `shift_days`, typed fields and dates inside free text alike. Identifiers
/// are scrubbed before dates move, so a masked birth date is never shifted.
/// Identifier matching is plain substring replacement: a name part inside a
/// longer word is masked too.
pub fn anonymize(record: &LetterRecord, policy: AnonymizationPolicy, shift_days: i64) -> LetterRecord {
    let mut out = record.clone();
    let ids = record.patient.as_ref().map(identifiers).unwrap_or_default();
    for field in out.text_fields_mut() {
        *field = shift_dates_in_text(&scrub(field, &ids), shift_days);
    }
    out.document_date += chrono::Duration::days(shift_days);
    out.history = out
        .history
        .iter()
        .map(|h| HistoryEntry {
            date: h.date.shift(shift_days),
            text: h.text.clone(),
        })
        .collect();
    out.patient = match policy {
        AnonymizationPolicy::Summary => None,
        AnonymizationPolicy::Display => out.patient.map(|p| Patient {
            name: MASK.to_string(),
            birth_date: p.birth_date.map(|_| MASK.to_string()),
            id: p.id.map(|_| MASK.to_string()),
            notes: p
                .notes
                .iter()
                .map(|n| shift_dates_in_text(&scrub(n, &ids), shift_days))
                .collect(),
        }),
    };
    out
}
