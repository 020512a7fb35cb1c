//! Date grammar for letter heads and free text.
//!
//! Accepted forms: `dd.mm.yyyy`, `mm/yyyy`, and ranges of either joined by
//! `-` or `–`, including the month shorthand `mm-mm/yyyy`. Month-precision
//! dates carry a hidden day anchor so that shifting by any number of days
//! and back is exact.

use std::fmt;
use std::sync::LazyLock;

use chrono::{Datelike, Duration, NaiveDate};
use regex::{Captures, Regex};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatePoint {
    Day(NaiveDate),
    /// Displayed as the month of `anchor`.
    Month { anchor: NaiveDate },
}

impl DatePoint {
    pub fn anchor(self) -> NaiveDate {
        match self {
            DatePoint::Day(d) | DatePoint::Month { anchor: d } => d,
        }
    }

    pub fn is_day(self) -> bool {
        matches!(self, DatePoint::Day(_))
    }

    pub fn shift(self, days: i64) -> Self {
        let d = self.anchor() + Duration::days(days);
        match self {
            DatePoint::Day(_) => DatePoint::Day(d),
            DatePoint::Month { .. } => DatePoint::Month { anchor: d },
        }
    }

    /// `(year, month)` key used to order dates of mixed precision.
    fn month_key(self) -> (i32, u32) {
        let d = self.anchor();
        (d.year(), d.month())
    }
}

impl fmt::Display for DatePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatePoint::Day(d) => write!(f, "{}", d.format("%d.%m.%Y")),
            DatePoint::Month { anchor } => write!(f, "{}", anchor.format("%m/%Y")),
        }
    }
}

/// A single date or a range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateSpec {
    pub start: DatePoint,
    pub end: Option<DatePoint>,
}

impl DateSpec {
    pub fn shift(self, days: i64) -> Self {
        Self {
            start: self.start.shift(days),
            end: self.end.map(|e| e.shift(days)),
        }
    }

    /// Orders by start date, comparing at month precision whenever either
    /// side is month-precision.
    pub fn starts_before_or_with(&self, other: &DateSpec) -> bool {
        let (a, b) = (self.start, other.start);
        if a.is_day() && b.is_day() {
            a.anchor() <= b.anchor()
        } else {
            a.month_key() <= b.month_key()
        }
    }

    pub fn points(&self) -> impl Iterator<Item = DatePoint> {
        std::iter::once(self.start).chain(self.end)
    }
}

impl fmt::Display for DateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.end {
            Some(e) => write!(f, "{}-{}", self.start, e),
            None => write!(f, "{}", self.start),
        }
    }
}

pub fn parse_day(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    let b = s.as_bytes();
    if b.len() != 10 || b[2] != b'.' || b[5] != b'.' {
        return None;
    }
    NaiveDate::parse_from_str(s, "%d.%m.%Y").ok()
}

fn parse_month(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    let (m, y) = s.split_once('/')?;
    if m.len() != 2 || y.len() != 4 || !m.bytes().chain(y.bytes()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    NaiveDate::from_ymd_opt(y.parse().ok()?, m.parse().ok()?, 1)
}

fn parse_point(s: &str) -> Option<DatePoint> {
    parse_day(s)
        .map(DatePoint::Day)
        .or_else(|| parse_month(s).map(|anchor| DatePoint::Month { anchor }))
}

/// Parses one date expression; `None` when it does not match the grammar
/// or names a day that does not exist.
pub fn parse_date_spec(s: &str) -> Option<DateSpec> {
    let s = s.trim();
    if let Some(p) = parse_point(s) {
        return Some(DateSpec { start: p, end: None });
    }
    let (a, b) = s.split_once(['-', '–'])?;
    // mm-mm/yyyy
    if a.len() == 2 && a.bytes().all(|c| c.is_ascii_digit()) {
        let end = parse_month(b)?;
        let start = NaiveDate::from_ymd_opt(end.year(), a.parse().ok()?, 1)?;
        return Some(DateSpec {
            start: DatePoint::Month { anchor: start },
            end: Some(DatePoint::Month { anchor: end }),
        })
        .filter(|d| d.start.anchor() <= end);
    }
    let (start, end) = (parse_point(a)?, parse_point(b)?);
    Some(DateSpec { start, end: Some(end) })
}

static TEXT_DATE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:(\d{2})\.(\d{2})\.(\d{4})|(\d{2})-(\d{2})/(\d{4})|(\d{2})/(\d{4}))\b").expect("valid regex")
});

/// Shifts every valid date found in free text. Strings that look like
/// dates but name no real day are left alone.
pub fn shift_dates_in_text(text: &str, days: i64) -> String {
    TEXT_DATE
        .replace_all(text, |c: &Captures| {
            let whole = c.get(0).expect("match").as_str();
            match parse_date_spec(whole) {
                Some(spec) => spec.shift(days).to_string(),
                None => whole.to_string(),
            }
        })
        .into_owned()
}

/// Day-precision dates found in free text, in order of appearance.
pub fn days_in_text(text: &str) -> Vec<NaiveDate> {
    TEXT_DATE
        .find_iter(text)
        .filter_map(|m| parse_day(m.as_str()))
        .collect()
}

/// All `dd.mm.yyyy` strings in `text` that are real calendar days.
pub fn count_day_dates(text: &str) -> usize {
    days_in_text(text).len()
}
