use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{mean, sample_sd};
use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Correctness,
    Comprehensiveness,
    Style,
    Practicality,
}

impl Dimension {
    pub const ALL: [Dimension; 4] = [
        Dimension::Correctness,
        Dimension::Comprehensiveness,
        Dimension::Style,
        Dimension::Practicality,
    ];
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimension::Correctness => "correctness",
            Dimension::Comprehensiveness => "comprehensiveness",
            Dimension::Style => "style",
            Dimension::Practicality => "practicality",
        })
    }
}

/// One rater's scores for one case, each on the 1 to 4 scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingSheet {
    pub case_id: String,
    pub rater_id: String,
    pub correctness: u8,
    pub comprehensiveness: u8,
    pub style: u8,
    pub practicality: u8,
}

impl RatingSheet {
    pub fn score(&self, d: Dimension) -> u8 {
        match d {
            Dimension::Correctness => self.correctness,
            Dimension::Comprehensiveness => self.comprehensiveness,
            Dimension::Style => self.style,
            Dimension::Practicality => self.practicality,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        for d in Dimension::ALL {
            let s = self.score(d);
            if !(1..=4).contains(&s) {
                return Err(EvalError::ScoreOutOfRange {
                    case_id: self.case_id.clone(),
                    rater_id: self.rater_id.clone(),
                    dimension: d,
                    score: s,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionStat {
    pub dimension: Dimension,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseStat {
    pub case_id: String,
    pub sheets: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatingSummary {
    pub dimensions: Vec<DimensionStat>,
    /// Ordered by case id, numerically when both ids are integers.
    pub cases: Vec<CaseStat>,
}

impl RatingSummary {
    pub fn dimension(&self, d: Dimension) -> &DimensionStat {
        self.dimensions
            .iter()
            .find(|s| s.dimension == d)
            .expect("all dimensions summarized")
    }

    /// Case with the lowest mean; the first in case order wins ties.
    pub fn lowest_case(&self) -> Option<&CaseStat> {
        self.cases
            .iter()
            .reduce(|best, c| if c.mean < best.mean { c } else { best })
    }
}

fn case_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

/// Dimension statistics pool every sheet; case statistics pool all four
/// dimensions of every sheet for that case. Standard deviations use the
/// `n - 1` denominator.
pub fn aggregate_ratings(sheets: &[RatingSheet]) -> Result<RatingSummary, EvalError> {
    if sheets.is_empty() {
        return Err(EvalError::NoRatings);
    }
    let mut seen = HashSet::new();
    for s in sheets {
        s.validate()?;
        if !seen.insert((s.case_id.as_str(), s.rater_id.as_str())) {
            return Err(EvalError::DuplicateRating {
                case_id: s.case_id.clone(),
                rater_id: s.rater_id.clone(),
            });
        }
    }
    // Sort first so floating-point sums do not depend on input order.
    let mut sorted: Vec<&RatingSheet> = sheets.iter().collect();
    sorted.sort_by(|a, b| case_order(&a.case_id, &b.case_id).then_with(|| a.rater_id.cmp(&b.rater_id)));

    let dimensions = Dimension::ALL
        .iter()
        .map(|&d| {
            let xs: Vec<f64> = sorted.iter().map(|s| s.score(d) as f64).collect();
            DimensionStat {
                dimension: d,
                mean: mean(&xs),
                sd: sample_sd(&xs),
            }
        })
        .collect();

    let mut by_case: BTreeMap<usize, (String, Vec<f64>, usize)> = BTreeMap::new();
    let mut index = 0;
    let mut last: Option<&str> = None;
    for s in &sorted {
        if last != Some(s.case_id.as_str()) {
            index += 1;
            last = Some(&s.case_id);
        }
        let e = by_case.entry(index).or_insert_with(|| (s.case_id.clone(), Vec::new(), 0));
        e.1.extend(Dimension::ALL.iter().map(|&d| s.score(d) as f64));
        e.2 += 1;
    }
    let cases = by_case
        .into_values()
        .map(|(case_id, xs, sheets)| CaseStat {
            case_id,
            sheets,
            mean: mean(&xs),
            sd: sample_sd(&xs),
        })
        .collect();
    Ok(RatingSummary { dimensions, cases })
}

pub fn read_ratings_csv(path: &Path) -> Result<Vec<RatingSheet>, EvalError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(EvalError::from)).collect()
}

pub fn write_ratings_csv(path: &Path, sheets: &[RatingSheet]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for s in sheets {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}
