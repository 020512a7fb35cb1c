use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RougeVariant {
    N(usize),
    L,
}

impl fmt::Display for RougeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RougeVariant::N(n) => write!(f, "rouge{n}"),
            RougeVariant::L => f.write_str("rougeL"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub variant: RougeVariant,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(variant: RougeVariant, overlap: usize, reference: usize, candidate: usize) -> Self {
        let ratio = |d: usize| if d == 0 { 0.0 } else { overlap as f64 / d as f64 };
        let (recall, precision) = (ratio(reference), ratio(candidate));
        let f1 = if recall + precision > 0.0 {
            2.0 * recall * precision / (recall + precision)
        } else {
            0.0
        };
        Self {
            variant,
            recall,
            precision,
            f1,
        }
    }

    pub fn zero(variant: RougeVariant) -> Self {
        Self::from_counts(variant, 0, 0, 0)
    }
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn metric_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// ROUGE-N with overlap clipped to the reference multiplicity. `n == 0`
/// scores zero.
pub fn rouge_n(candidate: &str, reference: &str, n: usize) -> RougeScore {
    let (c, r) = (metric_tokens(candidate), metric_tokens(reference));
    let (cc, rc) = (ngram_counts(&c, n), ngram_counts(&r, n));
    let overlap = cc
        .iter()
        .map(|(g, &k)| k.min(rc.get(g).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_counts(
        RougeVariant::N(n),
        overlap,
        rc.values().sum(),
        cc.values().sum(),
    )
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L from the longest common subsequence of the token sequences.
pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    let (c, r) = (metric_tokens(candidate), metric_tokens(reference));
    RougeScore::from_counts(RougeVariant::L, lcs_len(&c, &r), r.len(), c.len())
}

/// ROUGE-1, ROUGE-2 and ROUGE-L.
pub fn rouge_all(candidate: &str, reference: &str) -> [RougeScore; 3] {
    [
        rouge_n(candidate, reference, 1),
        rouge_n(candidate, reference, 2),
        rouge_l(candidate, reference),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CAND: &str = "I like machine learning very much";
    const REF: &str = "I love machine learning";

    #[test]
    fn worked_example_unigrams() {
        let s = rouge_n(CAND, REF, 1);
        assert!((s.recall - 0.75).abs() < 1e-12);
        assert!((s.precision - 0.5).abs() < 1e-12);
        assert!((s.f1 - 0.6).abs() < 1e-12);
    }

    #[test]
    fn worked_example_bigrams() {
        let s = rouge_n(CAND, REF, 2);
        assert!((s.recall - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.precision - 0.2).abs() < 1e-12);
        assert!((s.f1 - 0.25).abs() < 1e-12);
    }

    /// Longest common subsequence by enumerating every subsequence of the
    /// shorter sequence.
    fn brute_lcs(a: &[String], b: &[String]) -> usize {
        let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        let is_subseq = |s: &[&String]| {
            let mut it = long.iter();
            s.iter().all(|x| it.any(|y| y == *x))
        };
        (0u32..1 << short.len())
            .filter_map(|mask| {
                let s: Vec<&String> = (0..short.len()).filter(|i| mask >> i & 1 == 1).map(|i| &short[i]).collect();
                is_subseq(&s).then_some(s.len())
            })
            .max()
            .unwrap_or(0)
    }

    #[test]
    fn worked_example_lcs() {
        let s = rouge_l(CAND, REF);
        assert_eq!(brute_lcs(&metric_tokens(CAND), &metric_tokens(REF)), 3);
        assert!((s.recall - 0.75).abs() < 1e-12);
        assert!((s.precision - 0.5).abs() < 1e-12);
        assert!((s.f1 - 0.6).abs() < 1e-12);
    }

    #[test]
    fn identical_and_disjoint() {
        let t = "The patient was seen on 06.08.2020.";
        for s in rouge_all(t, t) {
            assert_eq!((s.recall, s.precision, s.f1), (1.0, 1.0, 1.0));
        }
        for s in rouge_all("alpha beta gamma", "delta epsilon") {
            assert_eq!((s.recall, s.precision, s.f1), (0.0, 0.0, 0.0));
        }
        for s in rouge_all("", "") {
            assert_eq!((s.recall, s.precision, s.f1), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn no_stemming_or_synonyms() {
        assert_eq!(rouge_n("like", "love", 1).f1, 0.0);
        assert_eq!(rouge_n("learning", "learn", 1).f1, 0.0);
        assert_eq!(rouge_n("Learning,", "learning", 1).f1, 1.0);
    }

    #[test]
    fn clipped_multiplicity() {
        let s = rouge_n("the the the", "the cat", 1);
        assert!((s.precision - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.recall - 0.5).abs() < 1e-15);
    }

    fn has_repeats(t: &str) -> bool {
        let toks = metric_tokens(t);
        let set: std::collections::HashSet<_> = toks.iter().collect();
        set.len() < toks.len()
    }

    fn all_sequences(alphabet: &[&str], max_len: usize) -> Vec<String> {
        let mut seqs: Vec<Vec<&str>> = vec![vec![]];
        let mut frontier = seqs.clone();
        for _ in 0..max_len {
            frontier = frontier
                .iter()
                .flat_map(|s| alphabet.iter().map(move |a| [s.as_slice(), &[*a]].concat()))
                .collect();
            seqs.extend(frontier.iter().cloned());
        }
        seqs.iter().filter(|s| s.len() >= 2).map(|s| s.join(" ")).collect()
    }

    #[test]
    fn bigram_can_beat_unigram_when_tokens_repeat() {
        // Clipping caps the unigram overlap at 2 of 3 while both bigrams match.
        let (c, r) = ("a b a", "b a b");
        assert!((rouge_n(c, r, 1).f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rouge_n(c, r, 2).f1, 1.0);
    }

    #[test]
    fn unigram_beats_bigram_without_repeats_exhaustively() {
        let texts = all_sequences(&["a", "b", "c"], 4);
        let mut violations = 0;
        for c in &texts {
            for r in &texts {
                let (one, two) = (rouge_n(c, r, 1).f1, rouge_n(c, r, 2).f1);
                if has_repeats(c) || has_repeats(r) {
                    violations += usize::from(one < two);
                } else {
                    assert!(one >= two, "{c} / {r}");
                }
            }
        }
        assert!(violations > 0);
    }

    fn distinct_text() -> impl Strategy<Value = String> {
        prop::sample::subsequence(vec!["a", "b", "c", "d", "e", "f", "g", "h"], 2..8)
            .prop_shuffle()
            .prop_map(|v| v.join(" "))
    }

    fn text() -> impl Strategy<Value = String> {
        proptest::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f", ",", "."]), 0..12)
            .prop_map(|v| v.join(" "))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn swap_exchanges_recall_and_precision(c in text(), r in text(), n in 1usize..4) {
            for (x, y) in [(rouge_n(&c, &r, n), rouge_n(&r, &c, n)), (rouge_l(&c, &r), rouge_l(&r, &c))] {
                prop_assert_eq!(x.recall, y.precision);
                prop_assert_eq!(x.precision, y.recall);
                prop_assert!((x.f1 - y.f1).abs() < 1e-15);
            }
        }

        #[test]
        fn scores_in_unit_interval(c in text(), r in text()) {
            for s in rouge_all(&c, &r) {
                for v in [s.recall, s.precision, s.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }

        #[test]
        fn unigram_at_least_bigram_without_repeats(c in distinct_text(), r in distinct_text()) {
            prop_assert!(rouge_n(&c, &r, 1).f1 >= rouge_n(&c, &r, 2).f1);
        }

        #[test]
        fn lcs_matches_brute_force(c in text(), r in text()) {
            let (a, b) = (metric_tokens(&c), metric_tokens(&r));
            prop_assert_eq!(lcs_len(&a, &b), brute_lcs(&a, &b));
        }
    }
}
