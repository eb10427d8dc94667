//! Labeled intent datasets: parsing, small-class filtering, and
//! seen/unseen class splits.
//!
//! Two line formats are accepted:
//! - marker format: `BOS <tok>... EOS <label>` (blank lines ignored,
//!   `#`-prefixed lines are comments)
//! - TSV: `text<TAB>label`, one record per line, no header
//!
//! Tokenization is whitespace splitting over NFC-normalized UTF-8.

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use rand::seq::SliceRandom;
use std::collections::BTreeMap;
use unicode_normalization::UnicodeNormalization;

/// One labeled sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub id: String,
    pub raw_text: String,
    pub tokens: Vec<String>,
    pub label: String,
}

/// An immutable collection of utterances with its label vocabulary.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    /// Labels in order of first appearance.
    pub label_vocab: Vec<String>,
    pub per_class_counts: BTreeMap<String, usize>,
}

impl Corpus {
    pub fn from_utterances(utterances: Vec<Utterance>) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut label_vocab = Vec::new();
        let mut per_class_counts = BTreeMap::new();
        for utt in &utterances {
            let count = per_class_counts.entry(utt.label.clone()).or_insert(0usize);
            if *count == 0 {
                label_vocab.push(utt.label.clone());
            }
            *count += 1;
        }
        Ok(Self {
            utterances,
            label_vocab,
            per_class_counts,
        })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Indices of the utterances carrying `label`, in corpus order.
    pub fn indices_of(&self, label: &str) -> Vec<usize> {
        self.utterances
            .iter()
            .enumerate()
            .filter(|(_, u)| u.label == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// A new corpus containing only the utterances whose label passes `keep`.
    pub fn retain_labels(&self, keep: impl Fn(&str) -> bool) -> Result<Self> {
        let kept: Vec<Utterance> = self
            .utterances
            .iter()
            .filter(|u| keep(&u.label))
            .cloned()
            .collect();
        Self::from_utterances(kept)
    }
}

/// Disjoint class-level split into train / validation / test label sets.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ClassSplit {
    pub seen_fraction: f64,
    pub c_train: Vec<String>,
    pub c_val: Vec<String>,
    pub c_test: Vec<String>,
    pub seed: u64,
}

fn nfc_tokens(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect();
    normalized.split_whitespace().map(str::to_owned).collect()
}

/// Parse the marker format: `BOS <tok>... EOS <label>`.
pub fn parse_atis_format<I, S>(lines: I) -> Result<Corpus>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut utterances = Vec::new();
    for (idx, line) in lines.into_iter().enumerate() {
        let line_no = idx + 1;
        let raw = line.as_ref();
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let items = nfc_tokens(trimmed);
        let n = items.len();
        if n < 3 || items[0] != "BOS" || items[n - 2] != "EOS" {
            return Err(Error::MalformedLine(line_no));
        }
        let tokens = items[1..n - 2].to_vec();
        if tokens.is_empty() {
            return Err(Error::EmptyQuery(line_no));
        }
        let label = items[n - 1].clone();
        utterances.push(Utterance {
            id: format!("l{line_no}"),
            raw_text: tokens.join(" "),
            tokens,
            label,
        });
    }
    Corpus::from_utterances(utterances)
}

/// Parse `text<TAB>label` records.
pub fn parse_tsv<I, S>(lines: I) -> Result<Corpus>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut utterances = Vec::new();
    for (idx, line) in lines.into_iter().enumerate() {
        let line_no = idx + 1;
        let raw = line.as_ref();
        if raw.trim().is_empty() {
            continue;
        }
        let Some((text, label)) = raw.split_once('\t') else {
            return Err(Error::MalformedLine(line_no));
        };
        let tokens = nfc_tokens(text);
        let label = label.trim();
        if tokens.is_empty() || label.is_empty() {
            return Err(Error::MalformedLine(line_no));
        }
        utterances.push(Utterance {
            id: format!("l{line_no}"),
            raw_text: tokens.join(" "),
            tokens,
            label: label.nfc().collect(),
        });
    }
    Corpus::from_utterances(utterances)
}

/// Default smallest class size kept by [`filter_small_classes`]: classes
/// with six or fewer samples are unusable for few-shot episodes.
pub const DEFAULT_MIN_CLASS_COUNT: usize = 7;

/// Drop every class whose sample count is below `min_count`.
/// Idempotent; errors with [`Error::EmptyCorpus`] if nothing survives.
pub fn filter_small_classes(corpus: &Corpus, min_count: usize) -> Result<Corpus> {
    corpus.retain_labels(|label| corpus.per_class_counts[label] >= min_count)
}

/// Assign classes (never samples) to disjoint train / val / test sets by a
/// seeded shuffle. `seen_fraction` of the vocabulary (rounded, at least one
/// class) is seen; the unseen remainder is divided by `val_fraction_of_unseen`.
/// A pure function of the label **set**, the fractions, and the seed.
pub fn make_class_split(
    corpus: &Corpus,
    seen_fraction: f64,
    val_fraction_of_unseen: f64,
    seed: u64,
) -> Result<ClassSplit> {
    if !(0.0..1.0).contains(&seen_fraction) || seen_fraction == 0.0 {
        return Err(Error::InvalidConfig(format!(
            "seen_fraction must lie in (0,1), got {seen_fraction}"
        )));
    }
    let mut labels = corpus.label_vocab.clone();
    labels.sort();
    let total = labels.len();
    if total < 3 {
        return Err(Error::TooFewClasses);
    }
    labels.shuffle(&mut seeded_rng(seed));

    let n_train = ((seen_fraction * total as f64).round() as usize).max(1);
    if n_train + 2 > total {
        return Err(Error::TooFewClasses);
    }
    let unseen = total - n_train;
    let n_val = (val_fraction_of_unseen * unseen as f64).round() as usize;
    if n_val == 0 || n_val >= unseen {
        return Err(Error::TooFewClasses);
    }

    let mut c_train: Vec<String> = labels[..n_train].to_vec();
    let mut c_val: Vec<String> = labels[n_train..n_train + n_val].to_vec();
    let mut c_test: Vec<String> = labels[n_train + n_val..].to_vec();
    c_train.sort();
    c_val.sort();
    c_test.sort();
    Ok(ClassSplit {
        seen_fraction,
        c_train,
        c_val,
        c_test,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atis_lines() -> Vec<String> {
        vec![
            "BOS a b c EOS flight".into(),
            "# comment".into(),
            "BOS d e EOS flight".into(),
            "".into(),
            "BOS f EOS flight".into(),
            "BOS g h EOS airfare".into(),
            "BOS i EOS airfare".into(),
        ]
    }

    #[test]
    fn atis_lines_parse_tokens_and_labels() {
        let corpus = parse_atis_format(atis_lines()).unwrap();
        assert_eq!(corpus.len(), 5);
        assert_eq!(corpus.utterances[0].tokens, vec!["a", "b", "c"]);
        assert_eq!(corpus.utterances[0].label, "flight");
        assert_eq!(corpus.per_class_counts["flight"], 3);
        assert_eq!(corpus.per_class_counts["airfare"], 2);
        assert_eq!(corpus.label_vocab, vec!["flight", "airfare"]);
    }

    #[test]
    fn missing_label_is_malformed() {
        let err = parse_atis_format(["BOS x EOS"]).unwrap_err();
        assert!(matches!(err, Error::MalformedLine(1)));
    }

    #[test]
    fn empty_query_is_rejected() {
        let err = parse_atis_format(["BOS EOS flight"]).unwrap_err();
        assert!(matches!(err, Error::EmptyQuery(1)));
    }

    #[test]
    fn tsv_parses_urdu_text() {
        let corpus = parse_tsv(["کراچی موسم\tInformational"]).unwrap();
        assert_eq!(corpus.utterances[0].label, "Informational");
        assert_eq!(corpus.utterances[0].tokens.len(), 2);
    }

    #[test]
    fn tsv_without_tab_is_malformed() {
        assert!(matches!(parse_tsv(["abc"]).unwrap_err(), Error::MalformedLine(1)));
    }

    #[test]
    fn empty_input_is_empty_corpus() {
        assert!(matches!(parse_tsv(Vec::<String>::new()).unwrap_err(), Error::EmptyCorpus));
    }

    fn counted_corpus(counts: &[(&str, usize)]) -> Corpus {
        let mut utterances = Vec::new();
        for (label, n) in counts {
            for i in 0..*n {
                utterances.push(Utterance {
                    id: format!("{label}-{i}"),
                    raw_text: format!("tok{i}"),
                    tokens: vec![format!("tok{i}")],
                    label: (*label).into(),
                });
            }
        }
        Corpus::from_utterances(utterances).unwrap()
    }

    #[test]
    fn filtering_drops_classes_at_or_below_six() {
        let corpus = counted_corpus(&[("A", 6), ("B", 7)]);
        let kept = filter_small_classes(&corpus, DEFAULT_MIN_CLASS_COUNT).unwrap();
        assert_eq!(kept.label_vocab, vec!["B"]);
        assert_eq!(kept.len(), 7);
    }

    #[test]
    fn filtering_is_idempotent_and_keeps_large_classes() {
        let corpus = counted_corpus(&[("A", 100), ("B", 100)]);
        let once = filter_small_classes(&corpus, 7).unwrap();
        assert_eq!(once.len(), corpus.len());
        let twice = filter_small_classes(&once, 7).unwrap();
        assert_eq!(twice.len(), once.len());
    }

    #[test]
    fn split_sizes_follow_rounding_rule() {
        let counts: Vec<(String, usize)> = (0..16).map(|i| (format!("c{i:02}"), 8)).collect();
        let refs: Vec<(&str, usize)> = counts.iter().map(|(l, n)| (l.as_str(), *n)).collect();
        let corpus = counted_corpus(&refs);
        let split = make_class_split(&corpus, 0.25, 0.5, 9).unwrap();
        assert_eq!(split.c_train.len(), 4);
        assert_eq!(split.c_val.len(), 6);
        assert_eq!(split.c_test.len(), 6);
        let again = make_class_split(&corpus, 0.25, 0.5, 9).unwrap();
        assert_eq!(split.c_train, again.c_train);
        assert_eq!(split.c_val, again.c_val);
        assert_eq!(split.c_test, again.c_test);
    }

    #[test]
    fn two_class_corpus_cannot_split() {
        let corpus = counted_corpus(&[("A", 5), ("B", 5)]);
        assert!(matches!(
            make_class_split(&corpus, 0.5, 0.5, 1).unwrap_err(),
            Error::TooFewClasses
        ));
    }
}
