//! Evaluation measures: accuracy, support-weighted precision/recall, the
//! weighted F1 defined as the harmonic mean of weighted precision and
//! weighted recall (not the weighted mean of per-class F1), and the
//! precision/recall bias categorization.

use crate::error::{Error, Result};
use crate::similarity::SimilarityKind;

/// Row-major confusion counts: rows are true classes, columns predictions.
#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub labels: Vec<String>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let c = labels.len();
        Self {
            counts: vec![vec![0; c]; c],
            labels,
        }
    }

    pub fn record(&mut self, true_class: usize, predicted: usize) {
        self.counts[true_class][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }
}

/// Direction of a systematic error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasErrorType {
    /// Excess false positives (recall above precision).
    TypeI,
    /// Excess false negatives (precision above recall).
    TypeII,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasCategory {
    Unbiased,
    Low,
    Medium,
    High,
}

impl std::fmt::Display for BiasErrorType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BiasErrorType::TypeI => "type_i",
            BiasErrorType::TypeII => "type_ii",
            BiasErrorType::None => "none",
        })
    }
}

impl std::fmt::Display for BiasCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BiasCategory::Unbiased => "unbiased",
            BiasCategory::Low => "low",
            BiasCategory::Medium => "medium",
            BiasCategory::High => "high",
        })
    }
}

/// Core evaluation numbers (all in `[0, 1]`).
#[derive(Debug, Clone, Copy)]
pub struct CoreMetrics {
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
}

/// Full evaluation record for one run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub bias_category: BiasCategory,
    pub bias_error_type: BiasErrorType,
    pub model: String,
    pub similarity: SimilarityKind,
    pub n_way: usize,
    pub k_shot: usize,
    pub seen_fraction: f64,
    pub seed: u64,
    pub t: f64,
    pub tau: f64,
}

/// Compute accuracy and the support-weighted measures from a confusion
/// matrix. Per-class precision or recall with an empty denominator is 0,
/// so reports never contain undefined values.
pub fn weighted_metrics(confusion: &ConfusionMatrix) -> Result<CoreMetrics> {
    let c = confusion.classes();
    let total = confusion.total();
    if c == 0 || total == 0 {
        return Err(Error::EmptyConfusion);
    }
    let total = total as f64;

    let mut trace = 0.0;
    let mut weighted_precision = 0.0;
    let mut weighted_recall = 0.0;
    for i in 0..c {
        let tp = confusion.counts[i][i] as f64;
        trace += tp;
        let row: f64 = confusion.counts[i].iter().sum::<u64>() as f64;
        let col: f64 = (0..c).map(|r| confusion.counts[r][i]).sum::<u64>() as f64;
        let precision = if col > 0.0 { tp / col } else { 0.0 };
        let recall = if row > 0.0 { tp / row } else { 0.0 };
        let weight = row / total;
        weighted_precision += weight * precision;
        weighted_recall += weight * recall;
    }
    let weighted_f1 = if weighted_precision + weighted_recall > 0.0 {
        2.0 * weighted_precision * weighted_recall / (weighted_precision + weighted_recall)
    } else {
        0.0
    };
    Ok(CoreMetrics {
        accuracy: trace / total,
        weighted_precision,
        weighted_recall,
        weighted_f1,
    })
}

/// Categorize the precision/recall gap. Gaps under one percentage point are
/// unbiased; otherwise Low (< 3 points), Medium (3 to 5) or High (> 5), with
/// the error direction taken from which measure dominates.
pub fn bias_classification(precision: f64, recall: f64) -> (BiasCategory, BiasErrorType) {
    // small guard so e.g. |0.75 - 0.70| lands exactly on the 5-point boundary
    const EPS: f64 = 1e-9;
    let gap_points = (precision - recall).abs() * 100.0;
    if gap_points < 1.0 - EPS {
        return (BiasCategory::Unbiased, BiasErrorType::None);
    }
    let category = if gap_points < 3.0 - EPS {
        BiasCategory::Low
    } else if gap_points <= 5.0 + EPS {
        BiasCategory::Medium
    } else {
        BiasCategory::High
    };
    let error_type = if precision > recall {
        BiasErrorType::TypeII
    } else {
        BiasErrorType::TypeI
    };
    (category, error_type)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn confusion(counts: &[&[u64]]) -> ConfusionMatrix {
        let labels = (0..counts.len()).map(|i| format!("c{i}")).collect();
        let mut m = ConfusionMatrix::new(labels);
        m.counts = counts.iter().map(|r| r.to_vec()).collect();
        m
    }

    #[test]
    fn perfect_diagonal_scores_one() {
        let m = confusion(&[&[5, 0], &[0, 7]]);
        let core = weighted_metrics(&m).unwrap();
        assert_abs_diff_eq!(core.accuracy, 1.0);
        assert_abs_diff_eq!(core.weighted_precision, 1.0);
        assert_abs_diff_eq!(core.weighted_recall, 1.0);
        assert_abs_diff_eq!(core.weighted_f1, 1.0);
    }

    #[test]
    fn worked_two_class_example() {
        let m = confusion(&[&[3, 0], &[1, 0]]);
        let core = weighted_metrics(&m).unwrap();
        assert_abs_diff_eq!(core.accuracy, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(core.weighted_precision, 0.5625, epsilon = 1e-12);
        assert_abs_diff_eq!(core.weighted_recall, 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(core.weighted_f1, 0.6428571428571429, epsilon = 1e-12);
    }

    #[test]
    fn empty_confusion_is_an_error() {
        let m = confusion(&[&[0, 0], &[0, 0]]);
        assert!(matches!(weighted_metrics(&m).unwrap_err(), Error::EmptyConfusion));
    }

    #[test]
    fn uniform_random_predictions_approach_chance() {
        use rand::Rng;
        let c = 5;
        let zeros: Vec<&[u64]> = vec![&[0; 5]; 5];
        let mut m = confusion(&zeros);
        let mut rng = crate::rng::seeded_rng(17);
        for _ in 0..200_000 {
            m.record(rng.gen_range(0..c), rng.gen_range(0..c));
        }
        let core = weighted_metrics(&m).unwrap();
        assert!((core.accuracy - 0.2).abs() < 0.01, "accuracy {}", core.accuracy);
    }

    #[test]
    fn bias_thresholds() {
        assert_eq!(
            bias_classification(0.8, 0.8),
            (BiasCategory::Unbiased, BiasErrorType::None)
        );
        assert_eq!(
            bias_classification(0.80, 0.74),
            (BiasCategory::High, BiasErrorType::TypeII)
        );
        assert_eq!(
            bias_classification(0.70, 0.72),
            (BiasCategory::Low, BiasErrorType::TypeI)
        );
        assert_eq!(
            bias_classification(0.70, 0.66),
            (BiasCategory::Medium, BiasErrorType::TypeII)
        );
        // exactly five points is still medium
        assert_eq!(bias_classification(0.75, 0.70).0, BiasCategory::Medium);
    }
}
