//! Interchangeable similarity measures for prototype scoring.
//!
//! All thirteen measures are oriented so that **higher means more similar**;
//! distances are negated. Classification is per-row argmax with ties broken
//! toward the lowest prototype index. Only cosine participates in training;
//! the others substitute at inference time.

use crate::error::{Error, Result};
use ndarray::Array2;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    Angular,
    Bhattacharyya,
    Chebyshev,
    Cosine,
    Dice,
    #[serde(rename = "dot")]
    DotProduct,
    Euclidean,
    Hamming,
    Jaccard,
    #[serde(rename = "kl")]
    KlDivergence,
    L2,
    Manhattan,
    Pearson,
}

impl SimilarityKind {
    pub const ALL: [SimilarityKind; 13] = [
        SimilarityKind::Angular,
        SimilarityKind::Bhattacharyya,
        SimilarityKind::Chebyshev,
        SimilarityKind::Cosine,
        SimilarityKind::Dice,
        SimilarityKind::DotProduct,
        SimilarityKind::Euclidean,
        SimilarityKind::Hamming,
        SimilarityKind::Jaccard,
        SimilarityKind::KlDivergence,
        SimilarityKind::L2,
        SimilarityKind::Manhattan,
        SimilarityKind::Pearson,
    ];

    pub fn token(&self) -> &'static str {
        match self {
            SimilarityKind::Angular => "angular",
            SimilarityKind::Bhattacharyya => "bhattacharyya",
            SimilarityKind::Chebyshev => "chebyshev",
            SimilarityKind::Cosine => "cosine",
            SimilarityKind::Dice => "dice",
            SimilarityKind::DotProduct => "dot",
            SimilarityKind::Euclidean => "euclidean",
            SimilarityKind::Hamming => "hamming",
            SimilarityKind::Jaccard => "jaccard",
            SimilarityKind::KlDivergence => "kl",
            SimilarityKind::L2 => "l2",
            SimilarityKind::Manhattan => "manhattan",
            SimilarityKind::Pearson => "pearson",
        }
    }
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl std::str::FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.token() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown similarity kind {s:?}")))
    }
}

fn dot(q: &[f64], p: &[f64]) -> f64 {
    q.iter().zip(p).map(|(a, b)| a * b).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn cosine(q: &[f64], p: &[f64]) -> Result<f64> {
    let (nq, np) = (norm(q), norm(p));
    if nq == 0.0 || np == 0.0 {
        return Err(Error::ZeroNormVector);
    }
    Ok(dot(q, p) / (nq * np))
}

/// Similarity of `q` against `p` under the chosen rule.
pub fn score(kind: SimilarityKind, q: &[f64], p: &[f64]) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: q.len(),
            got: p.len(),
        });
    }
    let value = match kind {
        SimilarityKind::Cosine => cosine(q, p)?,
        SimilarityKind::Angular => {
            let c = cosine(q, p)?.clamp(-1.0, 1.0);
            1.0 - c.acos() / std::f64::consts::PI
        }
        SimilarityKind::DotProduct => dot(q, p),
        SimilarityKind::Euclidean => {
            -q.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        }
        SimilarityKind::L2 => -q.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>(),
        SimilarityKind::Manhattan => -q.iter().zip(p).map(|(a, b)| (a - b).abs()).sum::<f64>(),
        SimilarityKind::Chebyshev => {
            -q.iter().zip(p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        }
        SimilarityKind::Pearson => {
            let center = |v: &[f64]| {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                v.iter().map(|x| x - mean).collect::<Vec<f64>>()
            };
            cosine(&center(q), &center(p))?
        }
        SimilarityKind::Dice => {
            let denom = dot(q, q) + dot(p, p);
            if denom == 0.0 {
                return Err(Error::ZeroNormVector);
            }
            2.0 * dot(q, p) / denom
        }
        SimilarityKind::Jaccard => {
            let denom = dot(q, q) + dot(p, p) - dot(q, p);
            if denom == 0.0 {
                return Err(Error::ZeroNormVector);
            }
            dot(q, p) / denom
        }
        SimilarityKind::Hamming => {
            // sign binarization with sign(0) treated as positive
            let mismatches = q
                .iter()
                .zip(p)
                .filter(|(a, b)| (**a < 0.0) != (**b < 0.0))
                .count();
            -(mismatches as f64)
        }
        SimilarityKind::KlDivergence => {
            let (sq, sp) = (softmax(q), softmax(p));
            -sq.iter()
                .zip(&sp)
                .map(|(a, b)| a * (a / b).ln())
                .sum::<f64>()
        }
        SimilarityKind::Bhattacharyya => {
            let (sq, sp) = (softmax(q), softmax(p));
            sq.iter()
                .zip(&sp)
                .map(|(a, b)| (a * b).sqrt())
                .sum::<f64>()
                .ln()
        }
    };
    Ok(value)
}

/// Score every query row against every prototype row.
pub fn score_matrix(
    kind: SimilarityKind,
    queries: &Array2<f64>,
    protos: &Array2<f64>,
) -> Result<Array2<f64>> {
    if queries.ncols() != protos.ncols() {
        return Err(Error::DimensionMismatch {
            expected: queries.ncols(),
            got: protos.ncols(),
        });
    }
    let mut out = Array2::zeros((queries.nrows(), protos.nrows()));
    for i in 0..queries.nrows() {
        let q: Vec<f64> = queries.row(i).to_vec();
        for j in 0..protos.nrows() {
            let p: Vec<f64> = protos.row(j).to_vec();
            out[(i, j)] = score(kind, &q, &p)?;
        }
    }
    Ok(out)
}

/// Per-row argmax with first-wins tie-breaking.
pub fn argmax_rows(scores: &Array2<f64>) -> Vec<usize> {
    (0..scores.nrows())
        .map(|r| {
            let mut best = 0;
            for c in 1..scores.ncols() {
                if scores[(r, c)] > scores[(r, best)] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn orthogonal_and_identical_pairs() {
        assert_abs_diff_eq!(score(SimilarityKind::Cosine, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(score(SimilarityKind::Angular, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.5);
        assert_abs_diff_eq!(score(SimilarityKind::L2, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(score(SimilarityKind::Euclidean, &[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(score(SimilarityKind::Jaccard, &[1.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(score(SimilarityKind::Dice, &[1.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn pearson_sees_through_scaling() {
        let value = score(SimilarityKind::Pearson, &[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert_abs_diff_eq!(value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bhattacharyya_of_identical_distributions_is_zero() {
        for v in [[0.3, -1.2, 0.5], [2.0, 2.0, 2.0], [-4.0, 0.0, 9.0]] {
            assert_abs_diff_eq!(
                score(SimilarityKind::Bhattacharyya, &v, &v).unwrap(),
                0.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn hand_checked_cosine_with_temperature_semantics() {
        let c = score(SimilarityKind::Cosine, &[1.0, 2.0], &[2.0, 1.0]).unwrap();
        assert_abs_diff_eq!(c, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(c / 0.1, 8.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_norm_is_rejected_where_division_occurs() {
        let zero = [0.0, 0.0];
        let v = [1.0, 2.0];
        for kind in [
            SimilarityKind::Cosine,
            SimilarityKind::Angular,
            SimilarityKind::Dice,
        ] {
            assert!(matches!(score(kind, &zero, &zero), Err(Error::ZeroNormVector)));
        }
        // constant vectors have zero norm after centering
        assert!(matches!(
            score(SimilarityKind::Pearson, &[3.0, 3.0], &v),
            Err(Error::ZeroNormVector)
        ));
        // dot and the negated distances accept zero vectors
        assert_eq!(score(SimilarityKind::DotProduct, &zero, &v).unwrap(), 0.0);
        assert!(score(SimilarityKind::Euclidean, &zero, &v).unwrap() < 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        assert!(matches!(
            score(SimilarityKind::Cosine, &[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn matrix_matches_pairwise_loop() {
        let queries = ndarray::arr2(&[[1.0, 0.5, -0.25]]);
        let protos = ndarray::arr2(&[[0.5, 1.0, 0.0]]);
        let m = score_matrix(SimilarityKind::Cosine, &queries, &protos).unwrap();
        let s = score(
            SimilarityKind::Cosine,
            &[1.0, 0.5, -0.25],
            &[0.5, 1.0, 0.0],
        )
        .unwrap();
        assert_abs_diff_eq!(m[(0, 0)], s, epsilon = 1e-12);
    }

    #[test]
    fn ties_break_toward_lowest_index() {
        let queries = ndarray::arr2(&[[1.0, 0.0], [0.5, 0.5]]);
        let protos = ndarray::arr2(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]);
        let m = score_matrix(SimilarityKind::Cosine, &queries, &protos).unwrap();
        assert_eq!(argmax_rows(&m), vec![0, 0]);
    }

    #[test]
    fn kind_tokens_round_trip() {
        for kind in SimilarityKind::ALL {
            let parsed: SimilarityKind = kind.token().parse().unwrap();
            assert_eq!(parsed, kind);
        }
        assert!("mahalanobis".parse::<SimilarityKind>().is_err());
    }
}
