//! Cosine similarity, similarity sets, exact top-k retrieval and recall@k.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedstore::{SourceTag, VectorSource};
use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `v·l / (‖v‖‖l‖)`.
pub fn cosine(v: &[f64], l: &[f64]) -> Result<f64> {
    if v.len() != l.len() {
        return Err(Error::DimMismatch { expected: v.len(), got: l.len() });
    }
    let (nv, nl) = (norm(v), norm(l));
    if nv == 0.0 || nl == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(dot(v, l) / (nv * nl))
}

/// Scores of every row of a source against one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySet {
    pub query_id: String,
    pub scores: Vec<f64>,
    pub source: SourceTag,
}

pub fn similarity_set<S: VectorSource + ?Sized>(source: &S, query: &[f64]) -> Result<SimilaritySet> {
    if query.len() != source.dim() {
        return Err(Error::DimMismatch { expected: source.dim(), got: query.len() });
    }
    let scores = (0..source.len())
        .into_par_iter()
        .map(|i| cosine(&source.vector(i), query))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimilaritySet { query_id: String::new(), scores, source: source.source_tag() })
}

impl SimilaritySet {
    pub fn with_query_id(mut self, id: impl Into<String>) -> Self {
        self.query_id = id.into();
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub k: usize,
    /// `(row, score)`, best first.
    pub ranked: Vec<(usize, f64)>,
}

impl RetrievalResult {
    pub fn rows(&self) -> Vec<usize> {
        self.ranked.iter().map(|&(r, _)| r).collect()
    }
}

/// Orders `(row, score)` by descending score, then ascending row.
pub fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    // `+ 0.0` folds -0.0 into 0.0 so signed zeros tie
    (b.1 + 0.0).total_cmp(&(a.1 + 0.0)).then(a.0.cmp(&b.0))
}

/// The `k` best rows; `k` larger than the set returns everything.
pub fn top_k(simset: &SimilaritySet, k: usize) -> RetrievalResult {
    top_k_scores(&simset.scores, k)
}

pub fn top_k_scores(scores: &[f64], k: usize) -> RetrievalResult {
    let k = k.max(1);
    let mut all: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    let take = k.min(all.len());
    if take > 0 && take < all.len() {
        all.select_nth_unstable_by(take - 1, rank_order);
        all.truncate(take);
    }
    all.sort_unstable_by(rank_order);
    RetrievalResult { k, ranked: all }
}

/// Text queries paired with the image row each one describes.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PairedQueries {
    pub texts: Vec<Vec<f64>>,
    pub image_rows: Vec<Option<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    /// k → percentage of queries whose paired image lands in the top k.
    pub recall: BTreeMap<usize, f64>,
    /// `mean(100 − R@k)` over the reported k values.
    pub mean_error: f64,
    pub queries: usize,
    pub source: SourceTag,
}

/// 0-based rank of `target` under [`rank_order`], without sorting.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let t = (target, scores[target]);
    scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| rank_order(&(i, s), &t) == Ordering::Less)
        .count()
}

/// Text→image recall@k over a set of images.
pub fn recall_at_k<S: VectorSource + ?Sized>(
    images: &S,
    queries: &PairedQueries,
    ks: &[usize],
) -> Result<RecallReport> {
    if queries.texts.len() != queries.image_rows.len() {
        return Err(Error::InvalidConfig("texts and ground-truth rows differ in length".into()));
    }
    let targets = queries
        .image_rows
        .iter()
        .enumerate()
        .map(|(row, gt)| gt.filter(|&g| g < images.len()).ok_or(Error::MissingGroundTruth { row }))
        .collect::<Result<Vec<_>>>()?;
    let image_vecs = images.vectors();
    let ranks = queries
        .texts
        .par_iter()
        .zip(targets.par_iter())
        .map(|(text, &gt)| {
            if text.len() != images.dim() {
                return Err(Error::DimMismatch { expected: images.dim(), got: text.len() });
            }
            let scores = image_vecs.iter().map(|v| cosine(v, text)).collect::<Result<Vec<_>>>()?;
            Ok(rank_of(&scores, gt))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = ranks.len().max(1) as f64;
    let recall: BTreeMap<usize, f64> = ks
        .iter()
        .map(|&k| (k, 100.0 * ranks.iter().filter(|&&r| r < k).count() as f64 / n))
        .collect();
    let mean_error = if recall.is_empty() {
        0.0
    } else {
        recall.values().map(|r| 100.0 - r).sum::<f64>() / recall.len() as f64
    };
    Ok(RecallReport { recall, mean_error, queries: ranks.len(), source: images.source_tag() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedstore::DenseSource;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(cosine(&[3.0, 4.0], &[4.0, 3.0]).unwrap(), 24.0 / 25.0, epsilon = 1e-15);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
        assert!(matches!(cosine(&[1.0], &[1.0, 0.0]), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn top_k_examples() {
        let r = top_k_scores(&[0.2, 0.9, 0.5], 2);
        assert_eq!(r.rows(), vec![1, 2]);
        let r = top_k_scores(&[0.3; 4], 2);
        assert_eq!(r.rows(), vec![0, 1]);
        let r = top_k_scores(&[0.1, 0.2], 10);
        assert_eq!(r.rows(), vec![1, 0]);
    }

    #[test]
    fn similarity_set_single_row() {
        let src = DenseSource::new(vec![vec![0.5, -2.0, 1.0]], Default::default()).unwrap();
        let s = similarity_set(&src, &[0.5, -2.0, 1.0]).unwrap();
        assert_abs_diff_eq!(s.scores[0], 1.0, epsilon = 1e-15);
        let scaled = similarity_set(&src, &[2.5, -10.0, 5.0]).unwrap();
        assert_abs_diff_eq!(scaled.scores[0], s.scores[0], epsilon = 1e-15);
    }

    #[test]
    fn recall_first_rank_and_missing() {
        let src = DenseSource::new(vec![vec![1.0, 0.0], vec![0.6, 0.8], vec![0.0, 1.0]], Default::default()).unwrap();
        let first = PairedQueries { texts: vec![vec![1.0, 0.1]], image_rows: vec![Some(0)] };
        let rep = recall_at_k(&src, &first, &[1]).unwrap();
        assert_eq!(rep.recall[&1], 100.0);
        assert_eq!(rep.mean_error, 0.0);

        let missing = PairedQueries { texts: vec![vec![1.0, 0.0]], image_rows: vec![None] };
        assert!(matches!(recall_at_k(&src, &missing, &[1]), Err(Error::MissingGroundTruth { row: 0 })));
        let out_of_range = PairedQueries { texts: vec![vec![1.0, 0.0]], image_rows: vec![Some(3)] };
        assert!(matches!(recall_at_k(&src, &out_of_range, &[1]), Err(Error::MissingGroundTruth { row: 0 })));
    }

    #[test]
    fn recall_rank_seven() {
        // target ranks 7th (0-based rank 6): R@5 = 0, R@10 = 100
        let mut scores_images = Vec::new();
        for i in 0..12 {
            let s = 1.0 - 0.05 * i as f64;
            scores_images.push(vec![s, (1.0 - s * s).max(0.0).sqrt()]);
        }
        let src = DenseSource::new(scores_images, Default::default()).unwrap();
        let q = PairedQueries { texts: vec![vec![1.0, 0.0]], image_rows: vec![Some(6)] };
        let rep = recall_at_k(&src, &q, &[1, 5, 10]).unwrap();
        assert_eq!(rep.recall[&5], 0.0);
        assert_eq!(rep.recall[&10], 100.0);
        assert_abs_diff_eq!(rep.mean_error, 200.0 / 3.0, epsilon = 1e-12);
    }
}
