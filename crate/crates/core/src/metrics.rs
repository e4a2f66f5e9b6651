//! Bias@k, target significance (TAS), bias feature divergence (BFD), the
//! TAS/BFD perturbation sweep, 2-D PCA export and zero-shot divergence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apl::Prototype;
use crate::diffcore::accumulate_cosine_dv;
use crate::embedstore::{DenseSource, Label, SourceTag, VectorSource};
use crate::error::{Error, Result};
use crate::rrm::{apply_rrm, bcl, pair_rows, Rrm};
use crate::simcore::{cosine, norm, top_k_scores};

/// One bias-word query, as stored one per line in a JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasQuery {
    pub word: String,
    pub embedding: Vec<f64>,
}

pub fn load_bias_queries(path: &Path) -> Result<Vec<BiasQuery>> {
    parse_bias_queries(&std::fs::read_to_string(path)?)
}

pub fn parse_bias_queries(jsonl: &str) -> Result<Vec<BiasQuery>> {
    jsonl
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::BadMetadata { line: i + 1, message: e.to_string() })
        })
        .collect()
}

pub fn bias_queries_to_jsonl(queries: &[BiasQuery]) -> Result<String> {
    let mut out = String::new();
    for q in queries {
        out.push_str(&serde_json::to_string(q)?);
        out.push('\n');
    }
    Ok(out)
}

/// `|p_topk − p_dataset|` over the rows labeled on `attribute`.
pub fn bias_at_k<S: VectorSource + ?Sized>(source: &S, attribute: &str, query: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if query.len() != source.dim() {
        return Err(Error::DimMismatch { expected: source.dim(), got: query.len() });
    }
    let labels = source.labels(attribute)?;
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_labeled()).collect();
    if rows.is_empty() {
        return Err(Error::NoLabeledRows(attribute.to_string()));
    }
    let scores = rows
        .par_iter()
        .map(|&i| cosine(&source.vector(i), query))
        .collect::<Result<Vec<_>>>()?;
    let top = top_k_scores(&scores, k);
    let positive = |i: usize| labels[rows[i]] == Label::Positive;
    let p_top = top.ranked.iter().filter(|(i, _)| positive(*i)).count() as f64 / top.ranked.len() as f64;
    let p_all = (0..rows.len()).filter(|&i| positive(i)).count() as f64 / rows.len() as f64;
    Ok((p_top - p_all).abs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub k: usize,
    /// word → attribute → Bias@k.
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
    pub mean_bias: f64,
    pub source: SourceTag,
}

impl BiasReport {
    pub fn words(&self) -> Vec<&str> {
        self.per_query.keys().map(String::as_str).collect()
    }

    /// Bias of every query, in percentage points.
    pub fn percent(&self) -> BTreeMap<String, f64> {
        self.per_query.iter().map(|(w, m)| (w.clone(), 100.0 * mean(m.values().copied()))).collect()
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Bias@k of every query, optionally through an RRM.
pub fn bias_suite<S: VectorSource + ?Sized>(
    source: &S,
    attribute: &str,
    queries: &[BiasQuery],
    k: usize,
    rrm: Option<&Rrm>,
) -> Result<BiasReport> {
    match rrm {
        Some(m) => suite_plain(&apply_rrm(source, m)?, attribute, queries, k),
        None => suite_plain(source, attribute, queries, k),
    }
}

fn suite_plain<S: VectorSource + ?Sized>(source: &S, attribute: &str, queries: &[BiasQuery], k: usize) -> Result<BiasReport> {
    if queries.is_empty() {
        return Err(Error::InvalidConfig("bias suite needs at least one query".into()));
    }
    let mut per_query = BTreeMap::new();
    let mut values = Vec::with_capacity(queries.len());
    for q in queries {
        let b = bias_at_k(source, attribute, &q.embedding, k)?;
        values.push(b);
        per_query.entry(q.word.clone()).or_insert_with(BTreeMap::new).insert(attribute.to_string(), b);
    }
    Ok(BiasReport { k, per_query, mean_bias: mean(values.into_iter()), source: source.source_tag() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TasReport {
    pub tas: f64,
    /// Mean over target prototypes, per row.
    pub per_sample: Vec<f64>,
}

/// Mean similarity of every row to every target query.
pub fn tas<S: VectorSource + ?Sized>(source: &S, targets: &[Prototype], rrm: Option<&Rrm>) -> Result<TasReport> {
    match rrm {
        Some(m) => tas_plain(&apply_rrm(source, m)?, targets),
        None => tas_plain(source, targets),
    }
}

fn tas_plain<S: VectorSource + ?Sized>(source: &S, targets: &[Prototype]) -> Result<TasReport> {
    if targets.is_empty() {
        return Err(Error::MissingPrototype("target".into()));
    }
    let per_sample = (0..source.len())
        .into_par_iter()
        .map(|i| {
            let v = source.vector(i);
            let mut s = 0.0;
            for t in targets {
                s += cosine(&v, &t.query_embedding)?;
            }
            Ok(s / targets.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TasReport { tas: mean(per_sample.iter().copied()), per_sample })
}

/// BCL evaluated as a metric, over pairs drawn with `pairs_seed`.
pub fn bfd<S: VectorSource + ?Sized>(
    source: &S,
    bias_attr: &str,
    proto_pos: &Prototype,
    proto_neg: &Prototype,
    pairs_seed: u64,
    rrm: Option<&Rrm>,
) -> Result<f64> {
    let identity;
    let m = match rrm {
        Some(m) => m,
        None => {
            identity = Rrm::identity(bias_attr, source.dim());
            &identity
        }
    };
    let pairs = pair_rows(&source.labels(bias_attr)?, bias_attr, pairs_seed)?;
    bcl(source, &pairs, proto_pos, proto_neg, m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub tas: f64,
    pub bfd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TasBfdCurve {
    pub points: Vec<SweepPoint>,
}

impl TasBfdCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,tas,bfd\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.epsilon, p.tas, p.bfd);
        }
        out
    }

    pub fn spearman(&self) -> f64 {
        let tas: Vec<f64> = self.points.iter().map(|p| p.tas).collect();
        let bfd: Vec<f64> = self.points.iter().map(|p| p.bfd).collect();
        spearman(&tas, &bfd)
    }
}

/// Unit direction of steepest ascent of the row's mean target similarity.
fn tas_direction(v: &[f64], target_units: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut g = vec![0.0; v.len()];
    let w = 1.0 / target_units.len() as f64;
    for t in target_units {
        accumulate_cosine_dv(v, t, w, &mut g)?;
    }
    let n = norm(&g);
    if n > 0.0 {
        g.iter_mut().for_each(|x| *x /= n);
    }
    Ok(g)
}

/// Moves every row by `ε` along its TAS ascent direction and records `(ε, TAS, BFD)`.
pub fn tas_bfd_sweep<S: VectorSource + ?Sized>(
    source: &S,
    bias_attr: &str,
    targets: &[Prototype],
    proto_pos: &Prototype,
    proto_neg: &Prototype,
    epsilons: &[f64],
    pairs_seed: u64,
) -> Result<TasBfdCurve> {
    if epsilons.iter().any(|e| !e.is_finite()) || !epsilons.contains(&0.0) {
        return Err(Error::InvalidConfig("epsilons must be finite and include 0".into()));
    }
    if epsilons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("epsilons must be strictly increasing".into()));
    }
    if targets.is_empty() {
        return Err(Error::MissingPrototype("target".into()));
    }
    let units: Vec<Vec<f64>> = targets
        .iter()
        .map(|t| {
            let n = norm(&t.query_embedding);
            if n == 0.0 {
                return Err(Error::ZeroVector);
            }
            Ok(t.query_embedding.iter().map(|x| x / n).collect())
        })
        .collect::<Result<_>>()?;
    let rows = source.vectors();
    let dirs = rows.par_iter().map(|v| tas_direction(v, &units)).collect::<Result<Vec<_>>>()?;
    let mut attrs = BTreeMap::new();
    attrs.insert(bias_attr.to_string(), source.labels(bias_attr)?);

    let mut points = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let moved: Vec<Vec<f64>> = if eps == 0.0 {
            rows.clone()
        } else {
            rows.iter().zip(&dirs).map(|(v, g)| v.iter().zip(g).map(|(x, d)| x + eps * d).collect()).collect()
        };
        let perturbed = DenseSource::new(moved, attrs.clone())?.with_tag(source.source_tag());
        points.push(SweepPoint {
            epsilon: eps,
            tas: tas(&perturbed, targets, None)?.tas,
            bfd: bfd(&perturbed, bias_attr, proto_pos, proto_neg, pairs_seed, None)?,
        });
    }
    Ok(TasBfdCurve { points })
}

/// Ranks with ties sharing their average rank (1-based).
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rank correlation; NaN when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<Label>,
    pub eigenvalues: [f64; 2],
    pub centroid_pos: Option<[f64; 2]>,
    pub centroid_neg: Option<[f64; 2]>,
    /// Set when the covariance has rank below 2; the second coordinate is then zero.
    pub degenerate: bool,
}

impl PcaProjection {
    /// Euclidean distance between the two group centroids.
    pub fn centroid_distance(&self) -> Option<f64> {
        let (p, n) = (self.centroid_pos?, self.centroid_neg?);
        Some(((p[0] - n[0]).powi(2) + (p[1] - n[1]).powi(2)).sqrt())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,x,y,label\n");
        for (i, (p, l)) in self.points.iter().zip(&self.labels).enumerate() {
            let l = l.value().map(|v| (v as i64).to_string()).unwrap_or_default();
            let _ = writeln!(out, "{i},{},{},{l}", p[0], p[1]);
        }
        out
    }
}

/// Projection on the top two principal components.
///
/// Components are ordered by descending eigenvalue; each is signed so that its
/// largest-magnitude coordinate is positive.
pub fn pca_2d<S: VectorSource + ?Sized>(source: &S, attribute: &str) -> Result<PcaProjection> {
    let (n, d) = (source.len(), source.dim());
    if n < 3 {
        return Err(Error::InvalidConfig(format!("PCA needs at least 3 rows, got {n}")));
    }
    let labels = source.labels(attribute)?;
    let rows = source.vectors();
    let mut mu = vec![0.0; d];
    for r in &rows {
        mu.iter_mut().zip(r).for_each(|(m, x)| *m += x);
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mu[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let top = eig.eigenvalues[order[0]];
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if top <= 1e-12 * scale.max(f64::MIN_POSITIVE) || top <= 0.0 {
        return Err(Error::DegenerateCovariance { rank: 0 });
    }
    let second = if d > 1 { eig.eigenvalues[order[1]] } else { 0.0 };
    let degenerate = d < 2 || second <= 1e-10 * top;

    let component = |k: usize| -> Vec<f64> {
        let col: Vec<f64> = eig.eigenvectors.column(order[k]).iter().copied().collect();
        let lead = col.iter().enumerate().fold(0, |b, (i, x)| if x.abs() > col[b].abs() { i } else { b });
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        col.into_iter().map(|x| sign * x).collect()
    };
    let pc1 = component(0);
    let pc2 = if degenerate { vec![0.0; d] } else { component(1) };
    let points: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let row = centered.row(i);
            let x: f64 = row.iter().zip(&pc1).map(|(a, b)| a * b).sum();
            let y: f64 = row.iter().zip(&pc2).map(|(a, b)| a * b).sum();
            [x, y]
        })
        .collect();
    let centroid = |want: Label| -> Option<[f64; 2]> {
        let sel: Vec<&[f64; 2]> = points.iter().zip(&labels).filter(|(_, l)| **l == want).map(|(p, _)| p).collect();
        if sel.is_empty() {
            return None;
        }
        let k = sel.len() as f64;
        Some([sel.iter().map(|p| p[0]).sum::<f64>() / k, sel.iter().map(|p| p[1]).sum::<f64>() / k])
    };
    Ok(PcaProjection {
        centroid_pos: centroid(Label::Positive),
        centroid_neg: centroid(Label::Negative),
        points,
        labels,
        eigenvalues: [top, if degenerate { 0.0 } else { second }],
        degenerate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    /// Mean probability of label `a` among attribute-positive rows.
    pub mean_pos: f64,
    pub mean_neg: f64,
    /// `|mean_pos − mean_neg| × 100`.
    pub divergence: f64,
    pub temperature: f64,
}

pub const DEFAULT_TEMPERATURE: f64 = 100.0;

/// Probability of `a` under `softmax(τ·S_a, τ·S_b)`.
pub fn zero_shot_probability(s_a: f64, s_b: f64, temperature: f64) -> f64 {
    1.0 / (1.0 + (temperature * (s_b - s_a)).exp())
}

pub fn zero_shot_divergence<S: VectorSource + ?Sized>(
    source: &S,
    attribute: &str,
    label_queries: (&[f64], &[f64]),
    temperature: f64,
) -> Result<ZeroShotReport> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::InvalidConfig("temperature must be positive".into()));
    }
    let labels = source.labels(attribute)?;
    let probs = (0..source.len())
        .into_par_iter()
        .map(|i| {
            if !labels[i].is_labeled() {
                return Ok(None);
            }
            let v = source.vector(i);
            let p = zero_shot_probability(cosine(&v, label_queries.0)?, cosine(&v, label_queries.1)?, temperature);
            Ok(Some((labels[i], p)))
        })
        .collect::<Result<Vec<_>>>()?;
    let group = |want: Label| -> Result<f64> {
        let ps: Vec<f64> = probs.iter().flatten().filter(|(l, _)| *l == want).map(|(_, p)| *p).collect();
        if ps.is_empty() {
            let polarity = if want == Label::Positive { "positive" } else { "negative" };
            return Err(Error::EmptyGroup { attribute: attribute.to_string(), polarity });
        }
        Ok(mean(ps.into_iter()))
    };
    let (mean_pos, mean_neg) = (group(Label::Positive)?, group(Label::Negative)?);
    Ok(ZeroShotReport { mean_pos, mean_neg, divergence: (mean_pos - mean_neg).abs() * 100.0, temperature })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn src(rows: Vec<Vec<f64>>, labels: Vec<Label>) -> DenseSource {
        let mut attrs = BTreeMap::new();
        attrs.insert("gender".to_string(), labels);
        DenseSource::new(rows, attrs).unwrap()
    }

    #[test]
    fn bias_hand_case() {
        // rows 0 and 1 score highest and are both positive
        let rows = vec![
            vec![1.0, 0.0],
            vec![0.9, 0.1],
            vec![0.2, 1.0],
            vec![0.1, 1.0],
            vec![0.0, 1.0],
            vec![0.3, 1.0],
        ];
        use Label::*;
        let s = src(rows, vec![Positive, Positive, Negative, Negative, Negative, Positive]);
        assert_abs_diff_eq!(bias_at_k(&s, "gender", &[1.0, 0.0], 2).unwrap(), 0.5);
        assert_eq!(bias_at_k(&s, "gender", &[1.0, 0.0], 6).unwrap(), 0.0);
        assert!(matches!(bias_at_k(&s, "gender", &[1.0, 0.0], 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn bias_ignores_unlabeled() {
        use Label::*;
        let s = src(vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0]], vec![Unlabeled, Positive, Negative]);
        assert_abs_diff_eq!(bias_at_k(&s, "gender", &[1.0, 0.0], 1).unwrap(), 0.5);
        let none = src(vec![vec![1.0, 0.0]], vec![Unlabeled]);
        assert!(matches!(bias_at_k(&none, "gender", &[1.0, 0.0], 1), Err(Error::NoLabeledRows(_))));
    }

    #[test]
    fn zero_shot_hand_case() {
        let p = zero_shot_probability(0.6, 0.4, 1.0);
        assert_abs_diff_eq!(p, 0.6f64.exp() / (0.6f64.exp() + 0.4f64.exp()), epsilon = 1e-15);
        assert_abs_diff_eq!(p, 0.549_833_997_312_478, epsilon = 1e-12);
        assert_eq!(zero_shot_probability(0.3, 0.3, 100.0), 0.5);
    }

    #[test]
    fn identical_label_queries_give_zero_divergence() {
        use Label::*;
        let s = src(vec![vec![1.0, 0.2], vec![0.1, 1.0]], vec![Positive, Negative]);
        let r = zero_shot_divergence(&s, "gender", (&[1.0, 1.0], &[1.0, 1.0]), 100.0).unwrap();
        assert_eq!((r.mean_pos, r.mean_neg, r.divergence), (0.5, 0.5, 0.0));
    }

    #[test]
    fn spearman_basics() {
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]), 1.0);
        assert_eq!(average_ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn pca_line_and_clusters() {
        use Label::*;
        let line: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 + 1.0, 2.0 * i as f64 + 1.0, 0.5]).collect();
        let p = pca_2d(&src(line, vec![Positive; 5]), "gender").unwrap();
        assert!(p.degenerate);
        assert!(p.points.iter().all(|q| q[1] == 0.0));

        let clusters = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0], vec![-1.0, 0.0]];
        let mut noisy = clusters.clone();
        noisy[0][1] = 0.1;
        noisy[1][1] = -0.1;
        let p = pca_2d(&src(noisy, vec![Positive, Positive, Negative, Negative]), "gender").unwrap();
        assert_abs_diff_eq!(p.centroid_pos.unwrap()[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.centroid_neg.unwrap()[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p.centroid_distance().unwrap(), 2.0, epsilon = 1e-12);
    }
}
