//! Embedding-level comparison methods: dimension clipping ranked by mutual
//! information with the bias label, and a concept direction extracted from
//! differences between the two groups.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apl::{compute_centers, EncoderId, Prototype};
use crate::embedstore::{Label, SourceTag, VectorSource};
use crate::error::{Error, Result};
use crate::simcore::{cosine, norm};

/// Dimensions removed before cosine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimMask {
    pub dim: usize,
    pub dropped: BTreeSet<usize>,
    /// Relevance of every dimension to the bias attribute.
    pub scores: Vec<f64>,
}

impl DimMask {
    pub fn empty(dim: usize) -> Self {
        Self { dim, dropped: BTreeSet::new(), scores: vec![0.0; dim] }
    }

    /// Drops the `m` highest-scoring dimensions; ties go to the lower index.
    pub fn top(scores: Vec<f64>, m: usize) -> Result<Self> {
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("relevance scores must be finite".into()));
        }
        let dim = scores.len();
        if m >= dim {
            return Err(Error::AllDimsDropped);
        }
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| (scores[b] + 0.0).total_cmp(&(scores[a] + 0.0)).then(a.cmp(&b)));
        Ok(Self { dim, dropped: order[..m].iter().copied().collect(), scores })
    }

    pub fn validate(&self) -> Result<()> {
        if self.dropped.iter().any(|&d| d >= self.dim) || self.scores.len() != self.dim {
            return Err(Error::InvalidConfig("mask does not fit its dimension".into()));
        }
        if self.dropped.len() >= self.dim {
            return Err(Error::AllDimsDropped);
        }
        Ok(())
    }

    pub fn kept(&self) -> Vec<usize> {
        (0..self.dim).filter(|d| !self.dropped.contains(d)).collect()
    }
}

fn entropy2(p: f64) -> f64 {
    let h = |x: f64| if x > 0.0 { -x * x.ln() } else { 0.0 };
    h(p) + h(1.0 - p)
}

/// Mutual information (nats) of two binary variables from a 2×2 table of counts.
pub fn mutual_information(table: [[usize; 2]; 2]) -> f64 {
    let n = (table[0][0] + table[0][1] + table[1][0] + table[1][1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let row = [(table[0][0] + table[0][1]) as f64, (table[1][0] + table[1][1]) as f64];
    let col = [(table[0][0] + table[1][0]) as f64, (table[0][1] + table[1][1]) as f64];
    let mut mi = 0.0;
    for (i, r) in table.iter().enumerate() {
        for (j, &c) in r.iter().enumerate() {
            if c > 0 {
                let p = c as f64 / n;
                mi += p * (p * n * n / (row[i] * col[j])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Binary entropy (nats) of the label distribution.
pub fn label_entropy(positives: usize, total: usize) -> f64 {
    entropy2(positives as f64 / total as f64)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Per-dimension MI between `coordinate > median` and the bias label.
pub fn clip_clip_rank<S: VectorSource + ?Sized>(source: &S, bias_attr: &str) -> Result<Vec<f64>> {
    let labels = source.labels(bias_attr)?;
    let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_labeled()).collect();
    let pos = rows.iter().filter(|&&i| labels[i] == Label::Positive).count();
    if pos == 0 {
        return Err(Error::EmptyGroup { attribute: bias_attr.to_string(), polarity: "positive" });
    }
    if pos == rows.len() {
        return Err(Error::EmptyGroup { attribute: bias_attr.to_string(), polarity: "negative" });
    }
    let vectors: Vec<Vec<f64>> = rows.iter().map(|&i| source.vector(i)).collect();
    Ok((0..source.dim())
        .into_par_iter()
        .map(|d| {
            let mut col: Vec<f64> = vectors.iter().map(|v| v[d]).collect();
            let mut sorted = col.clone();
            sorted.sort_by(f64::total_cmp);
            let m = median(&sorted);
            let mut table = [[0usize; 2]; 2];
            for (x, &r) in col.drain(..).zip(&rows) {
                let high = usize::from(x > m);
                let y = usize::from(labels[r] == Label::Positive);
                table[high][y] += 1;
            }
            mutual_information(table)
        })
        .collect())
}

/// The kept coordinates of `v`.
pub fn clip_clip_apply(v: &[f64], mask: &DimMask) -> Result<Vec<f64>> {
    mask.validate()?;
    if v.len() != mask.dim {
        return Err(Error::DimMismatch { expected: mask.dim, got: v.len() });
    }
    Ok(v.iter().enumerate().filter(|(d, _)| !mask.dropped.contains(d)).map(|(_, &x)| x).collect())
}

/// A source with the masked dimensions removed from every row.
pub struct ClippedView<'a, S: ?Sized> {
    inner: &'a S,
    kept: Vec<usize>,
}

pub fn clip_clip_view<'a, S: VectorSource + ?Sized>(source: &'a S, mask: &DimMask) -> Result<ClippedView<'a, S>> {
    mask.validate()?;
    if source.dim() != mask.dim {
        return Err(Error::DimMismatch { expected: mask.dim, got: source.dim() });
    }
    Ok(ClippedView { inner: source, kept: mask.kept() })
}

impl<S: VectorSource + ?Sized> VectorSource for ClippedView<'_, S> {
    fn dim(&self) -> usize {
        self.kept.len()
    }

    fn len(&self) -> usize {
        self.inner.len()
    }

    fn vector(&self, i: usize) -> Vec<f64> {
        let v = self.inner.vector(i);
        self.kept.iter().map(|&d| v[d]).collect()
    }

    fn labels(&self, attribute: &str) -> Result<Vec<Label>> {
        self.inner.labels(attribute)
    }

    fn source_tag(&self) -> SourceTag {
        SourceTag::Baseline("clip-clip".into())
    }
}

/// Top eigenvector of the second moment of all cross-group differences.
///
/// Over every pair `(i ∈ A⁺, j ∈ A⁻)`, `E[(v_i − v_j)(v_i − v_j)ᵀ]` equals
/// `S⁺ + S⁻ − μ⁺μ⁻ᵀ − μ⁻μ⁺ᵀ` with `S` the group second moments and `μ` the
/// group means, so the all-pairs matrix is built in `O(n·d²)`. The result is
/// unit length and signed so that positives are, on average, closer to it.
/// Second moment, mean and members of one label group.
type Group = (DMatrix<f64>, Vec<f64>, Vec<Vec<f64>>);

pub fn bsce_concept<S: VectorSource + ?Sized>(source: &S, attribute: &str) -> Result<Vec<f64>> {
    let labels = source.labels(attribute)?;
    let d = source.dim();
    let group = |want: Label| -> Result<Group> {
        let vs: Vec<Vec<f64>> =
            (0..labels.len()).filter(|&i| labels[i] == want).map(|i| source.vector(i)).collect();
        if vs.is_empty() {
            let polarity = if want == Label::Positive { "positive" } else { "negative" };
            return Err(Error::EmptyGroup { attribute: attribute.to_string(), polarity });
        }
        let n = vs.len() as f64;
        let data = DMatrix::from_fn(vs.len(), d, |i, j| vs[i][j]);
        let second = data.transpose() * &data / n;
        let mut mu = vec![0.0; d];
        for v in &vs {
            mu.iter_mut().zip(v).for_each(|(m, x)| *m += x / n);
        }
        Ok((second, mu, vs))
    };
    let (sp, mp, vp) = group(Label::Positive)?;
    let (sn, mn, vn) = group(Label::Negative)?;
    let mp_m = DMatrix::from_column_slice(d, 1, &mp);
    let mn_m = DMatrix::from_column_slice(d, 1, &mn);
    let cross = &mp_m * mn_m.transpose();
    let moment = sp + sn - &cross - cross.transpose();
    let eig = SymmetricEigen::new(moment);
    let top = (0..d).fold(0, |b, i| if eig.eigenvalues[i] > eig.eigenvalues[b] { i } else { b });
    let mut concept: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    let n = norm(&concept);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateCovariance { rank: 0 });
    }
    concept.iter_mut().for_each(|x| *x /= n);

    let mean_cos = |vs: &[Vec<f64>]| -> Result<f64> {
        let mut s = 0.0;
        for v in vs {
            s += cosine(v, &concept)?;
        }
        Ok(s / vs.len() as f64)
    };
    if mean_cos(&vp)? < mean_cos(&vn)? {
        concept.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(concept)
}

/// A prototype-compatible wrapper around [`bsce_concept`], with centers measured on `source`.
pub fn bsce_prototype<S: VectorSource + ?Sized>(source: &S, attribute: &str, polarity: i8) -> Result<Prototype> {
    let mut concept = bsce_concept(source, attribute)?;
    if polarity < 0 {
        concept.iter_mut().for_each(|x| *x = -*x);
    }
    let centers = compute_centers(source, attribute, polarity, &concept)?;
    Ok(Prototype {
        attribute: attribute.to_string(),
        encoder_id: EncoderId::Bsce,
        n_prefix: 0,
        prefix: Vec::new(),
        suffix_tokens: Vec::new(),
        query_embedding: concept,
        centers,
        polarity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedstore::DenseSource;
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;

    fn src(rows: Vec<Vec<f64>>, labels: Vec<Label>) -> DenseSource {
        let mut attrs = BTreeMap::new();
        attrs.insert("gender".to_string(), labels);
        DenseSource::new(rows, attrs).unwrap()
    }

    #[test]
    fn label_dimension_has_maximal_mi() {
        use Label::*;
        let labels = vec![Positive, Negative, Positive, Negative, Positive, Negative];
        let rows: Vec<Vec<f64>> =
            labels.iter().enumerate().map(|(i, l)| vec![l.value().unwrap(), (i % 3) as f64 + 0.5]).collect();
        let mi = clip_clip_rank(&src(rows, labels), "gender").unwrap();
        assert_abs_diff_eq!(mi[0], label_entropy(3, 6), epsilon = 1e-12);
        assert_abs_diff_eq!(mi[0], 2f64.ln(), epsilon = 1e-12);
        assert!(mi[1] < mi[0]);
    }

    #[test]
    fn mi_of_independent_table_is_zero() {
        assert_eq!(mutual_information([[5, 5], [5, 5]]), 0.0);
    }

    #[test]
    fn mask_ordering_and_limits() {
        let m = DimMask::top(vec![0.1, 0.9, 0.9, 0.3], 2).unwrap();
        assert_eq!(m.dropped.iter().copied().collect::<Vec<_>>(), vec![1, 2]);
        assert!(matches!(DimMask::top(vec![0.1, 0.2], 2), Err(Error::AllDimsDropped)));
        assert_eq!(clip_clip_apply(&[1.0, 2.0, 3.0, 4.0], &m).unwrap(), vec![1.0, 4.0]);
        let e = DimMask::empty(3);
        assert_eq!(clip_clip_apply(&[1.0, 2.0, 3.0], &e).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn point_masses_give_axis_concept() {
        use Label::*;
        let rows = vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]];
        let c = bsce_concept(&src(rows, vec![Positive, Positive, Negative, Negative]), "gender").unwrap();
        assert_abs_diff_eq!(c[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1].abs() + c[2].abs(), 0.0, epsilon = 1e-12);
    }
}
