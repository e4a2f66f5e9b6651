//! The re-representation matrix: a `d×d` map applied to image vectors before
//! cosine similarity, trained so that the two bias-polarity queries see both
//! groups alike while target queries keep high similarity.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apl::Prototype;
use crate::diffcore::{add_outer, matvec_right};
use crate::embedstore::femb::{decode_frrm, encode_frrm};
use crate::embedstore::{DenseSource, Label, SourceTag, VectorSource};
use crate::error::{Error, Result};
use crate::metrics::{bias_suite, BiasQuery};
use crate::simcore::{cosine, dot, norm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rrm {
    pub bias_attribute: String,
    pub dim: usize,
    /// Row-major `dim × dim`; image rows are multiplied on the left (`v·M`).
    pub matrix: Vec<f64>,
    pub trained_epochs: usize,
    pub lambda: f64,
}

impl Rrm {
    pub fn identity(bias_attribute: &str, dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Self { bias_attribute: bias_attribute.to_string(), dim, matrix, trained_epochs: 0, lambda: 0.0 }
    }

    pub fn from_matrix(bias_attribute: &str, dim: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::DimMismatch { expected: dim * dim, got: matrix.len() });
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("matrix has non-finite entries".into()));
        }
        Ok(Self { bias_attribute: bias_attribute.to_string(), dim, matrix, trained_epochs: 0, lambda: 0.0 })
    }

    pub fn is_identity(&self) -> bool {
        let d = self.dim;
        self.matrix.iter().enumerate().all(|(k, &x)| x == if k / d == k % d { 1.0 } else { 0.0 })
    }

    /// `v·M`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        if self.is_identity() {
            return v.to_vec();
        }
        matvec_right(v, &self.matrix)
    }

    pub fn to_frrm(&self) -> Vec<u8> {
        let values: Vec<f32> = self.matrix.iter().map(|&x| x as f32).collect();
        encode_frrm(self.dim as u32, &values)
    }

    pub fn from_frrm(bytes: &[u8], bias_attribute: &str) -> Result<Self> {
        let (dim, values) = decode_frrm(bytes)?;
        Self::from_matrix(bias_attribute, dim as usize, values.into_iter().map(f64::from).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_frrm())?;
        Ok(())
    }

    pub fn load(path: &Path, bias_attribute: &str) -> Result<Self> {
        Self::from_frrm(&std::fs::read(path)?, bias_attribute)
    }
}

/// `cos(v·M, l)`.
pub fn rrm_similarity(v: &[f64], rrm: &Rrm, l: &[f64]) -> Result<f64> {
    if v.len() != rrm.dim {
        return Err(Error::DimMismatch { expected: rrm.dim, got: v.len() });
    }
    cosine(&rrm.apply(v), l)
}

/// A source whose rows are `v·M`, computed on access.
pub struct RerepView<'a, S: ?Sized> {
    inner: &'a S,
    rrm: &'a Rrm,
    identity: bool,
}

pub fn apply_rrm<'a, S: VectorSource + ?Sized>(source: &'a S, rrm: &'a Rrm) -> Result<RerepView<'a, S>> {
    if source.dim() != rrm.dim {
        return Err(Error::DimMismatch { expected: source.dim(), got: rrm.dim });
    }
    Ok(RerepView { inner: source, rrm, identity: rrm.is_identity() })
}

impl<S: VectorSource + ?Sized> VectorSource for RerepView<'_, S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn len(&self) -> usize {
        self.inner.len()
    }

    fn vector(&self, i: usize) -> Vec<f64> {
        let v = self.inner.vector(i);
        if self.identity {
            v
        } else {
            matvec_right(&v, &self.rrm.matrix)
        }
    }

    fn labels(&self, attribute: &str) -> Result<Vec<Label>> {
        self.inner.labels(attribute)
    }

    fn source_tag(&self) -> SourceTag {
        if self.identity {
            self.inner.source_tag()
        } else {
            SourceTag::Rrm(self.rrm.bias_attribute.clone())
        }
    }
}

/// Disjoint `(positive, negative)` pairs.
///
/// All labeled rows are shuffled together with `seed`; positives and
/// negatives are then paired by position and leftovers are dropped. Shuffling
/// the union (rather than each group) makes the pairing symmetric under a
/// label flip.
pub fn pair_rows(labels: &[Label], attribute: &str, seed: u64) -> Result<Vec<(usize, usize)>> {
    let mut order: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_labeled()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pos: Vec<usize> = order.iter().copied().filter(|&i| labels[i] == Label::Positive).collect();
    let neg: Vec<usize> = order.iter().copied().filter(|&i| labels[i] == Label::Negative).collect();
    if pos.is_empty() {
        return Err(Error::EmptyGroup { attribute: attribute.to_string(), polarity: "positive" });
    }
    if neg.is_empty() {
        return Err(Error::EmptyGroup { attribute: attribute.to_string(), polarity: "negative" });
    }
    Ok(pos.into_iter().zip(neg).collect())
}

/// `mean_p ½[(a⁺ − a⁻)² + (b⁺ − b⁻)²]` over `(a⁺, a⁻, b⁺, b⁻)` similarity quadruples.
pub fn bcl_from_similarities(pairs: &[[f64; 4]]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    let total: f64 = pairs.iter().map(|p| 0.5 * ((p[0] - p[1]).powi(2) + (p[2] - p[3]).powi(2))).sum();
    Ok(total / pairs.len() as f64)
}

pub fn bcl<S: VectorSource + ?Sized>(
    source: &S,
    pairs: &[(usize, usize)],
    proto_pos: &Prototype,
    proto_neg: &Prototype,
    rrm: &Rrm,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyPairs);
    }
    let view = apply_rrm(source, rrm)?;
    let (qp, qn) = (&proto_pos.query_embedding, &proto_neg.query_embedding);
    let quads = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (vi, vj) = (view.vector(i), view.vector(j));
            Ok([cosine(&vi, qp)?, cosine(&vi, qn)?, cosine(&vj, qp)?, cosine(&vj, qn)?])
        })
        .collect::<Result<Vec<_>>>()?;
    bcl_from_similarities(&quads)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TflScope {
    /// Every row, whatever its target label.
    #[default]
    All,
    /// Only rows labeled positive for the target.
    Positives,
}

fn in_scope(scope: TflScope, label: Label) -> bool {
    match scope {
        TflScope::All => true,
        TflScope::Positives => label == Label::Positive,
    }
}

/// `mean_i (S_i − 1)²` over the rows in scope; 0 when none are.
pub fn tfl<S: VectorSource + ?Sized>(source: &S, target: &Prototype, rrm: &Rrm, scope: TflScope) -> Result<f64> {
    let view = apply_rrm(source, rrm)?;
    let labels = match scope {
        TflScope::All => vec![Label::Unlabeled; source.len()],
        TflScope::Positives => {
            source.labels(&target.attribute)?.into_iter().map(|l| target.oriented(l)).collect()
        }
    };
    let terms = (0..source.len())
        .into_par_iter()
        .filter(|&i| in_scope(scope, labels[i]))
        .map(|i| Ok((cosine(&view.vector(i), &target.query_embedding)? - 1.0).powi(2)))
        .collect::<Result<Vec<f64>>>()?;
    if terms.is_empty() {
        return Ok(0.0);
    }
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Both bias-polarity prototypes plus the target prototypes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnPrototypes {
    pub bias_pos: Prototype,
    pub bias_neg: Prototype,
    pub targets: Vec<Prototype>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RnParts {
    pub bcl: f64,
    /// Sum of the per-target TFL terms.
    pub tfl: f64,
    pub loss: f64,
}

/// `λ·BCL + (1−λ)·Σ TFL` over one batch of pairs, as a function of the matrix.
///
/// TFL runs over the rows that appear in the batch's pairs.
pub struct RnObjective {
    dim: usize,
    lambda: f64,
    q_pos: Vec<f64>,
    q_neg: Vec<f64>,
    targets: Vec<Vec<f64>>,
    /// Rows `2p` and `2p+1` are the positive and negative member of pair `p`.
    rows: Vec<Vec<f64>>,
    /// Per target, the rows counted by its TFL term.
    scope: Vec<Vec<bool>>,
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

struct RowEval {
    u_norm: f64,
    pos: f64,
    neg: f64,
    targets: Vec<f64>,
}

impl RnObjective {
    pub fn new<S: VectorSource + ?Sized>(
        source: &S,
        pairs: &[(usize, usize)],
        protos: &RnPrototypes,
        lambda: f64,
        scope: TflScope,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::EmptyPairs);
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidConfig(format!("lambda {lambda} outside [0, 1]")));
        }
        if lambda < 1.0 && protos.targets.is_empty() {
            return Err(Error::MissingPrototype("target".into()));
        }
        let dim = source.dim();
        let check = |p: &Prototype| {
            if p.query_embedding.len() != dim {
                return Err(Error::DimMismatch { expected: dim, got: p.query_embedding.len() });
            }
            unit(&p.query_embedding)
        };
        let q_pos = check(&protos.bias_pos)?;
        let q_neg = check(&protos.bias_neg)?;
        let targets = protos.targets.iter().map(check).collect::<Result<Vec<_>>>()?;
        let rows: Vec<Vec<f64>> = pairs.iter().flat_map(|&(i, j)| [source.vector(i), source.vector(j)]).collect();
        let mut scopes = Vec::with_capacity(protos.targets.len());
        for t in &protos.targets {
            let mask = match scope {
                TflScope::All => vec![true; rows.len()],
                TflScope::Positives => {
                    let labels = source.labels(&t.attribute)?;
                    pairs
                        .iter()
                        .flat_map(|&(i, j)| [labels[i], labels[j]])
                        .map(|l| in_scope(scope, t.oriented(l)))
                        .collect()
                }
            };
            scopes.push(mask);
        }
        Ok(Self { dim, lambda, q_pos, q_neg, targets, rows, scope: scopes })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn eval_row(&self, u: &[f64]) -> Result<RowEval> {
        let u_norm = norm(u);
        if u_norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(RowEval {
            u_norm,
            pos: dot(u, &self.q_pos) / u_norm,
            neg: dot(u, &self.q_neg) / u_norm,
            targets: self.targets.iter().map(|t| dot(u, t) / u_norm).collect(),
        })
    }

    fn evaluate(&self, m: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<RowEval>, RnParts)> {
        if m.len() != self.dim * self.dim {
            return Err(Error::DimMismatch { expected: self.dim * self.dim, got: m.len() });
        }
        let us: Vec<Vec<f64>> = self.rows.par_iter().map(|v| matvec_right(v, m)).collect();
        let evals = us.par_iter().map(|u| self.eval_row(u)).collect::<Result<Vec<_>>>()?;
        let quads: Vec<[f64; 4]> =
            evals.chunks_exact(2).map(|p| [p[0].pos, p[0].neg, p[1].pos, p[1].neg]).collect();
        let bcl = bcl_from_similarities(&quads)?;
        let mut tfl = 0.0;
        for (t, mask) in self.scope.iter().enumerate() {
            let (mut s, mut n) = (0.0, 0usize);
            for (e, &inside) in evals.iter().zip(mask) {
                if inside {
                    s += (e.targets[t] - 1.0).powi(2);
                    n += 1;
                }
            }
            if n > 0 {
                tfl += s / n as f64;
            }
        }
        let loss = self.lambda * bcl + (1.0 - self.lambda) * tfl;
        Ok((us, evals, RnParts { bcl, tfl, loss }))
    }

    pub fn loss(&self, m: &[f64]) -> Result<RnParts> {
        Ok(self.evaluate(m)?.2)
    }

    /// Loss parts and `d loss / dM` (row-major).
    pub fn loss_and_grad(&self, m: &[f64]) -> Result<(RnParts, Vec<f64>)> {
        let (us, evals, parts) = self.evaluate(m)?;
        let n_pairs = (self.rows.len() / 2) as f64;
        let counts: Vec<f64> = self.scope.iter().map(|mask| mask.iter().filter(|&&x| x).count() as f64).collect();
        let lambda = self.lambda;
        let dus: Vec<Vec<f64>> = us
            .par_iter()
            .zip(evals.par_iter())
            .enumerate()
            .map(|(r, (u, e))| {
                // dS_q/du = q̂/‖u‖ − S_q·u/‖u‖²
                let mut weighted_q = vec![0.0; u.len()];
                let mut weighted_s = 0.0;
                let mut add = |up: f64, q: &[f64], s: f64| {
                    if up != 0.0 {
                        weighted_q.iter_mut().zip(q).for_each(|(w, qi)| *w += up * qi);
                        weighted_s += up * s;
                    }
                };
                let g = lambda * (e.pos - e.neg) / n_pairs;
                add(g, &self.q_pos, e.pos);
                add(-g, &self.q_neg, e.neg);
                for (t, q) in self.targets.iter().enumerate() {
                    if self.scope[t][r] {
                        add((1.0 - lambda) * 2.0 * (e.targets[t] - 1.0) / counts[t], q, e.targets[t]);
                    }
                }
                let a = 1.0 / e.u_norm;
                let b = weighted_s / (e.u_norm * e.u_norm);
                weighted_q.iter().zip(u).map(|(w, ui)| a * w - b * ui).collect()
            })
            .collect();
        let mut grad = vec![0.0; self.dim * self.dim];
        for (v, du) in self.rows.iter().zip(&dus) {
            add_outer(&mut grad, v, du, 1.0);
        }
        Ok((parts, grad))
    }
}

/// `λ·BCL + (1−λ)·Σ TFL` on the given pairs under `rrm`.
pub fn rn_loss<S: VectorSource + ?Sized>(
    source: &S,
    pairs: &[(usize, usize)],
    protos: &RnPrototypes,
    rrm: &Rrm,
    lambda: f64,
    scope: TflScope,
) -> Result<RnParts> {
    RnObjective::new(source, pairs, protos, lambda, scope)?.loss(&rrm.matrix)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EarlyStop {
    pub k: usize,
    pub patience: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self { k: 100, patience: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RnConfig {
    pub lambda: f64,
    pub lr: f64,
    pub max_epochs: usize,
    pub batch_pairs: usize,
    pub seed: u64,
    pub early_stop: EarlyStop,
    pub tfl_scope: TflScope,
}

impl Default for RnConfig {
    fn default() -> Self {
        Self {
            lambda: 0.8,
            lr: 0.5,
            max_epochs: 40,
            batch_pairs: 32,
            seed: 0,
            early_stop: EarlyStop::default(),
            tfl_scope: TflScope::All,
        }
    }
}

impl RnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if self.batch_pairs == 0 {
            return bad("batch_pairs must be positive");
        }
        if self.early_stop.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.early_stop.k == 0 {
            return bad("early-stop k must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RrmHistory {
    /// Mean batch loss of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Early-stop metric; entry 0 is the identity matrix, entry `e` follows epoch `e`.
    pub epoch_metric: Vec<f64>,
    pub best_epoch: usize,
}

pub struct TrainedRrm {
    pub rrm: Rrm,
    pub history: RrmHistory,
}

/// Trains from the identity and returns the snapshot with the lowest
/// early-stop metric (mean Bias@k of `bias_queries` on `test`).
pub fn train_rrm<S, T>(
    train: &S,
    test: &T,
    bias_attr: &str,
    protos: &RnPrototypes,
    bias_queries: &[BiasQuery],
    config: &RnConfig,
) -> Result<TrainedRrm>
where
    S: VectorSource + ?Sized,
    T: VectorSource + ?Sized,
{
    config.validate()?;
    let d = train.dim();
    if test.dim() != d {
        return Err(Error::DimMismatch { expected: d, got: test.dim() });
    }
    let labels = train.labels(bias_attr)?;
    pair_rows(&labels, bias_attr, 0)?;

    let metric = |m: &Rrm| -> Result<f64> {
        let view = apply_rrm(test, m)?;
        let dense = DenseSource::materialize(&view, &[bias_attr])?;
        Ok(bias_suite(&dense, bias_attr, bias_queries, config.early_stop.k, None)?.mean_bias)
    };

    let mut rrm = Rrm::identity(bias_attr, d);
    rrm.lambda = config.lambda;
    let mut history = RrmHistory { epoch_metric: vec![metric(&rrm)?], ..Default::default() };
    let mut best = (history.epoch_metric[0], rrm.matrix.clone(), 0usize);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        let pairs = pair_rows(&labels, bias_attr, rng.next_u64())?;
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in pairs.chunks(config.batch_pairs) {
            let objective = RnObjective::new(train, chunk, protos, config.lambda, config.tfl_scope)?;
            let (parts, grad) = objective.loss_and_grad(&rrm.matrix)?;
            if !parts.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            rrm.matrix.iter_mut().zip(&grad).for_each(|(m, g)| *m -= config.lr * g);
            total += parts.loss;
            batches += 1;
        }
        history.epoch_loss.push(total / batches as f64);
        let score = metric(&rrm)?;
        history.epoch_metric.push(score);
        if score < best.0 {
            best = (score, rrm.matrix.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stop.patience {
                break;
            }
        }
    }
    history.best_epoch = best.2;
    rrm.matrix = best.1;
    rrm.trained_epochs = best.2;
    Ok(TrainedRrm { rrm, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::apl::{Centers, EncoderId};
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;

    pub(crate) fn proto(attr: &str, q: Vec<f64>) -> Prototype {
        Prototype {
            attribute: attr.into(),
            encoder_id: EncoderId::Bsce,
            n_prefix: 0,
            prefix: vec![],
            suffix_tokens: vec![],
            query_embedding: q,
            centers: Centers { center_pos: 0.0, center_neg: 0.0, center_mid: 0.0 },
            polarity: 1,
        }
    }

    #[test]
    fn similarity_identity_and_scaled() {
        let v = [0.3, -1.2, 0.5];
        let l = [1.0, 0.4, -0.2];
        let id = Rrm::identity("g", 3);
        assert_eq!(rrm_similarity(&v, &id, &l).unwrap(), cosine(&v, &l).unwrap());
        let mut two = id.clone();
        two.matrix.iter_mut().for_each(|x| *x *= 2.0);
        assert_abs_diff_eq!(rrm_similarity(&v, &two, &l).unwrap(), cosine(&v, &l).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn bcl_hand_case() {
        assert_abs_diff_eq!(bcl_from_similarities(&[[0.9, 0.1, 0.1, 0.9]]).unwrap(), 0.64, epsilon = 1e-15);
        assert!(matches!(bcl_from_similarities(&[]), Err(Error::EmptyPairs)));
    }

    #[test]
    fn tfl_single_row() {
        let s = DenseSource::new(vec![vec![0.0, 1.0]], BTreeMap::new()).unwrap();
        let t = proto("hat", vec![1.0, 0.0]);
        assert_eq!(tfl(&s, &t, &Rrm::identity("g", 2), TflScope::All).unwrap(), 1.0);
    }

    #[test]
    fn pairing_is_symmetric_under_label_flip() {
        let labels: Vec<Label> = (0..15).map(|i| if i % 3 == 0 { Label::Positive } else if i % 3 == 1 { Label::Negative } else { Label::Unlabeled }).collect();
        let flipped: Vec<Label> = labels.iter().map(|l| l.flipped()).collect();
        let a = pair_rows(&labels, "g", 4).unwrap();
        let b = pair_rows(&flipped, "g", 4).unwrap();
        assert_eq!(a.len(), 5);
        assert_eq!(a, b.iter().map(|&(i, j)| (j, i)).collect::<Vec<_>>());
    }

    #[test]
    fn frrm_roundtrip() {
        let r = Rrm::from_matrix("g", 2, vec![1.0, 0.5, -0.25, 2.0]).unwrap();
        let bytes = r.to_frrm();
        let back = Rrm::from_frrm(&bytes, "g").unwrap();
        assert_eq!(back.matrix, r.matrix);
        assert_eq!(back.to_frrm(), bytes);
    }
}
