//! Attribute prototype learning.
//!
//! A prototype is a text query made of `n` learnable prefix token vectors
//! followed by the frozen tokens naming the attribute. The prefix is trained
//! with plain SGD so that `tanh(S_i − center)` matches each row's ±1 label,
//! where `S_i` is the cosine between row `i` and the compiled query and
//! `center` is the midpoint of the mean positive and mean negative similarity.

pub mod encoder;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{accumulate_cosine_dv, grad_prefix};
use crate::embedstore::{Label, VectorSource};
use crate::error::{Error, Result};
use crate::simcore::{cosine, norm};

pub use encoder::{
    build_encoder, tokenize, BypassEncoder, EncoderId, TextEncoder, ToyEncoder, Vocabulary,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Centers {
    pub center_pos: f64,
    pub center_neg: f64,
    pub center_mid: f64,
}

/// A learned attribute query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub attribute: String,
    pub encoder_id: EncoderId,
    pub n_prefix: usize,
    pub prefix: Vec<Vec<f64>>,
    pub suffix_tokens: Vec<String>,
    pub query_embedding: Vec<f64>,
    pub centers: Centers,
    /// `-1` when the prototype describes the attribute's negative pole
    /// (e.g. the "female" query of a gender attribute labeled +1 for male).
    #[serde(default = "positive_polarity")]
    pub polarity: i8,
}

fn positive_polarity() -> i8 {
    1
}

impl Prototype {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Effective label under this prototype's polarity.
    pub fn oriented(&self, label: Label) -> Label {
        if self.polarity < 0 {
            label.flipped()
        } else {
            label
        }
    }

    /// `sign(S − center_mid)`.
    pub fn classify(&self, v: &[f64]) -> Result<Label> {
        let s = cosine(v, &self.query_embedding)?;
        Ok(if s - self.centers.center_mid >= 0.0 { Label::Positive } else { Label::Negative })
    }

    /// Fraction of labeled rows whose (polarity-adjusted) label matches [`Prototype::classify`].
    pub fn accuracy<S: VectorSource + ?Sized>(&self, source: &S) -> Result<f64> {
        let labels = source.labels(&self.attribute)?;
        let (mut hit, mut total) = (0usize, 0usize);
        for (i, &l) in labels.iter().enumerate() {
            let l = self.oriented(l);
            if !l.is_labeled() {
                continue;
            }
            total += 1;
            if self.classify(&source.vector(i))? == l {
                hit += 1;
            }
        }
        if total == 0 {
            return Err(Error::NoLabeledRows(self.attribute.clone()));
        }
        Ok(hit as f64 / total as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterRefresh {
    Once,
    PerEpoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AplConfig {
    pub n_prefix: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Rows per SGD step; `None` is full batch.
    pub batch: Option<usize>,
    pub seed: u64,
    pub init_scale: f64,
    pub center_refresh: CenterRefresh,
}

impl Default for AplConfig {
    fn default() -> Self {
        Self {
            n_prefix: 6,
            lr: 0.05,
            epochs: 30,
            batch: None,
            seed: 0,
            init_scale: 0.02,
            center_refresh: CenterRefresh::PerEpoch,
        }
    }
}

impl AplConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_prefix == 0 {
            return bad("n_prefix must be at least 1");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch == Some(0) {
            return bad("batch must be positive");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be finite and non-negative");
        }
        Ok(())
    }
}

/// Encodes `prefix ++ suffix` under the prototype's encoder.
pub fn compile_query(prototype: &Prototype, encoder: &dyn TextEncoder) -> Result<Vec<f64>> {
    if prototype.encoder_id == EncoderId::Bsce {
        return Ok(prototype.query_embedding.clone());
    }
    if encoder.id() != prototype.encoder_id {
        return Err(Error::InvalidConfig(format!(
            "prototype built for encoder {:?}, got {:?}",
            prototype.encoder_id.name(),
            encoder.id().name()
        )));
    }
    let suffix = suffix_vectors(encoder, &prototype.suffix_tokens)?;
    compile_parts(encoder, &prototype.prefix, &suffix)
}

fn suffix_vectors<'e>(encoder: &'e dyn TextEncoder, words: &[String]) -> Result<Vec<&'e [f64]>> {
    words.iter().map(|w| encoder.token(w)).collect()
}

fn compile_parts(encoder: &dyn TextEncoder, prefix: &[Vec<f64>], suffix: &[&[f64]]) -> Result<Vec<f64>> {
    let tokens: Vec<&[f64]> = prefix.iter().map(Vec::as_slice).chain(suffix.iter().copied()).collect();
    encoder.encode(&tokens)
}

/// The plain-text query with no learnable prefix.
pub fn manual_query(words: &[String], encoder: &dyn TextEncoder) -> Result<Vec<f64>> {
    encoder.encode_words(words)
}

/// Wraps a fixed query as a prototype (no prefix), with centers measured on `source`.
pub fn manual_prototype<S: VectorSource + ?Sized>(
    source: &S,
    attribute: &str,
    polarity: i8,
    words: &[String],
    encoder: &dyn TextEncoder,
) -> Result<Prototype> {
    let query = manual_query(words, encoder)?;
    let centers = compute_centers(source, attribute, polarity, &query)?;
    Ok(Prototype {
        attribute: attribute.to_string(),
        encoder_id: encoder.id(),
        n_prefix: 0,
        prefix: Vec::new(),
        suffix_tokens: words.to_vec(),
        query_embedding: query,
        centers,
        polarity,
    })
}

fn oriented_label(label: Label, polarity: i8) -> Label {
    if polarity < 0 {
        label.flipped()
    } else {
        label
    }
}

/// Mean similarity of positive rows, of negative rows, and their midpoint.
pub fn compute_centers<S: VectorSource + ?Sized>(
    source: &S,
    attribute: &str,
    polarity: i8,
    query: &[f64],
) -> Result<Centers> {
    let labels = source.labels(attribute)?;
    let (mut sp, mut np, mut sn, mut nn) = (0.0, 0usize, 0.0, 0usize);
    for (i, &l) in labels.iter().enumerate() {
        match oriented_label(l, polarity) {
            Label::Positive => {
                sp += cosine(&source.vector(i), query)?;
                np += 1;
            }
            Label::Negative => {
                sn += cosine(&source.vector(i), query)?;
                nn += 1;
            }
            Label::Unlabeled => {}
        }
    }
    if np == 0 {
        return Err(Error::EmptyGroup { attribute: attribute.to_string(), polarity: "positive" });
    }
    if nn == 0 {
        return Err(Error::EmptyGroup { attribute: attribute.to_string(), polarity: "negative" });
    }
    let (center_pos, center_neg) = (sp / np as f64, sn / nn as f64);
    Ok(Centers { center_pos, center_neg, center_mid: 0.5 * (center_pos + center_neg) })
}

/// `mean_i (tanh(S_i − center) − y_i)²` over the batch. Every row must be labeled.
pub fn apl_loss<S: VectorSource + ?Sized>(
    batch: &S,
    attribute: &str,
    polarity: i8,
    query: &[f64],
    center_mid: f64,
) -> Result<f64> {
    let samples = labeled_samples(batch, attribute, polarity, true)?;
    let loss = loss_and_query_grad(&samples, query, center_mid, None)?;
    Ok(loss)
}

/// Analytic `d loss / d query` for [`apl_loss`].
pub fn apl_loss_query_grad<S: VectorSource + ?Sized>(
    batch: &S,
    attribute: &str,
    polarity: i8,
    query: &[f64],
    center_mid: f64,
) -> Result<Vec<f64>> {
    let samples = labeled_samples(batch, attribute, polarity, true)?;
    let mut grad = vec![0.0; query.len()];
    loss_and_query_grad(&samples, query, center_mid, Some(&mut grad))?;
    Ok(grad)
}

/// Gradient of [`apl_loss`] with respect to every prefix coordinate (row-major).
pub fn apl_loss_prefix_grad<S: VectorSource + ?Sized>(
    batch: &S,
    prototype: &Prototype,
    encoder: &dyn TextEncoder,
) -> Result<Vec<f64>> {
    let query = compile_query(prototype, encoder)?;
    let dq = apl_loss_query_grad(
        batch,
        &prototype.attribute,
        prototype.polarity,
        &query,
        prototype.centers.center_mid,
    )?;
    let suffix = suffix_vectors(encoder, &prototype.suffix_tokens)?;
    Ok(grad_prefix(encoder, &prototype.prefix, &suffix, &dq)?.concat())
}

/// A row as seen by the loss: its unit vector and its ±1 target.
struct Sample {
    unit: Vec<f64>,
    target: f64,
}

fn labeled_samples<S: VectorSource + ?Sized>(
    source: &S,
    attribute: &str,
    polarity: i8,
    strict: bool,
) -> Result<Vec<Sample>> {
    let labels = source.labels(attribute)?;
    let mut out = Vec::with_capacity(labels.len());
    for (i, &l) in labels.iter().enumerate() {
        match oriented_label(l, polarity).value() {
            Some(target) => {
                let v = source.vector(i);
                let n = norm(&v);
                if n == 0.0 {
                    return Err(Error::ZeroVector);
                }
                out.push(Sample { unit: v.iter().map(|x| x / n).collect(), target });
            }
            None if strict => {
                return Err(Error::UnlabeledRow { row: i, attribute: attribute.to_string() })
            }
            None => {}
        }
    }
    Ok(out)
}

fn loss_and_query_grad(
    samples: &[Sample],
    query: &[f64],
    center: f64,
    grad: Option<&mut [f64]>,
) -> Result<f64> {
    loss_on(samples.iter(), samples.len(), query, center, grad)
}

fn loss_on<'s>(
    samples: impl Iterator<Item = &'s Sample>,
    count: usize,
    query: &[f64],
    center: f64,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    if count == 0 {
        return Ok(0.0);
    }
    let n = count as f64;
    let mut total = 0.0;
    let mut scratch = vec![0.0; query.len()];
    for s in samples {
        // S = cos(q, v̂); differentiate with respect to q
        scratch.iter_mut().for_each(|x| *x = 0.0);
        let sim = accumulate_cosine_dv(query, &s.unit, 1.0, &mut scratch)?;
        let t = (sim - center).tanh();
        let r = t - s.target;
        total += r * r;
        if let Some(g) = grad.as_deref_mut() {
            let up = 2.0 * r * (1.0 - t * t) / n;
            g.iter_mut().zip(&scratch).for_each(|(gi, si)| *gi += up * si);
        }
    }
    Ok(total / n)
}

/// Per-epoch record of a prototype run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AplHistory {
    /// Full-batch loss at the start of each epoch, after the center refresh.
    pub epoch_loss: Vec<f64>,
}

/// Trains one prototype. On divergence the trainer keeps the last finite state.
pub struct PrototypeTrainer<'e> {
    encoder: &'e dyn TextEncoder,
    config: AplConfig,
    samples: Vec<Sample>,
    suffix: Vec<&'e [f64]>,
    prototype: Prototype,
    history: AplHistory,
    rng: ChaCha8Rng,
}

impl<'e> PrototypeTrainer<'e> {
    pub fn new<S: VectorSource + ?Sized>(
        train: &S,
        attribute: &str,
        polarity: i8,
        suffix_tokens: &[String],
        config: &AplConfig,
        encoder: &'e dyn TextEncoder,
    ) -> Result<Self> {
        config.validate()?;
        if encoder.embed_dim() != train.dim() {
            return Err(Error::DimMismatch { expected: train.dim(), got: encoder.embed_dim() });
        }
        let samples = labeled_samples(train, attribute, polarity, false)?;
        if !samples.iter().any(|s| s.target > 0.0) {
            return Err(Error::EmptyGroup { attribute: attribute.to_string(), polarity: "positive" });
        }
        if !samples.iter().any(|s| s.target < 0.0) {
            return Err(Error::EmptyGroup { attribute: attribute.to_string(), polarity: "negative" });
        }
        let suffix = suffix_vectors(encoder, suffix_tokens)?;

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, config.init_scale)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let prefix: Vec<Vec<f64>> = (0..config.n_prefix)
            .map(|_| (0..encoder.token_dim()).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        let query = compile_parts(encoder, &prefix, &suffix)?;
        let mut trainer = Self {
            encoder,
            config: config.clone(),
            samples,
            suffix,
            prototype: Prototype {
                attribute: attribute.to_string(),
                encoder_id: encoder.id(),
                n_prefix: config.n_prefix,
                prefix,
                suffix_tokens: suffix_tokens.to_vec(),
                query_embedding: query,
                centers: Centers { center_pos: 0.0, center_neg: 0.0, center_mid: 0.0 },
                polarity,
            },
            history: AplHistory::default(),
            rng,
        };
        trainer.prototype.centers = trainer.centers_for(&trainer.prototype.query_embedding)?;
        Ok(trainer)
    }

    fn centers_for(&self, query: &[f64]) -> Result<Centers> {
        let (mut sp, mut np, mut sn, mut nn) = (0.0, 0usize, 0.0, 0usize);
        let qn = norm(query);
        if qn == 0.0 {
            return Err(Error::ZeroVector);
        }
        for s in &self.samples {
            let c = crate::simcore::dot(&s.unit, query) / qn;
            if s.target > 0.0 {
                sp += c;
                np += 1;
            } else {
                sn += c;
                nn += 1;
            }
        }
        let (center_pos, center_neg) = (sp / np as f64, sn / nn as f64);
        Ok(Centers { center_pos, center_neg, center_mid: 0.5 * (center_pos + center_neg) })
    }

    /// Runs every configured epoch. Returns `NonFiniteLoss` on divergence,
    /// leaving [`PrototypeTrainer::prototype`] at the last finite state.
    pub fn run(&mut self) -> Result<()> {
        for epoch in 0..self.config.epochs {
            self.epoch(epoch)?;
        }
        let q = compile_parts(self.encoder, &self.prototype.prefix, &self.suffix)?;
        self.prototype.centers = self.centers_for(&q)?;
        self.prototype.query_embedding = q;
        Ok(())
    }

    fn epoch(&mut self, epoch: usize) -> Result<()> {
        let mut query = compile_parts(self.encoder, &self.prototype.prefix, &self.suffix)?;
        let centers = if epoch == 0 || self.config.center_refresh == CenterRefresh::PerEpoch {
            self.centers_for(&query)?
        } else {
            self.prototype.centers
        };
        let center = centers.center_mid;
        let loss = loss_and_query_grad(&self.samples, &query, center, None)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        self.history.epoch_loss.push(loss);

        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        order.shuffle(&mut self.rng);
        let batch = self.config.batch.unwrap_or(order.len()).min(order.len());
        let mut prefix = self.prototype.prefix.clone();
        let mut dq = vec![0.0; query.len()];
        for chunk in order.chunks(batch) {
            dq.iter_mut().for_each(|x| *x = 0.0);
            let l = loss_on(chunk.iter().map(|&i| &self.samples[i]), chunk.len(), &query, center, Some(&mut dq))?;
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            let dprefix = grad_prefix(self.encoder, &prefix, &self.suffix, &dq)?;
            for (row, g) in prefix.iter_mut().zip(&dprefix) {
                row.iter_mut().zip(g).for_each(|(p, gi)| *p -= self.config.lr * gi);
            }
            query = compile_parts(self.encoder, &prefix, &self.suffix)?;
            if query.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
        }
        self.prototype.prefix = prefix;
        self.prototype.query_embedding = query;
        self.prototype.centers = centers;
        Ok(())
    }

    pub fn prototype(&self) -> &Prototype {
        &self.prototype
    }

    pub fn history(&self) -> &AplHistory {
        &self.history
    }

    pub fn into_parts(self) -> (Prototype, AplHistory) {
        (self.prototype, self.history)
    }
}

/// Initializes, trains and returns a prototype together with its loss history.
pub fn train_prototype<S: VectorSource + ?Sized>(
    train: &S,
    attribute: &str,
    polarity: i8,
    suffix_tokens: &[String],
    config: &AplConfig,
    encoder: &dyn TextEncoder,
) -> Result<(Prototype, AplHistory)> {
    let mut trainer = PrototypeTrainer::new(train, attribute, polarity, suffix_tokens, config, encoder)?;
    trainer.run()?;
    Ok(trainer.into_parts())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedstore::DenseSource;
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;

    fn labeled(rows: Vec<Vec<f64>>, labels: Vec<Label>) -> DenseSource {
        let mut attrs = BTreeMap::new();
        attrs.insert("glasses".to_string(), labels);
        DenseSource::new(rows, attrs).unwrap()
    }

    #[test]
    fn centers_two_samples() {
        // cos 0.8 for the positive row, 0.2 for the negative row
        let pos = vec![0.8, 0.6];
        let neg = vec![0.2, (1.0f64 - 0.04).sqrt()];
        let src = labeled(vec![pos, neg], vec![Label::Positive, Label::Negative]);
        let c = compute_centers(&src, "glasses", 1, &[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(c.center_pos, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(c.center_neg, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(c.center_mid, 0.5, epsilon = 1e-15);
        let flipped = compute_centers(&src, "glasses", -1, &[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(flipped.center_pos, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn centers_degenerate_and_empty() {
        let src = labeled(vec![vec![1.0, 2.0]; 4], vec![Label::Positive, Label::Negative, Label::Positive, Label::Unlabeled]);
        let c = compute_centers(&src, "glasses", 1, &[0.3, 0.1]).unwrap();
        assert_eq!(c.center_pos, c.center_neg);
        assert_eq!(c.center_mid, c.center_pos);
        let only_pos = labeled(vec![vec![1.0, 0.0]], vec![Label::Positive]);
        assert!(matches!(
            compute_centers(&only_pos, "glasses", 1, &[1.0, 0.0]),
            Err(Error::EmptyGroup { polarity: "negative", .. })
        ));
    }

    #[test]
    fn loss_hand_values() {
        // S == center, label +1 → (0 − 1)² = 1
        let src = labeled(vec![vec![1.0, 0.0]], vec![Label::Positive]);
        assert_abs_diff_eq!(apl_loss(&src, "glasses", 1, &[1.0, 0.0], 1.0).unwrap(), 1.0);
        // far above the center: tanh → 1, loss → 0
        let far = apl_loss(&src, "glasses", 1, &[1.0, 0.0], -30.0).unwrap();
        assert!(far < 1e-20);

        // three rows with hand-picked similarities 0.6, 0.0, −0.8 against e₁, center 0.1
        let rows = vec![vec![0.6, 0.8], vec![0.0, 1.0], vec![-0.8, 0.6]];
        let src = labeled(rows, vec![Label::Positive, Label::Negative, Label::Negative]);
        let expected = ((0.5f64.tanh() - 1.0).powi(2)
            + ((-0.1f64).tanh() + 1.0).powi(2)
            + ((-0.9f64).tanh() + 1.0).powi(2))
            / 3.0;
        assert_abs_diff_eq!(apl_loss(&src, "glasses", 1, &[1.0, 0.0], 0.1).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn loss_rejects_unlabeled_rows() {
        let src = labeled(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![Label::Positive, Label::Unlabeled]);
        assert!(matches!(
            apl_loss(&src, "glasses", 1, &[1.0, 0.0], 0.0),
            Err(Error::UnlabeledRow { row: 1, .. })
        ));
    }

    #[test]
    fn bypass_compile_is_mean() {
        let mut vocab = Vocabulary::default();
        vocab.insert("glasses", vec![3.0, 0.0]);
        let enc = BypassEncoder::new(2, vocab).unwrap();
        let proto = Prototype {
            attribute: "glasses".into(),
            encoder_id: EncoderId::Bypass,
            n_prefix: 2,
            prefix: vec![vec![1.0, 1.0], vec![-1.0, 2.0]],
            suffix_tokens: vec!["glasses".into()],
            query_embedding: vec![],
            centers: Centers { center_pos: 0.0, center_neg: 0.0, center_mid: 0.0 },
            polarity: 1,
        };
        let q = compile_query(&proto, &enc).unwrap();
        assert_eq!(q, vec![1.0, 1.0]);
        assert_eq!(compile_query(&proto, &enc).unwrap(), q);
    }

    #[test]
    fn toy_zero_prefix_scales_suffix() {
        let mut vocab = Vocabulary::default();
        vocab.insert("glasses", vec![0.0, 2.0, -1.0]);
        let enc = ToyEncoder::new(3, 3, 4, &vocab).unwrap();
        let n = 6;
        let proto = Prototype {
            attribute: "glasses".into(),
            encoder_id: EncoderId::Toy,
            n_prefix: n,
            prefix: vec![vec![0.0; 3]; n],
            suffix_tokens: vec!["glasses".into()],
            query_embedding: vec![],
            centers: Centers { center_pos: 0.0, center_neg: 0.0, center_mid: 0.0 },
            polarity: 1,
        };
        let q = compile_query(&proto, &enc).unwrap();
        let manual = manual_query(&["glasses".into()], &enc).unwrap();
        for (a, b) in q.iter().zip(&manual) {
            assert_abs_diff_eq!(*a, b / (n as f64 + 1.0), epsilon = 1e-12);
        }
        for (a, b) in manual.iter().zip([0.0, 2.0, -1.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_lr_keeps_prefix() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, if i % 2 == 0 { 0.5 } else { -0.5 }, 0.1 * i as f64]).collect();
        let labels = (0..20).map(|i| if i % 2 == 0 { Label::Positive } else { Label::Negative }).collect();
        let src = labeled(rows, labels);
        let mut vocab = Vocabulary::default();
        vocab.insert("glasses", vec![1.0, 0.0, 0.0]);
        let enc = BypassEncoder::new(3, vocab).unwrap();
        let cfg = AplConfig { lr: 0.0, epochs: 4, seed: 3, ..Default::default() };
        let mut trainer = PrototypeTrainer::new(&src, "glasses", 1, &["glasses".into()], &cfg, &enc).unwrap();
        let initial = trainer.prototype().prefix.clone();
        trainer.run().unwrap();
        assert_eq!(trainer.prototype().prefix, initial);
        let h = &trainer.history().epoch_loss;
        assert!(h.windows(2).all(|w| w[0] == w[1]), "{h:?}");
    }
}
