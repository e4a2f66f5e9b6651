//! Frozen, differentiable text encoders used for prototype learning.
//!
//! Both encoders mean-pool a sequence of token vectors and map the result
//! into embedding space with a fixed linear map: a seeded random map with
//! orthonormal columns for [`ToyEncoder`], the identity for [`BypassEncoder`].

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simcore::{dot, norm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderId {
    Toy,
    Bypass,
    /// Query extracted by the BSCE baseline; there is no encoder behind it.
    Bsce,
}

impl EncoderId {
    pub fn name(self) -> &'static str {
        match self {
            EncoderId::Toy => "toy",
            EncoderId::Bypass => "bypass",
            EncoderId::Bsce => "bsce",
        }
    }
}

impl std::str::FromStr for EncoderId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(EncoderId::Toy),
            "bypass" => Ok(EncoderId::Bypass),
            "bsce" => Ok(EncoderId::Bsce),
            other => Err(Error::InvalidConfig(format!("unknown encoder {other:?}"))),
        }
    }
}

/// Word → embedding-space vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary(pub BTreeMap<String, Vec<f64>>);

impl Vocabulary {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn get(&self, word: &str) -> Result<&[f64]> {
        self.0
            .get(word)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownToken(word.to_string()))
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) {
        self.0.insert(word.into(), vector);
    }
}

/// Lowercases and splits on whitespace, trimming punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

pub trait TextEncoder: Send + Sync {
    fn id(&self) -> EncoderId;
    fn token_dim(&self) -> usize;
    fn embed_dim(&self) -> usize;
    /// Token-space vector for a vocabulary word.
    fn token(&self, word: &str) -> Result<&[f64]>;
    fn encode(&self, tokens: &[&[f64]]) -> Result<Vec<f64>>;
    /// Sensitivity of every input token to an output-space sensitivity.
    fn vjp(&self, tokens: &[&[f64]], out_grad: &[f64]) -> Result<Vec<Vec<f64>>>;

    fn encode_words(&self, words: &[String]) -> Result<Vec<f64>> {
        let toks = words.iter().map(|w| self.token(w)).collect::<Result<Vec<_>>>()?;
        self.encode(&toks)
    }
}

fn mean_pool(tokens: &[&[f64]], dim: usize) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::InvalidConfig("cannot encode an empty token sequence".into()));
    }
    let mut acc = vec![0.0; dim];
    for t in tokens {
        if t.len() != dim {
            return Err(Error::DimMismatch { expected: dim, got: t.len() });
        }
        for (a, x) in acc.iter_mut().zip(t.iter()) {
            *a += x;
        }
    }
    let n = tokens.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Mean-pool followed by a fixed `embed_dim × token_dim` map with orthonormal columns.
#[derive(Clone, Debug)]
pub struct ToyEncoder {
    embed_dim: usize,
    token_dim: usize,
    /// Row-major `embed_dim × token_dim`.
    map: Vec<f64>,
    tokens: BTreeMap<String, Vec<f64>>,
}

impl ToyEncoder {
    /// Builds the map from `seed`; vocabulary vectors are given in embedding
    /// space and pulled back into token space through the map's transpose.
    pub fn new(embed_dim: usize, token_dim: usize, seed: u64, vocab: &Vocabulary) -> Result<Self> {
        if token_dim == 0 || token_dim > embed_dim {
            return Err(Error::InvalidConfig(format!(
                "token dim {token_dim} must be in 1..={embed_dim}"
            )));
        }
        let map = orthonormal_columns(embed_dim, token_dim, seed);
        let mut enc = Self { embed_dim, token_dim, map, tokens: BTreeMap::new() };
        for (word, e) in &vocab.0 {
            if e.len() != embed_dim {
                return Err(Error::DimMismatch { expected: embed_dim, got: e.len() });
            }
            let t = enc.pull_back(e);
            enc.tokens.insert(word.clone(), t);
        }
        Ok(enc)
    }

    /// Vocabulary given directly in token space.
    pub fn with_token_vocab(
        embed_dim: usize,
        token_dim: usize,
        seed: u64,
        tokens: BTreeMap<String, Vec<f64>>,
    ) -> Result<Self> {
        let mut enc = Self::new(embed_dim, token_dim, seed, &Vocabulary::default())?;
        for (w, t) in tokens {
            if t.len() != token_dim {
                return Err(Error::DimMismatch { expected: token_dim, got: t.len() });
            }
            enc.tokens.insert(w, t);
        }
        Ok(enc)
    }

    /// `W x` for a token-space vector.
    pub fn apply_map(&self, x: &[f64]) -> Vec<f64> {
        self.map.chunks_exact(self.token_dim).map(|row| dot(row, x)).collect()
    }

    /// `Wᵀ y` for an embedding-space vector.
    pub fn pull_back(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.token_dim];
        for (row, &yi) in self.map.chunks_exact(self.token_dim).zip(y) {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * yi;
            }
        }
        out
    }

    pub fn map(&self) -> &[f64] {
        &self.map
    }
}

/// Gram–Schmidt on seeded Gaussian columns; returns row-major `rows × cols`.
fn orthonormal_columns(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while basis.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(&mut rng)).collect();
        // two passes keep the columns orthogonal to machine precision
        for _ in 0..2 {
            for b in &basis {
                let p = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for (c, b) in basis.iter().enumerate() {
        for (r, &x) in b.iter().enumerate() {
            out[r * cols + c] = x;
        }
    }
    out
}

impl TextEncoder for ToyEncoder {
    fn id(&self) -> EncoderId {
        EncoderId::Toy
    }

    fn token_dim(&self) -> usize {
        self.token_dim
    }

    fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn token(&self, word: &str) -> Result<&[f64]> {
        self.tokens
            .get(word)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownToken(word.to_string()))
    }

    fn encode(&self, tokens: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(self.apply_map(&mean_pool(tokens, self.token_dim)?))
    }

    fn vjp(&self, tokens: &[&[f64]], out_grad: &[f64]) -> Result<Vec<Vec<f64>>> {
        if out_grad.len() != self.embed_dim {
            return Err(Error::DimMismatch { expected: self.embed_dim, got: out_grad.len() });
        }
        let n = tokens.len() as f64;
        let mut g = self.pull_back(out_grad);
        g.iter_mut().for_each(|x| *x /= n);
        Ok(vec![g; tokens.len()])
    }
}

/// Token vectors live directly in embedding space; the query is their mean.
#[derive(Clone, Debug)]
pub struct BypassEncoder {
    dim: usize,
    vocab: Vocabulary,
}

impl BypassEncoder {
    pub fn new(dim: usize, vocab: Vocabulary) -> Result<Self> {
        if let Some(bad) = vocab.0.values().find(|v| v.len() != dim) {
            return Err(Error::DimMismatch { expected: dim, got: bad.len() });
        }
        Ok(Self { dim, vocab })
    }
}

impl TextEncoder for BypassEncoder {
    fn id(&self) -> EncoderId {
        EncoderId::Bypass
    }

    fn token_dim(&self) -> usize {
        self.dim
    }

    fn embed_dim(&self) -> usize {
        self.dim
    }

    fn token(&self, word: &str) -> Result<&[f64]> {
        self.vocab.get(word)
    }

    fn encode(&self, tokens: &[&[f64]]) -> Result<Vec<f64>> {
        mean_pool(tokens, self.dim)
    }

    fn vjp(&self, tokens: &[&[f64]], out_grad: &[f64]) -> Result<Vec<Vec<f64>>> {
        if out_grad.len() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, got: out_grad.len() });
        }
        let n = tokens.len() as f64;
        Ok(vec![out_grad.iter().map(|g| g / n).collect(); tokens.len()])
    }
}

/// Stand-in for an encoder that can only run forward.
#[derive(Clone, Debug)]
pub struct ForwardOnly<E>(pub E);

impl<E: TextEncoder> TextEncoder for ForwardOnly<E> {
    fn id(&self) -> EncoderId {
        self.0.id()
    }
    fn token_dim(&self) -> usize {
        self.0.token_dim()
    }
    fn embed_dim(&self) -> usize {
        self.0.embed_dim()
    }
    fn token(&self, word: &str) -> Result<&[f64]> {
        self.0.token(word)
    }
    fn encode(&self, tokens: &[&[f64]]) -> Result<Vec<f64>> {
        self.0.encode(tokens)
    }
    fn vjp(&self, _: &[&[f64]], _: &[f64]) -> Result<Vec<Vec<f64>>> {
        Err(Error::EncoderNotDifferentiable(self.0.id().name().to_string()))
    }
}

/// Builds an encoder of the given kind over an embedding-space vocabulary.
pub fn build_encoder(
    id: EncoderId,
    dim: usize,
    seed: u64,
    vocab: &Vocabulary,
) -> Result<Box<dyn TextEncoder>> {
    match id {
        EncoderId::Toy => Ok(Box::new(ToyEncoder::new(dim, dim, seed, vocab)?)),
        EncoderId::Bypass => Ok(Box::new(BypassEncoder::new(dim, vocab.clone())?)),
        EncoderId::Bsce => Err(Error::EncoderNotDifferentiable("bsce".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn toy_map_is_orthonormal() {
        let enc = ToyEncoder::new(7, 4, 3, &Vocabulary::default()).unwrap();
        let m = enc.map();
        for a in 0..4 {
            for b in 0..4 {
                let g: f64 = (0..7).map(|r| m[r * 4 + a] * m[r * 4 + b]).sum();
                assert_abs_diff_eq!(g, if a == b { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn square_toy_vocab_roundtrips_through_pullback() {
        let mut vocab = Vocabulary::default();
        vocab.insert("glasses", vec![0.3, -1.0, 2.0]);
        let enc = ToyEncoder::new(3, 3, 11, &vocab).unwrap();
        let q = enc.encode_words(&["glasses".to_string()]).unwrap();
        for (a, b) in q.iter().zip([0.3, -1.0, 2.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("A photo of a  Smart person."), ["a", "photo", "of", "a", "smart", "person"]);
    }

    #[test]
    fn unknown_token() {
        let enc = BypassEncoder::new(2, Vocabulary::default()).unwrap();
        assert!(matches!(enc.encode_words(&["hat".into()]), Err(Error::UnknownToken(_))));
    }
}
