//! Seeded synthetic embedding sets with planted bias and target directions.
//!
//! Geometry: an orthonormal set `{c, b, t_1..t_T}` (content, bias, targets).
//! Row `i` is `m·c + y_b·s_b·b + Σ_j y_j·s_j·t_j + N(0, σ²)` with labels
//! `y ∈ {−1, +1}`. Bias-word queries are `normalize(c + a_w·b)`.
//!
//! The vocabulary lives in embedding space and is chosen so that the
//! template "a photo of a {word} person" mean-pools to `c + a_w·b` exactly,
//! while attribute words carry a random misalignment of size `μ`.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::apl::Vocabulary;
use crate::embedstore::{EmbeddingStore, Label};
use crate::error::{Error, Result};
use crate::metrics::BiasQuery;
use crate::simcore::{dot, norm, PairedQueries};

pub const BIAS_ATTRIBUTE: &str = "gender";
pub const BIAS_POSITIVE_TOKEN: &str = "male";
pub const BIAS_NEGATIVE_TOKEN: &str = "female";
pub const TEMPLATE: [&str; 6] = ["a", "photo", "of", "a", "{}", "person"];

/// Antonym pairs, strongest affinity first.
pub const BIAS_WORD_PAIRS: [(&str, &str); 6] = [
    ("smart", "stupid"),
    ("rich", "poor"),
    ("happy", "sad"),
    ("noble", "humble"),
    ("nice", "terrible"),
    ("kind", "evil"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n: usize,
    pub dim: usize,
    pub seed: u64,
    /// Weight of the shared content direction in every image.
    pub content_strength: f64,
    pub bias_strength: f64,
    pub target_strengths: BTreeMap<String, f64>,
    pub noise_sigma: f64,
    pub bias_word_affinities: BTreeMap<String, f64>,
    /// Share of rows with bias label +1.
    pub bias_positive_fraction: f64,
    /// Std of the noise separating a paired caption from its image.
    pub text_noise: f64,
    /// Norm of the random offset added to each attribute word.
    pub token_misalignment: f64,
}

/// `n` evenly spaced values over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// The twelve bias words with affinities spread over `[−amplitude, amplitude]`.
pub fn default_affinities(amplitude: f64) -> BTreeMap<String, f64> {
    let values = linspace(-amplitude, amplitude, 2 * BIAS_WORD_PAIRS.len());
    let last = values.len() - 1;
    BIAS_WORD_PAIRS
        .iter()
        .enumerate()
        .flat_map(|(p, (pos, neg))| [(pos.to_string(), values[last - p]), (neg.to_string(), values[p])])
        .collect()
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 2000,
            dim: 64,
            seed: 7,
            content_strength: 2.0,
            bias_strength: 1.0,
            target_strengths: ["bangs", "glasses", "hat"].iter().map(|t| (t.to_string(), 0.6)).collect(),
            noise_sigma: 0.5,
            bias_word_affinities: default_affinities(0.4),
            bias_positive_fraction: 0.5,
            text_noise: 0.5,
            token_misalignment: 1.0,
        }
    }
}

impl SynthSpec {
    pub fn n_target_attrs(&self) -> usize {
        self.target_strengths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.dim < self.n_target_attrs() + 2 {
            return Err(Error::DimTooSmall { dim: self.dim, needed: self.n_target_attrs() + 2 });
        }
        if self.n < 4 {
            return bad(format!("n = {} is below the minimum of 4", self.n));
        }
        let reals = [
            ("content_strength", self.content_strength),
            ("bias_strength", self.bias_strength),
            ("noise_sigma", self.noise_sigma),
            ("text_noise", self.text_noise),
            ("token_misalignment", self.token_misalignment),
        ];
        for (name, v) in reals.into_iter().chain(self.target_strengths.iter().map(|(k, v)| (k.as_str(), *v))) {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if self.content_strength == 0.0 && self.bias_strength == 0.0 && self.target_strengths.values().all(|&s| s == 0.0) && self.noise_sigma == 0.0 {
            return bad("all strengths and noise are zero; rows would be zero vectors".into());
        }
        if !(self.bias_positive_fraction > 0.0 && self.bias_positive_fraction < 1.0) {
            return bad("bias_positive_fraction must lie in (0, 1)".into());
        }
        for name in self.target_strengths.keys() {
            if name == BIAS_ATTRIBUTE || TEMPLATE.contains(&name.as_str()) || name.contains(char::is_whitespace) {
                return bad(format!("invalid target attribute name {name:?}"));
            }
        }
        if self.bias_word_affinities.values().any(|a| !a.is_finite()) {
            return bad("bias word affinities must be finite".into());
        }
        Ok(())
    }
}

/// The planted geometry, for oracles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bias_attribute: String,
    pub content_direction: Vec<f64>,
    pub bias_direction: Vec<f64>,
    pub target_directions: BTreeMap<String, Vec<f64>>,
    pub content_strength: f64,
    pub bias_strength: f64,
    pub target_strengths: BTreeMap<String, f64>,
    pub affinities: BTreeMap<String, f64>,
}

impl GroundTruth {
    /// Noiseless cosine between a row with the given labels and the query of `word`.
    ///
    /// With `σ = 0` every row equals `m·c + y_b·s_b·b + Σ y_j·s_j·t_j`, so the
    /// cosine is `(m + a·y_b·s_b) / (‖row‖·√(1 + a²))`.
    pub fn bias_word_similarity(&self, bias_label: f64, word: &str) -> Option<f64> {
        let a = *self.affinities.get(word)?;
        let row_norm = (self.content_strength.powi(2)
            + self.bias_strength.powi(2)
            + self.target_strengths.values().map(|s| s * s).sum::<f64>())
        .sqrt();
        Some((self.content_strength + a * bias_label * self.bias_strength) / (row_norm * (1.0 + a * a).sqrt()))
    }
}

pub struct SynthData {
    pub spec: SynthSpec,
    pub store: EmbeddingStore,
    pub bias_queries: Vec<BiasQuery>,
    pub vocab: Vocabulary,
    /// One caption per row, paired with that row.
    pub texts: PairedQueries,
    pub truth: GroundTruth,
}

impl SynthData {
    pub fn target_attributes(&self) -> Vec<String> {
        self.spec.target_strengths.keys().cloned().collect()
    }

    /// Captions of `rows`, with ground truth re-indexed to positions in `rows`.
    pub fn texts_for(&self, rows: &[usize]) -> PairedQueries {
        PairedQueries {
            texts: rows.iter().map(|&r| self.texts.texts[r].clone()).collect(),
            image_rows: (0..rows.len()).map(Some).collect(),
        }
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

/// `count` orthonormal vectors by Gram–Schmidt over Gaussian draws.
fn orthonormal_set(rng: &mut ChaCha8Rng, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian_vec(rng, dim);
        // two passes keep the set orthonormal to ~1e-16
        for _ in 0..2 {
            for e in &basis {
                let p = dot(&v, e);
                v.iter_mut().zip(e).for_each(|(x, y)| *x -= p * y);
            }
        }
        if norm(&v) > 1e-6 {
            basis.push(unit(v));
        }
    }
    basis
}

fn combine(terms: &[(f64, &[f64])], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for (w, v) in terms {
        out.iter_mut().zip(v.iter()).for_each(|(o, x)| *o += w * x);
    }
    out
}

fn bias_label(i: usize, fraction: f64) -> Label {
    // exact running proportion: row i is positive when floor((i+1)f) steps up
    let up = ((i + 1) as f64 * fraction).floor() > (i as f64 * fraction).floor();
    if up {
        Label::Positive
    } else {
        Label::Negative
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let (d, n) = (spec.dim, spec.n);
    let targets: Vec<(&String, f64)> = spec.target_strengths.iter().map(|(k, &v)| (k, v)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let basis = orthonormal_set(&mut rng, d, targets.len() + 2);
    let (c, b) = (&basis[0], &basis[1]);
    let target_dirs = &basis[2..];

    let mut attrs: BTreeMap<String, Vec<Label>> = BTreeMap::new();
    let bias_labels: Vec<Label> = (0..n).map(|i| bias_label(i, spec.bias_positive_fraction)).collect();
    attrs.insert(BIAS_ATTRIBUTE.to_string(), bias_labels.clone());
    for (j, (name, _)) in targets.iter().enumerate() {
        let labels = (0..n).map(|i| if (i >> (j + 1)) & 1 == 1 { Label::Positive } else { Label::Negative }).collect();
        attrs.insert((*name).clone(), labels);
    }

    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let mut terms: Vec<(f64, &[f64])> = vec![
            (spec.content_strength, c),
            (bias_labels[i].value().unwrap_or(0.0) * spec.bias_strength, b),
        ];
        for (j, (name, s)) in targets.iter().enumerate() {
            terms.push((attrs[*name][i].value().unwrap_or(0.0) * s, &target_dirs[j]));
        }
        let mut v = combine(&terms, d);
        if spec.noise_sigma > 0.0 {
            v.iter_mut().for_each(|x| *x += noise.sample(&mut rng));
        }
        rows.push(v);
    }

    let text_noise = Normal::new(0.0, spec.text_noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let texts: Vec<Vec<f64>> = rows
        .iter()
        .map(|v| {
            let mut t: Vec<f64> = v.iter().map(|&x| x as f32 as f64).collect();
            if spec.text_noise > 0.0 {
                t.iter_mut().for_each(|x| *x += text_noise.sample(&mut rng));
            }
            t
        })
        .collect();

    let mut vocab = Vocabulary::default();
    for w in ["a", "photo", "of", "person"] {
        vocab.insert(w, c.clone());
    }
    let slots = TEMPLATE.len() as f64;
    for (word, &a) in &spec.bias_word_affinities {
        vocab.insert(word, combine(&[(1.0, c), (slots * a, b)], d));
    }
    let mut misaligned = |dir: &[f64], sign: f64| {
        let r = unit(gaussian_vec(&mut rng, d));
        combine(&[(1.0, c), (sign, dir), (spec.token_misalignment, &r)], d)
    };
    let male = misaligned(b, 1.0);
    let female = misaligned(b, -1.0);
    vocab.insert(BIAS_POSITIVE_TOKEN, male);
    vocab.insert(BIAS_NEGATIVE_TOKEN, female);
    for (j, (name, _)) in targets.iter().enumerate() {
        let tok = misaligned(&target_dirs[j], 1.0);
        vocab.insert(name.as_str(), tok);
    }

    let bias_queries = spec
        .bias_word_affinities
        .iter()
        .map(|(word, &a)| BiasQuery { word: word.clone(), embedding: unit(combine(&[(1.0, c), (a, b)], d)) })
        .collect();

    let store = EmbeddingStore::from_rows(&rows, (0..n).map(|i| format!("s{i:05}")).collect(), attrs)?;
    let truth = GroundTruth {
        bias_attribute: BIAS_ATTRIBUTE.to_string(),
        content_direction: c.clone(),
        bias_direction: b.clone(),
        target_directions: targets.iter().zip(target_dirs).map(|((k, _), v)| ((*k).clone(), v.clone())).collect(),
        content_strength: spec.content_strength,
        bias_strength: spec.bias_strength,
        target_strengths: spec.target_strengths.clone(),
        affinities: spec.bias_word_affinities.clone(),
    };
    Ok(SynthData {
        spec: spec.clone(),
        store,
        bias_queries,
        vocab,
        texts: PairedQueries { texts, image_rows: (0..n).map(Some).collect() },
        truth,
    })
}

/// Tokens of the bias-word template for `word`.
pub fn template_tokens(word: &str) -> Vec<String> {
    TEMPLATE.iter().map(|t| if *t == "{}" { word.to_string() } else { t.to_string() }).collect()
}
