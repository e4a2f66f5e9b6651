//! Seeded random instances of every training loss, checked against central
//! differences.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::apl::{apl_loss, apl_loss_prefix_grad, compile_query, BypassEncoder, Centers, EncoderId, Prototype, TextEncoder, ToyEncoder, Vocabulary};
use crate::diffcore::{gradcheck, FnComposition, GradCheckReport};
use crate::embedstore::{DenseSource, Label};
use crate::error::{Error, Result};
use crate::rrm::{pair_rows, RnObjective, RnPrototypes, TflScope};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Prototype loss through the toy encoder, with respect to the prefix.
    Apl,
    /// Prototype loss through the bypass encoder.
    AplBypass,
    Bcl,
    Tfl,
    /// The combined `λ·BCL + (1−λ)·Σ TFL` objective at `λ = 0.8`.
    Rrm,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [LossKind::Apl, LossKind::AplBypass, LossKind::Bcl, LossKind::Tfl, LossKind::Rrm];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Apl => "apl",
            LossKind::AplBypass => "apl-bypass",
            LossKind::Bcl => "bcl",
            LossKind::Tfl => "tfl",
            LossKind::Rrm => "rrm",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown loss {s:?}")))
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn random_source(rng: &mut ChaCha8Rng, dim: usize, rows: usize, attrs: &[&str]) -> Result<DenseSource> {
    let vectors: Vec<Vec<f64>> = (0..rows).map(|_| gaussian(rng, dim, 1.0)).collect();
    let mut labels = BTreeMap::new();
    for (a, name) in attrs.iter().enumerate() {
        // alternate on a per-attribute phase so both labels always occur
        let l = (0..rows).map(|i| if (i + a) % 2 == 0 { Label::Positive } else { Label::Negative }).collect();
        labels.insert(name.to_string(), l);
    }
    DenseSource::new(vectors, labels)
}

fn random_proto(rng: &mut ChaCha8Rng, attribute: &str, dim: usize) -> Prototype {
    Prototype {
        attribute: attribute.to_string(),
        encoder_id: EncoderId::Bsce,
        n_prefix: 0,
        prefix: Vec::new(),
        suffix_tokens: Vec::new(),
        query_embedding: gaussian(rng, dim, 1.0),
        centers: Centers { center_pos: 0.0, center_neg: 0.0, center_mid: 0.0 },
        polarity: 1,
    }
}

/// Builds a random instance of `kind` in dimension `dim` and gradchecks it.
pub fn check_loss(kind: LossKind, dim: usize, seed: u64, h: f64, tol: f64) -> Result<GradCheckReport> {
    if dim < 2 {
        return Err(Error::DimTooSmall { dim, needed: 2 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        LossKind::Apl | LossKind::AplBypass => check_apl(kind, dim, &mut rng, h, tol),
        LossKind::Bcl | LossKind::Tfl | LossKind::Rrm => check_rn(kind, dim, &mut rng, h, tol),
    }
}

fn check_apl(kind: LossKind, dim: usize, rng: &mut ChaCha8Rng, h: f64, tol: f64) -> Result<GradCheckReport> {
    let source = random_source(rng, dim, 10, &["glasses"])?;
    let mut vocab = Vocabulary::default();
    vocab.insert("glasses", gaussian(rng, dim, 1.0));
    let encoder: Box<dyn TextEncoder> = match kind {
        LossKind::Apl => Box::new(ToyEncoder::new(dim, dim, rng.random(), &vocab)?),
        _ => Box::new(BypassEncoder::new(dim, vocab)?),
    };
    let n_prefix = 3;
    let template = Prototype {
        attribute: "glasses".into(),
        encoder_id: encoder.id(),
        n_prefix,
        prefix: vec![vec![0.0; encoder.token_dim()]; n_prefix],
        suffix_tokens: vec!["glasses".into()],
        query_embedding: Vec::new(),
        centers: Centers { center_pos: 0.0, center_neg: 0.0, center_mid: rng.random_range(-0.3..0.3) },
        polarity: 1,
    };
    let point = gaussian(rng, n_prefix * encoder.token_dim(), 0.7);
    let with_prefix = |params: &[f64]| {
        let mut p = template.clone();
        p.prefix = params.chunks(encoder.token_dim()).map(<[f64]>::to_vec).collect();
        p
    };
    let comp = FnComposition {
        id: kind.name().to_string(),
        loss: |params: &[f64]| {
            let p = with_prefix(params);
            let q = compile_query(&p, encoder.as_ref())?;
            apl_loss(&source, &p.attribute, p.polarity, &q, p.centers.center_mid)
        },
        gradient: |params: &[f64]| apl_loss_prefix_grad(&source, &with_prefix(params), encoder.as_ref()),
    };
    gradcheck(&comp, &point, h, tol)
}

fn check_rn(kind: LossKind, dim: usize, rng: &mut ChaCha8Rng, h: f64, tol: f64) -> Result<GradCheckReport> {
    let source = random_source(rng, dim, 12, &["gender", "hat", "bangs"])?;
    let protos = RnPrototypes {
        bias_pos: random_proto(rng, "gender", dim),
        bias_neg: random_proto(rng, "gender", dim),
        targets: vec![random_proto(rng, "hat", dim), random_proto(rng, "bangs", dim)],
    };
    let labels = crate::embedstore::VectorSource::labels(&source, "gender")?;
    let pairs = pair_rows(&labels, "gender", rng.random())?;
    let lambda = match kind {
        LossKind::Bcl => 1.0,
        LossKind::Tfl => 0.0,
        _ => 0.8,
    };
    let objective = RnObjective::new(&source, &pairs, &protos, lambda, TflScope::All)?;
    let mut point = gaussian(rng, dim * dim, 0.3);
    for i in 0..dim {
        point[i * dim + i] += 1.0;
    }
    let comp = FnComposition {
        id: kind.name().to_string(),
        loss: |m: &[f64]| Ok(objective.loss(m)?.loss),
        gradient: |m: &[f64]| Ok(objective.loss_and_grad(m)?.1),
    };
    gradcheck(&comp, &point, h, tol)
}
