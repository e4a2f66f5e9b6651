use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use fairsim_core::apl::Prototype;
use fairsim_core::baselines::{clip_clip_apply, clip_clip_view};
use fairsim_core::embedstore::{StoreView, VectorSource};
use fairsim_core::metrics::{bias_suite, pca_2d, tas_bfd_sweep, zero_shot_divergence, BiasQuery, ZeroShotReport};
use fairsim_core::rrm::apply_rrm;
use fairsim_core::simcore::{recall_at_k, PairedQueries};
use fairsim_core::synth::template_tokens;
use serde::{Deserialize, Serialize};

use super::{bias_queries, encoder, encoder_id, load_mask, load_rrm, load_vocab, log_run, select, TEXTS_FILE};
use crate::artifact::{sidecar, write_csv, Envelope};
use crate::cli::{EvalBiasArgs, EvalPcaArgs, EvalRecallArgs, EvalTasBfdArgs, EvalZeroshotArgs, Side};
use crate::config::{set, RunConfig};
use crate::error::{CliError, CliResult};

pub fn bias(cfg: &mut RunConfig, a: EvalBiasArgs) -> CliResult<()> {
    set(&mut cfg.metrics.k, a.k);
    let sel = select(cfg, &a.store, Side::Test)?;
    let mut queries = bias_queries(cfg, &a.queries, &sel)?;
    log_run("eval bias", cfg, None);
    let view = sel.view();
    let attr = &a.transform.bias_attr;
    let k = cfg.metrics.k;
    let report = if let Some(path) = &a.transform.rrm {
        let rrm = load_rrm(path, attr, view.dim())?;
        bias_suite(&view, attr, &queries, k, Some(&rrm))?
    } else if let Some(path) = &a.transform.mask {
        let mask = load_mask(path)?;
        for q in &mut queries {
            q.embedding = clip_clip_apply(&q.embedding, &mask)?;
        }
        bias_suite(&clip_clip_view(&view, &mask)?, attr, &queries, k, None)?
    } else {
        bias_suite(&view, attr, &queries, k, None)?
    };
    log::info!("mean Bias@{k} over {} words: {:.4}", queries.len(), report.mean_bias);
    Envelope::new("bias_report", cfg, report).on_split(sel.side).write(&a.out)
}

#[derive(Deserialize)]
struct TextLine {
    row: usize,
    embedding: Vec<f64>,
}

/// Captions of the selected rows, re-indexed to positions in the selection.
fn load_texts(path: &PathBuf, rows: &[usize]) -> CliResult<PairedQueries> {
    let position: HashMap<usize, usize> = rows.iter().enumerate().map(|(p, &r)| (r, p)).collect();
    let mut out = PairedQueries::default();
    for (n, line) in fs::read_to_string(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: TextLine = serde_json::from_str(line)
            .map_err(|e| fairsim_core::Error::BadMetadata { line: n + 1, message: e.to_string() })?;
        if let Some(&p) = position.get(&t.row) {
            out.texts.push(t.embedding);
            out.image_rows.push(Some(p));
        }
    }
    if out.texts.is_empty() {
        return Err(CliError::Usage(format!("{} has no captions for the selected rows", path.display())));
    }
    Ok(out)
}

pub fn recall(cfg: &mut RunConfig, a: EvalRecallArgs) -> CliResult<()> {
    set(&mut cfg.metrics.recall_ks, a.ks.clone());
    let sel = select(cfg, &a.store, Side::Test)?;
    log_run("eval recall", cfg, None);
    let path = a.texts.clone().unwrap_or_else(|| sel.dir.join(TEXTS_FILE));
    let mut texts = load_texts(&path, &sel.rows)?;
    let view = sel.view();
    let ks = &cfg.metrics.recall_ks;
    let report = if let Some(p) = &a.transform.rrm {
        let rrm = load_rrm(p, &a.transform.bias_attr, view.dim())?;
        recall_at_k(&apply_rrm(&view, &rrm)?, &texts, ks)?
    } else if let Some(p) = &a.transform.mask {
        let mask = load_mask(p)?;
        for t in &mut texts.texts {
            *t = clip_clip_apply(t, &mask)?;
        }
        recall_at_k(&clip_clip_view(&view, &mask)?, &texts, ks)?
    } else {
        recall_at_k(&view, &texts, ks)?
    };
    log::info!("recall over {} captions: {:?}, mean error {:.2}", report.queries, report.recall, report.mean_error);
    Envelope::new("recall_report", cfg, report).on_split(sel.side).write(&a.out)
}

fn load_pair(paths: &[PathBuf]) -> CliResult<(Prototype, Prototype)> {
    match paths {
        [p, n] => Ok((Prototype::load(p)?, Prototype::load(n)?)),
        _ => Err(CliError::Usage("--bias-protos takes exactly two files: positive,negative".into())),
    }
}

#[derive(Serialize)]
struct CurveSummary {
    spearman: f64,
    points: usize,
}

pub fn tas_bfd(cfg: &mut RunConfig, a: EvalTasBfdArgs) -> CliResult<()> {
    set(&mut cfg.metrics.epsilons, a.epsilons.clone());
    let sel = select(cfg, &a.store, Side::Test)?;
    log_run("eval tas-bfd", cfg, None);
    let (pos, neg) = load_pair(&a.bias_protos)?;
    let targets = a.target_protos.iter().map(|p| Ok(Prototype::load(p)?)).collect::<CliResult<Vec<_>>>()?;
    let m = &cfg.metrics;
    let curve = tas_bfd_sweep(&sel.view(), &a.bias_attr, &targets, &pos, &neg, &m.epsilons, m.pairs_seed)?;
    let spearman = curve.spearman();
    log::info!("Spearman(TAS, BFD) = {spearman:.3} over {} points", curve.points.len());
    write_csv(&a.out, cfg, &curve.to_csv())?;
    let summary = CurveSummary { spearman, points: curve.points.len() };
    Envelope::new("tas_bfd_curve", cfg, summary).on_split(sel.side).write(&sidecar(&a.out))
}

#[derive(Serialize)]
struct PcaSummary {
    eigenvalues: [f64; 2],
    centroid_pos: Option<[f64; 2]>,
    centroid_neg: Option<[f64; 2]>,
    centroid_distance: Option<f64>,
    degenerate: bool,
}

pub fn pca(cfg: &mut RunConfig, a: EvalPcaArgs) -> CliResult<()> {
    let sel = select(cfg, &a.store, Side::Test)?;
    log_run("eval pca", cfg, None);
    let view = sel.view();
    let proj = match &a.rrm {
        Some(p) => {
            let rrm = load_rrm(p, &a.attr, view.dim())?;
            pca_2d(&apply_rrm(&view, &rrm)?, &a.attr)?
        }
        None => pca_2d(&view, &a.attr)?,
    };
    if proj.degenerate {
        log::warn!("covariance has rank below 2; second component is zero");
    }
    log::info!("centroid distance {:?}", proj.centroid_distance());
    write_csv(&a.out, cfg, &proj.to_csv())?;
    let summary = PcaSummary {
        eigenvalues: proj.eigenvalues,
        centroid_pos: proj.centroid_pos,
        centroid_neg: proj.centroid_neg,
        centroid_distance: proj.centroid_distance(),
        degenerate: proj.degenerate,
    };
    Envelope::new("pca", cfg, summary).on_split(sel.side).write(&sidecar(&a.out))
}

#[derive(Serialize)]
struct ZeroShot {
    words: [String; 2],
    #[serde(flatten)]
    report: ZeroShotReport,
}

pub fn zeroshot(cfg: &mut RunConfig, a: EvalZeroshotArgs) -> CliResult<()> {
    set(&mut cfg.metrics.temperature, a.temperature);
    if let Some(w) = &a.words {
        let pair: [String; 2] = w.clone().try_into().map_err(|_| CliError::Usage("--words takes exactly two words".into()))?;
        cfg.metrics.zero_shot_words = pair;
    }
    cfg.encoder.kind = encoder_id(a.encoder);
    let sel = select(cfg, &a.store, Side::Test)?;
    log_run("eval zeroshot", cfg, None);
    let vocab = load_vocab(a.vocab.as_deref(), &sel.dir)?;
    let enc = encoder(cfg, sel.store.dim(), &vocab)?;
    let words = cfg.metrics.zero_shot_words.clone();
    let q: Vec<BiasQuery> = words
        .iter()
        .map(|w| Ok(BiasQuery { word: w.clone(), embedding: enc.encode_words(&template_tokens(w))? }))
        .collect::<CliResult<_>>()?;
    let view: StoreView<'_> = sel.view();
    let pair = (q[0].embedding.as_slice(), q[1].embedding.as_slice());
    let report = match &a.rrm {
        Some(p) => {
            let rrm = load_rrm(p, &a.attr, view.dim())?;
            zero_shot_divergence(&apply_rrm(&view, &rrm)?, &a.attr, pair, cfg.metrics.temperature)?
        }
        None => zero_shot_divergence(&view, &a.attr, pair, cfg.metrics.temperature)?,
    };
    log::info!("{}/{}: divergence {:.2}", words[0], words[1], report.divergence);
    Envelope::new("zero_shot_report", cfg, ZeroShot { words, report }).on_split(sel.side).write(&a.out)
}
