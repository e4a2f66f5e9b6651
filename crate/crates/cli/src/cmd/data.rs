use std::fs;

use fairsim_core::baselines::{clip_clip_apply, clip_clip_view};
use fairsim_core::embedstore::femb::decode_raw_f32;
use fairsim_core::embedstore::{EmbeddingStore, VectorSource, EMBEDDINGS_FILE, META_FILE};
use fairsim_core::metrics::bias_queries_to_jsonl;
use fairsim_core::rrm::apply_rrm;
use fairsim_core::simcore::{similarity_set, top_k};
use fairsim_core::synth::generate;
use serde::Serialize;

use super::{load_mask, load_rrm, log_run, select, MANIFEST_FILE, QUERIES_FILE, TEXTS_FILE, TRUTH_FILE, VOCAB_FILE};
use crate::artifact::{write_atomic, write_json, Envelope};
use crate::cli::{IngestArgs, RetrieveArgs, Side, SynthArgs};
use crate::config::{set, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct StoreSummary {
    count: usize,
    dim: usize,
    attributes: Vec<String>,
}

fn write_store(dir: &std::path::Path, store: &EmbeddingStore) -> CliResult<()> {
    let (bytes, meta) = store.to_parts();
    write_atomic(&dir.join(EMBEDDINGS_FILE), &bytes)?;
    write_atomic(&dir.join(META_FILE), meta.as_bytes())
}

fn summary(store: &EmbeddingStore) -> StoreSummary {
    StoreSummary { count: store.len(), dim: store.dim(), attributes: store.attribute_names().map(String::from).collect() }
}

pub fn ingest(cfg: &RunConfig, a: IngestArgs) -> CliResult<()> {
    log_run("ingest", cfg, None);
    let store = EmbeddingStore::ingest(&a.embeddings, &a.meta)?;
    write_store(&a.out, &store)?;
    // manifest last: its presence marks a complete store
    Envelope::new("store", cfg, summary(&store)).write(&a.out.join(MANIFEST_FILE))?;
    log::info!("ingested {} rows of dim {}", store.len(), store.dim());
    Ok(())
}

#[derive(Serialize)]
struct TextLine<'a> {
    row: usize,
    embedding: &'a [f64],
}

pub fn synth(cfg: &mut RunConfig, a: SynthArgs) -> CliResult<()> {
    let s = &mut cfg.synth;
    set(&mut s.n, a.n);
    set(&mut s.dim, a.dim);
    set(&mut s.seed, a.seed);
    set(&mut s.noise_sigma, a.noise_sigma);
    set(&mut s.bias_strength, a.bias_strength);
    set(&mut s.text_noise, a.text_noise);
    set(&mut s.bias_positive_fraction, a.bias_positive_fraction);
    log_run("synth", cfg, Some(cfg.synth.seed));
    let data = generate(&cfg.synth)?;
    fs::create_dir_all(&a.out)?;
    write_store(&a.out, &data.store)?;
    write_atomic(&a.out.join(QUERIES_FILE), bias_queries_to_jsonl(&data.bias_queries)?.as_bytes())?;
    write_json(&a.out.join(VOCAB_FILE), &data.vocab)?;
    let mut texts = String::new();
    for (row, t) in data.texts.texts.iter().enumerate() {
        texts.push_str(&serde_json::to_string(&TextLine { row, embedding: t })?);
        texts.push('\n');
    }
    write_atomic(&a.out.join(TEXTS_FILE), texts.as_bytes())?;
    write_json(&a.out.join(TRUTH_FILE), &data.truth)?;
    Envelope::new("store", cfg, summary(&data.store)).write(&a.out.join(MANIFEST_FILE))?;
    log::info!("wrote {} synthetic rows to {}", data.store.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct Hit<'a> {
    row: usize,
    id: &'a str,
    score: f64,
}

#[derive(Serialize)]
struct Retrieval<'a> {
    k: usize,
    source: fairsim_core::embedstore::SourceTag,
    ranked: Vec<Hit<'a>>,
}

pub fn retrieve(cfg: &mut RunConfig, a: RetrieveArgs) -> CliResult<()> {
    set(&mut cfg.metrics.k, a.k);
    let sel = select(cfg, &a.store, Side::All)?;
    log_run("retrieve", cfg, None);
    let mut query: Vec<f64> = decode_raw_f32(&fs::read(&a.query_embedding)?)?.into_iter().map(f64::from).collect();
    if query.len() != sel.store.dim() {
        return Err(fairsim_core::Error::DimMismatch { expected: sel.store.dim(), got: query.len() }.into());
    }
    let view = sel.view();
    let set = if let Some(path) = &a.transform.rrm {
        let rrm = load_rrm(path, &a.transform.bias_attr, sel.store.dim())?;
        similarity_set(&apply_rrm(&view, &rrm)?, &query)?
    } else if let Some(path) = &a.transform.mask {
        let mask = load_mask(path)?;
        query = clip_clip_apply(&query, &mask)?;
        similarity_set(&clip_clip_view(&view, &mask)?, &query)?
    } else {
        similarity_set(&view, &query)?
    };
    let k = cfg.metrics.k;
    if k == 0 {
        return Err(CliError::Usage("--k must be positive".into()));
    }
    let result = top_k(&set, k);
    let ranked = result
        .ranked
        .iter()
        .map(|&(i, score)| Hit { row: sel.rows[i], id: view.id(i), score })
        .collect();
    let payload = Retrieval { k, source: set.source.clone(), ranked };
    Envelope::new("retrieval", cfg, payload).on_split(sel.side).write(&a.out)?;
    log::info!("ranked {} rows, kept top {}", view.len(), k.min(view.len()));
    Ok(())
}
