use std::path::{Path, PathBuf};

use fairsim_core::apl::{train_prototype, AplHistory, Prototype, Vocabulary};
use fairsim_core::baselines::{bsce_prototype, clip_clip_rank, DimMask};
use fairsim_core::gradcheck::{check_loss, LossKind};
use fairsim_core::rrm::{train_rrm as fit_rrm, RnPrototypes, RrmHistory, TflScope};
use fairsim_core::synth;
use serde::Serialize;

use super::{bias_queries, encoder, encoder_id, load_vocab, log_run, select, side_name};
use crate::artifact::{sidecar, write_atomic, write_json, Envelope};
use crate::cli::{AplArgs, BsceArgs, ClipClipArgs, GradcheckArgs, Scope, Side, TrainRrmArgs};
use crate::config::{set, RunConfig};
use crate::error::{CliError, CliResult};

/// A prototype file: the prototype's own fields plus provenance.
#[derive(Serialize)]
struct PrototypeFile<'a> {
    #[serde(flatten)]
    prototype: &'a Prototype,
    #[serde(skip_serializing_if = "Option::is_none")]
    history: Option<&'a AplHistory>,
    split: &'static str,
    config_hash: String,
    config: &'a RunConfig,
}

fn write_prototype(path: &Path, p: &Prototype, history: Option<&AplHistory>, side: Side, cfg: &RunConfig) -> CliResult<()> {
    let file = PrototypeFile { prototype: p, history, split: side_name(side), config_hash: cfg.hash(), config: cfg };
    write_json(path, &file)
}

/// The attribute name, or the pole word of the synthetic bias attribute.
fn default_words(attribute: &str, polarity: i8, vocab: &Vocabulary) -> Vec<String> {
    let word = match (attribute, polarity) {
        (synth::BIAS_ATTRIBUTE, 1) if vocab.get(attribute).is_err() => synth::BIAS_POSITIVE_TOKEN,
        (synth::BIAS_ATTRIBUTE, _) if vocab.get(attribute).is_err() => synth::BIAS_NEGATIVE_TOKEN,
        _ => attribute,
    };
    vec![word.to_string()]
}

pub fn apl(cfg: &mut RunConfig, a: AplArgs) -> CliResult<()> {
    let c = &mut cfg.apl;
    set(&mut c.n_prefix, a.prefix_len);
    set(&mut c.epochs, a.epochs);
    set(&mut c.lr, a.lr);
    set(&mut c.seed, a.seed);
    if a.batch.is_some() {
        c.batch = a.batch;
    }
    set(&mut cfg.encoder.kind, a.encoder.map(encoder_id));
    set(&mut cfg.encoder.seed, a.encoder_seed);
    if !matches!(a.polarity, 1 | -1) {
        return Err(CliError::Usage("--polarity must be 1 or -1".into()));
    }
    let sel = select(cfg, &a.store, Side::Train)?;
    log_run("apl", cfg, Some(cfg.apl.seed));
    let vocab = load_vocab(a.vocab.as_deref(), &sel.dir)?;
    let enc = encoder(cfg, sel.store.dim(), &vocab)?;
    let words = a.words.clone().unwrap_or_else(|| default_words(&a.attribute, a.polarity, &vocab));
    let view = sel.view();
    let (proto, history) = train_prototype(&view, &a.attribute, a.polarity, &words, &cfg.apl, enc.as_ref())?;
    log::info!(
        "{} ({:+}): train accuracy {:.3}, loss {:.4} -> {:.4}",
        a.attribute,
        a.polarity,
        proto.accuracy(&view)?,
        history.epoch_loss.first().copied().unwrap_or(f64::NAN),
        history.epoch_loss.last().copied().unwrap_or(f64::NAN)
    );
    write_prototype(&a.out, &proto, Some(&history), sel.side, cfg)
}

fn load_prototypes(paths: &[PathBuf]) -> CliResult<Vec<Prototype>> {
    paths.iter().map(|p| Ok(Prototype::load(p)?)).collect()
}

#[derive(Serialize)]
struct RrmSummary<'a> {
    bias_attribute: &'a str,
    dim: usize,
    trained_epochs: usize,
    history: &'a RrmHistory,
}

pub fn train_rrm(cfg: &mut RunConfig, a: TrainRrmArgs) -> CliResult<()> {
    let c = &mut cfg.rrm;
    set(&mut c.lambda, a.lambda);
    set(&mut c.lr, a.lr);
    set(&mut c.max_epochs, a.max_epochs);
    set(&mut c.batch_pairs, a.batch_pairs);
    set(&mut c.early_stop.k, a.early_stop_k);
    set(&mut c.early_stop.patience, a.patience);
    set(&mut c.seed, a.seed);
    set(
        &mut c.tfl_scope,
        a.tfl_scope.map(|s| match s {
            Scope::All => TflScope::All,
            Scope::Positives => TflScope::Positives,
        }),
    );
    let [pos, neg]: [PathBuf; 2] = a
        .bias_protos
        .clone()
        .try_into()
        .map_err(|_| CliError::Usage("--bias-protos takes exactly two files: positive,negative".into()))?;
    let sel = select(cfg, &a.store, Side::Train)?;
    let queries = bias_queries(cfg, &a.queries, &sel)?;
    log_run("train-rrm", cfg, Some(cfg.rrm.seed));
    let test_rows = sel.rows_on(cfg, Side::Test)?;
    let test = fairsim_core::embedstore::StoreView::from_rows(&sel.store, test_rows);
    let protos = RnPrototypes {
        bias_pos: Prototype::load(&pos)?,
        bias_neg: Prototype::load(&neg)?,
        targets: load_prototypes(&a.target_protos)?,
    };
    let trained = fit_rrm(&sel.view(), &test, &a.bias_attr, &protos, &queries, &cfg.rrm)?;
    let h = &trained.history;
    log::info!(
        "best epoch {} of {}: test Bias@{} {:.4} -> {:.4}",
        h.best_epoch,
        h.epoch_loss.len(),
        cfg.rrm.early_stop.k,
        h.epoch_metric[0],
        h.epoch_metric[h.best_epoch]
    );
    write_atomic(&a.out, &trained.rrm.to_frrm())?;
    let summary = RrmSummary {
        bias_attribute: &a.bias_attr,
        dim: trained.rrm.dim,
        trained_epochs: trained.rrm.trained_epochs,
        history: h,
    };
    Envelope::new("rrm", cfg, summary).on_split(sel.side).write(&sidecar(&a.out))
}

pub fn clip_clip(cfg: &mut RunConfig, a: ClipClipArgs) -> CliResult<()> {
    let sel = select(cfg, &a.store, Side::Train)?;
    log_run("baseline clip-clip", cfg, None);
    let scores = clip_clip_rank(&sel.view(), &a.bias_attr)?;
    let mask = DimMask::top(scores, a.m)?;
    log::info!("dropping {} of {} dims: {:?}", a.m, mask.dim, mask.dropped);
    Envelope::new("clip_clip_mask", cfg, mask).on_split(sel.side).write(&a.out)
}

pub fn bsce(cfg: &mut RunConfig, a: BsceArgs) -> CliResult<()> {
    if !matches!(a.polarity, 1 | -1) {
        return Err(CliError::Usage("--polarity must be 1 or -1".into()));
    }
    let sel = select(cfg, &a.store, Side::Train)?;
    log_run("baseline bsce", cfg, None);
    let proto = bsce_prototype(&sel.view(), &a.attr, a.polarity)?;
    log::info!("{}: train accuracy {:.3}", a.attr, proto.accuracy(&sel.view())?);
    write_prototype(&a.out, &proto, None, sel.side, cfg)
}

pub fn gradcheck(a: GradcheckArgs) -> CliResult<()> {
    let kind: LossKind = a.loss.parse().map_err(|e: fairsim_core::Error| CliError::Usage(e.to_string()))?;
    log::info!("gradcheck {}: dim {}, seed {}", kind.name(), a.dim, a.seed);
    let report = check_loss(kind, a.dim, a.seed, a.step, a.tol)?;
    match &a.out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    if !report.passed {
        return Err(CliError::GradCheckFailed(format!("max relative error {:.3e} > {:.1e}", report.max_rel_err, a.tol)));
    }
    Ok(())
}
