mod data;
mod eval;
mod report;
mod train;

use std::path::{Path, PathBuf};

use fairsim_core::apl::{build_encoder, EncoderId, TextEncoder, Vocabulary};
use fairsim_core::baselines::DimMask;
use fairsim_core::embedstore::{split, EmbeddingStore, SplitSpec, StoreView};
use fairsim_core::metrics::{load_bias_queries, BiasQuery};
use fairsim_core::rrm::Rrm;
use fairsim_core::synth::{template_tokens, BIAS_WORD_PAIRS};

use crate::artifact::{read_envelope, sidecar};
use crate::cli::{BaselineCommand, Cli, Command, EncoderKind, EvalCommand, QueryArgs, Side, StoreArgs};
use crate::config::{set, RunConfig};
use crate::error::{CliError, CliResult};

pub const VOCAB_FILE: &str = "vocab.json";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const TEXTS_FILE: &str = "texts.jsonl";
pub const TRUTH_FILE: &str = "truth.json";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(a) => data::ingest(&cfg, a),
        Command::Synth(a) => data::synth(&mut cfg, a),
        Command::Retrieve(a) => data::retrieve(&mut cfg, a),
        Command::Apl(a) => train::apl(&mut cfg, a),
        Command::TrainRrm(a) => train::train_rrm(&mut cfg, a),
        Command::Baseline(BaselineCommand::ClipClip(a)) => train::clip_clip(&mut cfg, a),
        Command::Baseline(BaselineCommand::Bsce(a)) => train::bsce(&mut cfg, a),
        Command::Gradcheck(a) => train::gradcheck(a),
        Command::Eval(EvalCommand::Bias(a)) => eval::bias(&mut cfg, a),
        Command::Eval(EvalCommand::Recall(a)) => eval::recall(&mut cfg, a),
        Command::Eval(EvalCommand::TasBfd(a)) => eval::tas_bfd(&mut cfg, a),
        Command::Eval(EvalCommand::Pca(a)) => eval::pca(&mut cfg, a),
        Command::Eval(EvalCommand::Zeroshot(a)) => eval::zeroshot(&mut cfg, a),
        Command::Report(a) => report::report(a),
    }
}

pub fn side_name(side: Side) -> &'static str {
    match side {
        Side::Train => "train",
        Side::Test => "test",
        Side::All => "all",
    }
}

pub fn encoder_id(kind: EncoderKind) -> EncoderId {
    match kind {
        EncoderKind::Toy => EncoderId::Toy,
        EncoderKind::Bypass => EncoderId::Bypass,
    }
}

/// A loaded store plus the rows selected by `--split`.
pub struct Selected {
    pub dir: PathBuf,
    pub store: EmbeddingStore,
    pub side: Side,
    pub rows: Vec<usize>,
}

impl Selected {
    pub fn view(&self) -> StoreView<'_> {
        StoreView::from_rows(&self.store, self.rows.clone())
    }

    pub fn rows_on(&self, cfg: &RunConfig, side: Side) -> CliResult<Vec<usize>> {
        rows_for(&self.store, cfg, side)
    }
}

fn rows_for(store: &EmbeddingStore, cfg: &RunConfig, side: Side) -> CliResult<Vec<usize>> {
    if side == Side::All {
        return Ok((0..store.len()).collect());
    }
    let s = split(store, SplitSpec { train_fraction: cfg.split.train_fraction, seed: cfg.split.seed })?;
    Ok(if side == Side::Train { s.train_rows() } else { s.test_rows() })
}

/// Merges the split flags into `cfg` and loads the selected rows.
pub fn select(cfg: &mut RunConfig, args: &StoreArgs, default: Side) -> CliResult<Selected> {
    set(&mut cfg.split.train_fraction, args.train_fraction);
    set(&mut cfg.split.seed, args.split_seed);
    if !args.store.join(MANIFEST_FILE).is_file() {
        return Err(CliError::Usage(format!("{} is not a store directory", args.store.display())));
    }
    let store = EmbeddingStore::load_dir(&args.store)?;
    let side = args.split.unwrap_or(default);
    let rows = rows_for(&store, cfg, side)?;
    Ok(Selected { dir: args.store.clone(), store, side, rows })
}

pub fn load_vocab(explicit: Option<&Path>, store_dir: &Path) -> CliResult<Vocabulary> {
    let path = explicit.map(Path::to_path_buf).unwrap_or_else(|| store_dir.join(VOCAB_FILE));
    if !path.exists() {
        return Err(CliError::Usage(format!("no vocabulary at {}; pass --vocab", path.display())));
    }
    Ok(Vocabulary::load(&path)?)
}

pub fn encoder(cfg: &RunConfig, dim: usize, vocab: &Vocabulary) -> CliResult<Box<dyn TextEncoder>> {
    Ok(build_encoder(cfg.encoder.kind, dim, cfg.encoder.seed, vocab)?)
}

fn default_bias_words() -> Vec<String> {
    BIAS_WORD_PAIRS.iter().flat_map(|(a, b)| [a.to_string(), b.to_string()]).collect()
}

/// Bias-word queries from a JSONL file, a template encoding, or the store's own query file.
pub fn bias_queries(cfg: &mut RunConfig, q: &QueryArgs, sel: &Selected) -> CliResult<Vec<BiasQuery>> {
    if let Some(path) = &q.bias_words {
        return Ok(load_bias_queries(path)?);
    }
    if let Some(kind) = q.template_from_encoder {
        cfg.encoder.kind = encoder_id(kind);
        let vocab = load_vocab(q.vocab.as_deref(), &sel.dir)?;
        let enc = encoder(cfg, sel.store.dim(), &vocab)?;
        let words = q.words.clone().unwrap_or_else(default_bias_words);
        return words
            .into_iter()
            .map(|word| {
                let embedding = enc.encode_words(&template_tokens(&word))?;
                Ok(BiasQuery { word, embedding })
            })
            .collect();
    }
    let path = sel.dir.join(QUERIES_FILE);
    if !path.exists() {
        return Err(CliError::Usage("no bias-word queries: pass --bias-words or --template-from-encoder".into()));
    }
    Ok(load_bias_queries(&path)?)
}

#[derive(serde::Deserialize)]
struct RrmSidecar {
    bias_attribute: String,
}

/// Loads an FRRM, checking its sidecar's attribute when one exists.
pub fn load_rrm(path: &Path, bias_attr: &str, dim: usize) -> CliResult<Rrm> {
    let meta = sidecar(path);
    if meta.is_file() {
        let trained = read_envelope::<RrmSidecar>(&meta, "rrm")?.payload.bias_attribute;
        if trained != bias_attr {
            return Err(CliError::Usage(format!(
                "{} was trained for {trained:?}, not {bias_attr:?}",
                path.display()
            )));
        }
    }
    let rrm = Rrm::load(path, bias_attr)?;
    if rrm.dim != dim {
        return Err(fairsim_core::Error::DimMismatch { expected: dim, got: rrm.dim }.into());
    }
    Ok(rrm)
}

pub fn load_mask(path: &Path) -> CliResult<DimMask> {
    let mask = read_envelope::<DimMask>(path, "clip_clip_mask")?.payload;
    mask.validate()?;
    Ok(mask)
}

pub fn log_run(command: &str, cfg: &RunConfig, seed: Option<u64>) {
    match seed {
        Some(s) => log::info!("{command}: seed {s}, config {}", cfg.hash()),
        None => log::info!("{command}: config {}", cfg.hash()),
    }
}
