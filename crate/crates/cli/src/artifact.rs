//! Output files: atomic writes and the config envelope every artifact carries.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// A JSON artifact: the payload plus the configuration that produced it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub kind: String,
    /// Rows the artifact was computed on, for store-derived outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub config_hash: String,
    pub config: RunConfig,
    pub payload: T,
}

impl<T: Serialize> Envelope<T> {
    pub fn new(kind: &str, config: &RunConfig, payload: T) -> Self {
        Self { kind: kind.to_string(), split: None, config_hash: config.hash(), config: config.clone(), payload }
    }

    pub fn on_split(mut self, side: crate::cli::Side) -> Self {
        self.split = Some(crate::cmd::side_name(side).to_string());
        self
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_json(path, self)
    }
}

pub fn read_envelope<T: DeserializeOwned>(path: &Path, kind: &str) -> CliResult<Envelope<T>> {
    let text = fs::read_to_string(path)?;
    let env: Envelope<T> = serde_json::from_str(&text)?;
    if env.kind != kind {
        return Err(CliError::Usage(format!("{} holds a {:?} artifact, expected {kind:?}", path.display(), env.kind)));
    }
    Ok(env)
}

/// Writes through a sibling temp file and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| CliError::Usage(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// CSV with the config hash on a leading comment line.
pub fn write_csv(path: &Path, config: &RunConfig, body: &str) -> CliResult<()> {
    write_atomic(path, format!("# config_hash={}\n{body}", config.hash()).as_bytes())
}

/// `<path>.meta.json`: the envelope for artifacts that cannot embed one.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}
