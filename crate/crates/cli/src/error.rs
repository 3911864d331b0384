use std::path::PathBuf;

use denseformer::TensorError;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("malformed volume file: {0}")]
    Format(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(
        "non-finite loss at epoch {epoch}, batch {batch} (cases {cases:?}, seed {seed}); diagnostics in {dump}: {detail}"
    )]
    NonFiniteLoss { epoch: usize, batch: usize, cases: Vec<String>, seed: u64, dump: PathBuf, detail: String },

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => std::path::Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(HarnessError::io(dir))?;
    tmp.write_all(bytes).map_err(HarnessError::io(tmp.path()))?;
    tmp.as_file().sync_all().map_err(HarnessError::io(tmp.path()))?;
    tmp.persist(path).map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}
