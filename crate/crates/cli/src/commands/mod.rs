//! Subcommand implementations.

pub mod bdrate;
pub mod decode;
pub mod encode;
pub mod evalcmd;
pub mod noisecmd;
pub mod plot;
pub mod traincmd;

use anyhow::{Context, Result};
use std::path::{Path, PathBuf};

use jicd_core::checkpoint::Checkpoint;

/// A required input file is absent. The binary maps this to exit code 2.
#[derive(Debug)]
pub struct MissingFile(pub PathBuf);

impl std::fmt::Display for MissingFile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "missing file: {}", self.0.display())
    }
}

impl std::error::Error for MissingFile {}

pub fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(MissingFile(path.to_path_buf()).into());
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint<f32>> {
    require_file(path)?;
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    Checkpoint::parse(&bytes).with_context(|| format!("invalid checkpoint {}", path.display()))
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint<f32>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, ck.serialize())
        .with_context(|| format!("cannot write checkpoint {}", path.display()))
}

/// `--seed N` rewrites every seed in the config, as dotted overrides.
pub fn seed_overrides(seed: Option<u64>) -> Vec<String> {
    match seed {
        Some(s) => vec![
            format!("train.seed={s}"),
            format!("noise.seed={s}"),
            format!("data.synthetic_seed={s}"),
        ],
        None => Vec::new(),
    }
}
