//! Run directories: every long-form subcommand writes its resolved config,
//! logs and artifacts under one directory so results are auditable and
//! reproducible from the directory alone.

use anyhow::{Context, Result};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path, resolved_config: &str, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(root.join("logs"))?;
        std::fs::create_dir_all(root.join("artifacts"))?;
        let mut text = String::from(resolved_config);
        text.push_str(&format!("\n# effective seed\n# seed = {seed}\n"));
        std::fs::write(root.join("config.resolved.toml"), text)
            .with_context(|| format!("cannot write into {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.root.join("artifacts").join(name)
    }

    pub fn log_writer(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.root.join("logs").join(name);
        Ok(BufWriter::new(File::create(&path).with_context(|| {
            format!("cannot create log {}", path.display())
        })?))
    }
}

/// Appends one JSON record as a line.
pub fn log_json<W: Write, T: serde::Serialize>(w: &mut W, record: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    writeln!(w)?;
    Ok(())
}
