//! Dataset assembly: directory corpora, synthetic corpora, and the noisy
//! counterparts used for evaluation (with an optional on-disk cache).

use anyhow::{bail, Context, Result};
use std::path::{Path, PathBuf};

use jicd_core::noise::NoiseSpec;
use jicd_core::synthetic;
use jicd_core::ImageBuffer;

use crate::config::DataSection;
use crate::pngio::{load_png, save_png};

/// A named list of clean images with optional pre-made noisy counterparts.
pub struct Dataset {
    pub label: String,
    pub names: Vec<String>,
    pub clean: Vec<ImageBuffer>,
    pub noisy: Vec<Option<ImageBuffer>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }
}

fn png_paths_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot read dataset directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads the dataset the config describes: a PNG directory when
/// `clean_dir` is set, otherwise the deterministic synthetic corpus.
pub fn load_dataset(data: &DataSection) -> Result<Dataset> {
    match &data.clean_dir {
        Some(dir) => {
            let dir = Path::new(dir);
            let paths = png_paths_sorted(dir)?;
            if paths.is_empty() {
                bail!("no .png files under {}", dir.display());
            }
            let mut names = Vec::new();
            let mut clean = Vec::new();
            let mut noisy = Vec::new();
            for p in &paths {
                names.push(p.file_stem().unwrap().to_string_lossy().into_owned());
                clean.push(load_png(p)?);
                noisy.push(None);
            }
            if let Some(ndir) = &data.noisy_dir {
                let ndir = Path::new(ndir);
                for (k, p) in paths.iter().enumerate() {
                    let candidate = ndir.join(p.file_name().unwrap());
                    if candidate.exists() {
                        noisy[k] = Some(load_png(&candidate)?);
                    }
                }
            }
            Ok(Dataset { label: data.dataset_label.clone(), names, clean, noisy })
        }
        None => {
            let clean = synthetic::generate_corpus(
                data.synthetic_count,
                data.synthetic_height,
                data.synthetic_width,
                data.synthetic_seed,
            );
            let names = (0..clean.len()).map(|i| format!("synthetic_{i:04}")).collect();
            let noisy = vec![None; clean.len()];
            Ok(Dataset { label: data.dataset_label.clone(), names, clean, noisy })
        }
    }
}

/// Resolves the noisy side of every pair, synthesizing (and caching under
/// `$JICD_CACHE` when set) where the dataset has no stored noisy image.
pub fn noisy_pairs(ds: &Dataset, spec: &NoiseSpec) -> Result<Vec<(ImageBuffer, ImageBuffer)>> {
    let cache_dir = std::env::var_os("JICD_CACHE").map(PathBuf::from);
    let mut pairs = Vec::with_capacity(ds.len());
    for (idx, clean) in ds.clean.iter().enumerate() {
        let noisy = match &ds.noisy[idx] {
            Some(n) => n.clone(),
            None => synthesize_cached(ds, spec, idx, clean, cache_dir.as_deref())?,
        };
        pairs.push((clean.clone(), noisy));
    }
    Ok(pairs)
}

fn synthesize_cached(
    ds: &Dataset,
    spec: &NoiseSpec,
    idx: usize,
    clean: &ImageBuffer,
    cache_dir: Option<&Path>,
) -> Result<ImageBuffer> {
    let Some(dir) = cache_dir else {
        return Ok(spec.synthesize(clean, idx as u64)?);
    };
    let key = format!(
        "{}-{}-{:?}-{}-{}x{}",
        ds.label, ds.names[idx], spec.kind, spec.seed, clean.height(), clean.width()
    );
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in key.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    let path = dir.join(format!("noisy-{hash:016x}.png"));
    if path.exists() {
        return load_png(&path);
    }
    let noisy = spec.synthesize(clean, idx as u64)?;
    std::fs::create_dir_all(dir)?;
    save_png(&path, &noisy)?;
    Ok(noisy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DataSection;

    fn small_synthetic() -> DataSection {
        DataSection {
            synthetic_count: 3,
            synthetic_height: 32,
            synthetic_width: 32,
            ..DataSection::default()
        }
    }

    #[test]
    fn synthetic_dataset_is_deterministic() {
        let a = load_dataset(&small_synthetic()).unwrap();
        let b = load_dataset(&small_synthetic()).unwrap();
        assert_eq!(a.clean, b.clean);
        assert_eq!(a.names, b.names);
    }

    #[test]
    fn directory_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..2 {
            let img = synthetic::generate_image(24, 24, 100 + i);
            save_png(&dir.path().join(format!("img_{i}.png")), &img).unwrap();
        }
        let data = DataSection {
            clean_dir: Some(dir.path().to_string_lossy().into_owned()),
            dataset_label: "tiny".into(),
            ..DataSection::default()
        };
        let ds = load_dataset(&data).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.label, "tiny");
    }

    #[test]
    fn noisy_cache_is_reused() {
        let cache = tempfile::tempdir().unwrap();
        // SAFETY: tests in this crate run single-threaded with respect to
        // this env var; it is set before any concurrent access.
        unsafe { std::env::set_var("JICD_CACHE", cache.path()) };
        let ds = load_dataset(&small_synthetic()).unwrap();
        let spec = NoiseSpec::awgn(25.0, 7);
        let a = noisy_pairs(&ds, &spec).unwrap();
        let files = std::fs::read_dir(cache.path()).unwrap().count();
        assert_eq!(files, 3);
        let b = noisy_pairs(&ds, &spec).unwrap();
        assert_eq!(a.len(), b.len());
        for ((_, na), (_, nb)) in a.iter().zip(&b) {
            assert_eq!(na, nb);
        }
        unsafe { std::env::remove_var("JICD_CACHE") };
    }
}
