//! `jicd noise`: materialize a noisy corpus from a clean corpus.

use anyhow::Result;
use serde::Serialize;
use std::path::PathBuf;

use jicd_core::noise::estimate_sigma;

use crate::config::load_config;
use crate::dataset::load_dataset;
use crate::pngio::save_png;
use crate::rundir::{log_json, RunDir};

use super::seed_overrides;

#[derive(Debug, clap::Args)]
pub struct NoiseArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Repeatable dotted-key override, e.g. `noise.sigma=25`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct NoiseManifestEntry {
    name: String,
    clean: String,
    noisy: String,
    estimated_sigma: f64,
    degenerate_estimate: bool,
}

pub fn run(args: &NoiseArgs) -> Result<()> {
    let mut overrides = seed_overrides(args.seed);
    overrides.extend(args.overrides.iter().cloned());
    let (cfg, resolved) = load_config(args.config.as_deref(), &overrides)?;
    let spec = cfg.noise.to_noise_spec()?;
    let ds = load_dataset(&cfg.data)?;
    let run = RunDir::create(&args.out, &resolved, spec.seed)?;
    let mut manifest = run.log_writer("noise_manifest.jsonl")?;
    for (idx, clean) in ds.clean.iter().enumerate() {
        let noisy = spec.synthesize(clean, idx as u64)?;
        let name = &ds.names[idx];
        let clean_path = run.artifact(&format!("clean/{name}.png"));
        let noisy_path = run.artifact(&format!("noisy/{name}.png"));
        save_png(&clean_path, clean)?;
        save_png(&noisy_path, &noisy)?;
        let est = estimate_sigma(&noisy, clean)?;
        log_json(
            &mut manifest,
            &NoiseManifestEntry {
                name: name.clone(),
                clean: clean_path.display().to_string(),
                noisy: noisy_path.display().to_string(),
                estimated_sigma: est.sigma,
                degenerate_estimate: est.degenerate,
            },
        )?;
    }
    println!(
        "{}",
        serde_json::to_string(&serde_json::json!({
            "images": ds.len(),
            "out": run.root().display().to_string(),
        }))?
    );
    Ok(())
}
