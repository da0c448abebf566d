//! `jicd eval`: run checkpoints over a dataset and emit rate-PSNR curve
//! files for both decode targets.

use anyhow::{bail, Result};
use serde::Serialize;
use std::path::PathBuf;

use jicd_core::rd::evaluate_model_on_images;

use crate::config::load_config;
use crate::curves::{write_curve_file, CurveRecord};
use crate::dataset::{load_dataset, noisy_pairs};
use crate::rundir::{log_json, RunDir};

use super::{load_checkpoint, seed_overrides};

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoints to evaluate (one RD point per task per checkpoint).
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Serialize)]
struct PerImageRecord {
    model_id: String,
    image: String,
    base_bpp: f64,
    full_bpp: f64,
    psnr_denoise: f64,
    psnr_noisy_recon: f64,
    psnr_noisy_vs_clean: f64,
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let mut overrides = seed_overrides(args.seed);
    overrides.extend(args.overrides.iter().cloned());
    let (cfg, resolved) = load_config(args.config.as_deref(), &overrides)?;
    let spec = cfg.noise.to_noise_spec()?;
    let ds = load_dataset(&cfg.data)?;
    if ds.is_empty() {
        bail!("evaluation dataset is empty");
    }
    let pairs = noisy_pairs(&ds, &spec)?;
    let run = RunDir::create(&args.out, &resolved, spec.seed)?;

    let mut records = Vec::new();
    let mut detail_log = run.log_writer("per_image.jsonl")?;
    for ck_path in &args.checkpoints {
        let ck = load_checkpoint(ck_path)?;
        let model_id = ck.model_id();
        let lambda = ck.train.as_ref().map(|t| t.lambda);
        let (denoise, recon, details) =
            evaluate_model_on_images(&ck.params, &ck.config, model_id, lambda, &pairs).map_err(
                |e| match &e {
                    jicd_core::rd::RdError::ImageFailed { index, source } => anyhow::anyhow!(
                        "evaluating {} on image {:?}: {source}",
                        ck_path.display(),
                        ds.names[*index]
                    ),
                    _ => anyhow::anyhow!("evaluating {}: {e}", ck_path.display()),
                },
            )?;
        records.push(CurveRecord::from_point(&ds.label, &denoise));
        records.push(CurveRecord::from_point(&ds.label, &recon));
        for (idx, d) in details.iter().enumerate() {
            log_json(
                &mut detail_log,
                &PerImageRecord {
                    model_id: format!("{model_id:016x}"),
                    image: ds.names[idx].clone(),
                    base_bpp: d.base_bpp,
                    full_bpp: d.full_bpp,
                    psnr_denoise: d.psnr_denoise,
                    psnr_noisy_recon: d.psnr_noisy_recon,
                    psnr_noisy_vs_clean: d.psnr_noisy_vs_clean,
                },
            )?;
        }
    }
    use std::io::Write;
    detail_log.flush()?;
    let curve_path = run.artifact("curves.jsonl");
    write_curve_file(&curve_path, &records)?;

    println!(
        "{}",
        serde_json::to_string(&serde_json::json!({
            "dataset": ds.label,
            "images": ds.len(),
            "models": args.checkpoints.len(),
            "curves": curve_path.display().to_string(),
        }))?
    );
    for r in &records {
        println!(
            "{}",
            serde_json::to_string(&serde_json::json!({
                "task": r.task, "model_id": format!("{:016x}", r.model_id),
                "lambda": r.lambda, "bpp": r.bpp, "psnr": r.psnr,
            }))?
        );
    }
    Ok(())
}
