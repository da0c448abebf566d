//! `jicd train`: rate-distortion training with per-epoch checkpoints and a
//! line-delimited training log. Resuming from a checkpoint reproduces the
//! uninterrupted run exactly (all randomness is keyed by the global step).

use anyhow::{bail, Context, Result};
use serde::Serialize;
use std::path::PathBuf;

use jicd_core::checkpoint::{Checkpoint, TrainSnapshot};
use jicd_core::model::init_params;
use jicd_core::train::{steps_per_epoch, train_step, TrainState};

use crate::config::load_config;
use crate::dataset::load_dataset;
use crate::rundir::{log_json, RunDir};

use super::{load_checkpoint, save_checkpoint, seed_overrides};

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint written by a previous run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Serialize)]
struct TrainLogRecord {
    step: u64,
    epoch: u64,
    total: f64,
    rate_side_bits: f64,
    rate_base_bits: f64,
    rate_enh_bits: f64,
    mse_denoise: f64,
    mse_noisy: f64,
    bpp: f64,
    lr: f64,
    sigma: f64,
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let mut overrides = seed_overrides(args.seed);
    overrides.extend(args.overrides.iter().cloned());
    let (cfg, resolved) = load_config(args.config.as_deref(), &overrides)?;
    let model_cfg = cfg.model.to_model_config()?;
    let noise = cfg.noise.to_noise_spec()?;
    let tc = cfg.train.to_train_config(noise);
    tc.validate().map_err(|e| anyhow::anyhow!("invalid train config: {e}"))?;

    let ds = load_dataset(&cfg.data)?;
    if ds.is_empty() {
        bail!("training dataset is empty");
    }
    for img in &ds.clean {
        if img.height() < tc.crop || img.width() < tc.crop {
            bail!(
                "image smaller than the {} crop: {}x{}",
                tc.crop,
                img.height(),
                img.width()
            );
        }
    }

    let run = RunDir::create(&args.out, &resolved, tc.seed)?;
    let mut log = run.log_writer("train.jsonl")?;

    let (mut params, mut state) = match &args.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            if ck.config != model_cfg {
                bail!("checkpoint model config does not match the current config");
            }
            let snap = ck
                .train
                .clone()
                .context("checkpoint has no training state; cannot resume")?;
            if snap.lambda != tc.lambda || snap.seed != tc.seed {
                bail!(
                    "checkpoint was trained with lambda={} seed={}, config says lambda={} seed={}",
                    snap.lambda,
                    snap.seed,
                    tc.lambda,
                    tc.seed
                );
            }
            (ck.params, snap.state)
        }
        None => {
            let params = init_params::<f32>(&model_cfg, tc.seed);
            let state = TrainState::new(&params, &tc);
            (params, state)
        }
    };

    let spe = steps_per_epoch(ds.len(), tc.batch);
    let mut last_loss = f64::NAN;
    while (state.epoch as usize) < tc.epochs {
        let mut epoch_sum = 0.0;
        for _ in 0..spe {
            let bd = train_step(&mut params, &mut state, &model_cfg, &tc, &ds.clean)
                .map_err(|e| anyhow::anyhow!("training aborted: {e}"))?;
            epoch_sum += bd.total;
            last_loss = bd.total;
            log_json(
                &mut log,
                &TrainLogRecord {
                    step: state.step,
                    epoch: state.epoch,
                    total: bd.total,
                    rate_side_bits: bd.rate_side_bits,
                    rate_base_bits: bd.rate_base_bits,
                    rate_enh_bits: bd.rate_enh_bits,
                    mse_denoise: bd.mse_denoise,
                    mse_noisy: bd.mse_noisy,
                    bpp: bd.bpp(),
                    lr: state.lr,
                    sigma: bd.sigma,
                },
            )?;
        }
        let epoch_mean = epoch_sum / spe as f64;
        if state.schedule.observe(epoch_mean) {
            state.lr *= state.schedule.factor;
        }
        state.epoch += 1;
        let due = state.epoch as usize % cfg.train.checkpoint_every.max(1) == 0
            || state.epoch as usize == tc.epochs;
        if due {
            let ck = Checkpoint {
                config: model_cfg.clone(),
                params: params.clone(),
                train: Some(TrainSnapshot {
                    lambda: tc.lambda,
                    task_weight: tc.task_weight,
                    seed: tc.seed,
                    state: state.clone(),
                }),
            };
            save_checkpoint(&run.artifact(&format!("ckpt-epoch-{:04}.jicdckpt", state.epoch)), &ck)?;
            save_checkpoint(&run.artifact("latest.jicdckpt"), &ck)?;
        }
    }
    use std::io::Write;
    log.flush()?;

    println!(
        "{}",
        serde_json::to_string(&serde_json::json!({
            "epochs": state.epoch,
            "steps": state.step,
            "final_loss": last_loss,
            "lr": state.lr,
            "checkpoint": run.artifact("latest.jicdckpt").display().to_string(),
        }))?
    );
    Ok(())
}
