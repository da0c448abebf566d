//! Rate-distortion training.
//!
//! The loss is `L = R/num_pixels + lambda * D` with the rate in bits from
//! both entropy models (additive-uniform quantization surrogate) and
//! `D = (1-w)*MSE(clean, denoised) + w*MSE(noisy, reconstruction)` on the
//! 8-bit pixel scale. Every stochastic choice — batch sampling, crops, the
//! noise draw, the quantization noise — is a pure function of `(seed, step)`,
//! so runs are reproducible and resume exactly.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use ndarray::{Array4, ArrayD, IxDyn};
use rand::Rng;
use thiserror::Error;

use crate::entropy::P_MIN;
use crate::graph::{mse_255_node, Graph, NodeId};
use crate::image::{ImageBuffer, ImageError};
use crate::metrics::mse_255;
use crate::model::net::{self, BoundParams};
use crate::model::{image_to_tensor, CodingLayer, ModelConfig, ModelError, ParamSet};
use crate::noise::{derive_rng, NoiseError, NoiseKind, NoiseSpec};
use crate::scalar::{c, Scalar};

/// The Lagrange multipliers of the six-model rate ladder.
pub const LAMBDA_LADDER: [f64; 6] = [0.0035, 0.0067, 0.013, 0.025, 0.0483, 0.09];

/// Task trade-off used for all trained models.
pub const DEFAULT_TASK_WEIGHT: f64 = 0.05;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

const STREAM_SAMPLER: u64 = 0xba_7c_e5;
const STREAM_QUANT_NOISE: u64 = 0x9faded;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("training loss became non-finite: {0:?}")]
    NonFiniteLoss(LossBreakdown),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("crop {crop} larger than image {h}x{w}")]
    CropLargerThanImage { crop: usize, h: usize, w: usize },
    #[error("crop {0} must be a positive multiple of 64")]
    CropNotAligned(usize),
    #[error("lambda must be positive, got {0}")]
    BadLambda(f64),
    #[error("task weight must be in [0, 1], got {0}")]
    BadTaskWeight(f64),
    #[error("rate must be non-negative, got {0}")]
    NegativeRate(f64),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    /// `w` in the distortion mix; the denoising term gets `1 - w`.
    pub task_weight: f64,
    pub crop: usize,
    pub batch: usize,
    pub epochs: usize,
    pub lr_init: f64,
    pub lr_factor: f64,
    pub plateau_patience: u32,
    pub plateau_min_rel_improvement: f64,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl TrainConfig {
    /// The published training protocol: 256-pixel crops, batch 16,
    /// 300 epochs, Adam at 1e-4 halved on plateau, `w = 0.05`.
    pub fn paper_defaults(lambda: f64, noise: NoiseSpec, seed: u64) -> Self {
        Self {
            lambda,
            task_weight: DEFAULT_TASK_WEIGHT,
            crop: 256,
            batch: 16,
            epochs: 300,
            lr_init: 1e-4,
            lr_factor: 0.5,
            plateau_patience: 10,
            plateau_min_rel_improvement: 1e-3,
            noise,
            seed,
        }
    }

    /// Desk-scale variant: 64-pixel crops.
    pub fn toy_defaults(lambda: f64, noise: NoiseSpec, seed: u64) -> Self {
        Self { crop: 64, ..Self::paper_defaults(lambda, noise, seed) }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lambda <= 0.0 {
            return Err(TrainError::BadLambda(self.lambda));
        }
        if !(0.0..=1.0).contains(&self.task_weight) {
            return Err(TrainError::BadTaskWeight(self.task_weight));
        }
        if self.crop == 0 || self.crop % 64 != 0 {
            return Err(TrainError::CropNotAligned(self.crop));
        }
        Ok(())
    }
}

/// All the parts of one training loss, reported per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub rate_side_bits: f64,
    pub rate_base_bits: f64,
    pub rate_enh_bits: f64,
    pub mse_denoise: f64,
    pub mse_noisy: f64,
    pub distortion: f64,
    pub num_pixels: usize,
    pub sigma: f64,
}

impl LossBreakdown {
    pub fn rate_total_bits(&self) -> f64 {
        self.rate_side_bits + self.rate_base_bits + self.rate_enh_bits
    }

    pub fn bpp(&self) -> f64 {
        self.rate_total_bits() / self.num_pixels as f64
    }

    /// Recomputes the total from the parts; must match `total` tightly.
    pub fn recomposed(&self, lambda: f64) -> f64 {
        self.bpp() + lambda * self.distortion
    }
}

/// Weighted two-task distortion on the 8-bit scale (evaluation path).
pub fn distortion(
    clean: &ImageBuffer,
    denoised: &ImageBuffer,
    noisy: &ImageBuffer,
    noisy_recon: &ImageBuffer,
    w: f64,
) -> Result<f64, TrainError> {
    if !(0.0..=1.0).contains(&w) {
        return Err(TrainError::BadTaskWeight(w));
    }
    let d_clean = mse_255(clean, denoised)?;
    let d_noisy = mse_255(noisy, noisy_recon)?;
    Ok((1.0 - w) * d_clean + w * d_noisy)
}

/// The rate-distortion Lagrangian with the rate normalized to bits/pixel.
pub fn rd_loss(rate_bits: f64, d: f64, lambda: f64, num_pixels: usize) -> Result<f64, TrainError> {
    if lambda <= 0.0 {
        return Err(TrainError::BadLambda(lambda));
    }
    if rate_bits < 0.0 {
        return Err(TrainError::NegativeRate(rate_bits));
    }
    Ok(rate_bits / num_pixels as f64 + lambda * d)
}

/// Halves the learning rate when the loss stops improving.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    pub factor: f64,
    pub patience: u32,
    pub min_rel_improvement: f64,
    pub best: f64,
    pub bad_epochs: u32,
}

impl PlateauSchedule {
    pub fn new(factor: f64, patience: u32, min_rel_improvement: f64) -> Self {
        Self { factor, patience, min_rel_improvement, best: f64::INFINITY, bad_epochs: 0 }
    }

    /// Feeds one epoch's training loss; returns true when the learning rate
    /// should be multiplied by `factor` now.
    pub fn observe(&mut self, epoch_loss: f64) -> bool {
        if epoch_loss < self.best * (1.0 - self.min_rel_improvement) || self.best.is_infinite() {
            self.best = epoch_loss.min(self.best);
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            return true;
        }
        false
    }
}

/// Optimizer and schedule state; serialized alongside checkpoints so a
/// resumed run reproduces the uninterrupted trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<F: Scalar> {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub schedule: PlateauSchedule,
    pub m: BTreeMap<String, ArrayD<F>>,
    pub v: BTreeMap<String, ArrayD<F>>,
}

impl<F: Scalar> TrainState<F> {
    pub fn new(params: &ParamSet<F>, tc: &TrainConfig) -> Self {
        let zeros = |p: &ParamSet<F>| {
            p.iter()
                .map(|(k, v)| (k.clone(), ArrayD::from_elem(v.raw_dim(), F::zero())))
                .collect::<BTreeMap<_, _>>()
        };
        Self {
            step: 0,
            epoch: 0,
            lr: tc.lr_init,
            schedule: PlateauSchedule::new(
                tc.lr_factor,
                tc.plateau_patience,
                tc.plateau_min_rel_improvement,
            ),
            m: zeros(params),
            v: zeros(params),
        }
    }
}

/// One prepared batch: clean and noisy crops plus the frozen quantization
/// noise, all `(seed, step)`-deterministic.
pub struct TrainBatch<F: Scalar> {
    pub clean: Array4<F>,
    pub noisy: Array4<F>,
    pub u_latent: ArrayD<F>,
    pub u_hyper: ArrayD<F>,
    pub sigma: f64,
}

pub fn prepare_batch<F: Scalar>(
    images: &[ImageBuffer],
    cfg: &ModelConfig,
    tc: &TrainConfig,
    step: u64,
) -> Result<TrainBatch<F>, TrainError> {
    tc.validate()?;
    if images.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let crop = tc.crop;
    let mut rng = derive_rng(tc.seed, STREAM_SAMPLER, step);
    let mut clean = Array4::<F>::zeros((tc.batch, 3, crop, crop));
    let mut noisy = Array4::<F>::zeros((tc.batch, 3, crop, crop));
    let sigma = tc.noise.sigma_for_iteration(step)?;
    for b in 0..tc.batch {
        let img = &images[rng.random_range(0..images.len())];
        if img.height() < crop || img.width() < crop {
            return Err(TrainError::CropLargerThanImage {
                crop,
                h: img.height(),
                w: img.width(),
            });
        }
        let r0 = rng.random_range(0..=img.height() - crop);
        let c0 = rng.random_range(0..=img.width() - crop);
        let mut crop_img = ImageBuffer::constant(crop, crop, 0.0);
        for r in 0..crop {
            for cc in 0..crop {
                for ch in 0..3 {
                    crop_img.set(r, cc, ch, img.get(r0 + r, c0 + cc, ch));
                }
            }
        }
        // Fresh noise per crop per iteration.
        let noise_seed = tc.noise.seed ^ step.wrapping_mul(0x9e37).wrapping_add(b as u64);
        let noisy_img = match &tc.noise.kind {
            NoiseKind::Awgn { .. } | NoiseKind::VariableAwgn { .. } => {
                crate::noise::synth_awgn(&crop_img, sigma, noise_seed)?
            }
            NoiseKind::Practical { a, b: bb, exact_poisson } => {
                let spec = NoiseSpec {
                    kind: NoiseKind::Practical { a: *a, b: *bb, exact_poisson: *exact_poisson },
                    seed: noise_seed,
                };
                spec.synthesize(&crop_img, 0)?
            }
        };
        clean
            .index_axis_mut(ndarray::Axis(0), b)
            .assign(&image_to_tensor::<F>(&crop_img).index_axis(ndarray::Axis(0), 0));
        noisy
            .index_axis_mut(ndarray::Axis(0), b)
            .assign(&image_to_tensor::<F>(&noisy_img).index_axis(ndarray::Axis(0), 0));
    }
    let (n, m) = (crop / crate::model::ANALYSIS_STRIDE, crop / crate::model::ANALYSIS_STRIDE);
    let (nz, mz) = (n / crate::model::HYPER_STRIDE, m / crate::model::HYPER_STRIDE);
    let mut qrng = derive_rng(tc.seed, STREAM_QUANT_NOISE, step);
    let mut uniform = |shape: &[usize]| {
        ArrayD::from_shape_fn(IxDyn(shape), |_| c::<F>(qrng.random::<f64>() - 0.5))
    };
    let u_latent = uniform(&[tc.batch, cfg.total_channels, n, m]);
    let u_hyper = uniform(&[tc.batch, cfg.hyper_channels, nz, mz]);
    Ok(TrainBatch { clean, noisy, u_latent, u_hyper, sigma })
}

/// Node handles of the training loss and its reported parts.
pub struct LossNodes {
    pub loss: NodeId,
    pub rate_side: NodeId,
    pub rate_base: NodeId,
    pub rate_enh: Option<NodeId>,
    pub mse_denoise: NodeId,
    pub mse_noisy: NodeId,
    pub num_pixels: usize,
}

const INV_LN2: f64 = core::f64::consts::LOG2_E;

/// `-sum log2 p` of a quantized Gaussian layer under `(mu, sigma)` nodes.
fn gaussian_rate_bits<F: Scalar>(
    g: &mut Graph<F>,
    y_hat: NodeId,
    mu: NodeId,
    sigma: NodeId,
) -> NodeId {
    let d = g.sub(y_hat, mu);
    let hi_arg = g.add_scalar(d, 0.5);
    let hi_arg = g.div(hi_arg, sigma);
    let hi = g.normal_cdf(hi_arg);
    let lo_arg = g.add_scalar(d, -0.5);
    let lo_arg = g.div(lo_arg, sigma);
    let lo = g.normal_cdf(lo_arg);
    let p = g.sub(hi, lo);
    let p = g.max_scalar(p, P_MIN);
    let lnp = g.ln(p);
    let total = g.sum_all(lnp);
    g.mul_scalar(total, -INV_LN2)
}

/// `-sum log2 p` of the hyper-latent under the per-channel logistic prior.
fn factorized_rate_bits<F: Scalar>(
    g: &mut Graph<F>,
    vars: &BoundParams,
    z_hat: NodeId,
    batch: usize,
    nz: usize,
    mz: usize,
) -> NodeId {
    let loc = vars.id("prior.loc");
    let raw = vars.id("prior.scale_raw");
    let sp = g.softplus(raw);
    let scale = g.add_scalar(sp, crate::entropy::SIGMA_MIN);
    let loc_b = g.broadcast_c(loc, batch, nz, mz);
    let scale_b = g.broadcast_c(scale, batch, nz, mz);
    let d = g.sub(z_hat, loc_b);
    let hi_arg = g.add_scalar(d, 0.5);
    let hi_arg = g.div(hi_arg, scale_b);
    let hi = g.sigmoid(hi_arg);
    let lo_arg = g.add_scalar(d, -0.5);
    let lo_arg = g.div(lo_arg, scale_b);
    let lo = g.sigmoid(lo_arg);
    let p = g.sub(hi, lo);
    let p = g.max_scalar(p, P_MIN);
    let lnp = g.ln(p);
    let total = g.sum_all(lnp);
    g.mul_scalar(total, -INV_LN2)
}

/// Builds the full training loss on `g`. The synthesis outputs are left
/// unclamped here; clamping is an inference-time concern.
pub fn build_train_loss<F: Scalar>(
    g: &mut Graph<F>,
    vars: &BoundParams,
    cfg: &ModelConfig,
    batch: &TrainBatch<F>,
    lambda: f64,
    task_weight: f64,
) -> LossNodes {
    let (b, _, h, w) = batch.clean.dim();
    let num_pixels = b * h * w;
    let x_clean = g.constant(batch.clean.clone().into_dyn());
    let x_noisy = g.constant(batch.noisy.clone().into_dyn());
    let u_latent = g.constant(batch.u_latent.clone());
    let u_hyper = g.constant(batch.u_hyper.clone());

    let y = net::analysis_fwd(g, vars, cfg, x_noisy);
    let z = net::hyper_analysis_fwd(g, vars, cfg, y);
    let z_hat = g.add(z, u_hyper);
    let hyper_features = net::hyper_synth_fwd(g, vars, cfg, z_hat);
    let y_hat = g.add(y, u_latent);

    let i = cfg.base_channels;
    let y1 = g.slice_c(y_hat, 0, i);
    let (mu1, sigma1) = net::context_ep_fwd(g, vars, cfg, CodingLayer::Base, y1, hyper_features);
    let rate_base = gaussian_rate_bits(g, y1, mu1, sigma1);

    let (rate_enh, y_full) = if cfg.enhancement_channels() > 0 {
        let y2 = g.slice_c(y_hat, i, cfg.total_channels);
        let (mu2, sigma2) =
            net::context_ep_fwd(g, vars, cfg, CodingLayer::Enhancement, y2, hyper_features);
        (Some(gaussian_rate_bits(g, y2, mu2, sigma2)), y_hat)
    } else {
        (None, y_hat)
    };

    let (nz, mz) = {
        let zs = g.value(z_hat).shape().to_vec();
        (zs[2], zs[3])
    };
    let rate_side = factorized_rate_bits(g, vars, z_hat, b, nz, mz);

    let denoised = net::synth_fwd(g, vars, cfg, net::SynthKind::Base, y1);
    let recon = net::synth_fwd(g, vars, cfg, net::SynthKind::Full, y_full);
    let mse_denoise = mse_255_node(g, denoised, x_clean);
    let mse_noisy = mse_255_node(g, recon, x_noisy);

    let d_clean = g.mul_scalar(mse_denoise, 1.0 - task_weight);
    let d_noisy = g.mul_scalar(mse_noisy, task_weight);
    let d = g.add(d_clean, d_noisy);

    let mut rate = g.add(rate_side, rate_base);
    if let Some(re) = rate_enh {
        rate = g.add(rate, re);
    }
    let rate_norm = g.mul_scalar(rate, 1.0 / num_pixels as f64);
    let weighted_d = g.mul_scalar(d, lambda);
    let loss = g.add(rate_norm, weighted_d);
    LossNodes { loss, rate_side, rate_base, rate_enh, mse_denoise, mse_noisy, num_pixels }
}

fn breakdown_from_nodes<F: Scalar>(
    g: &Graph<F>,
    nodes: &LossNodes,
    task_weight: f64,
    sigma: f64,
) -> LossBreakdown {
    let mse_denoise = g.scalar_value(nodes.mse_denoise);
    let mse_noisy = g.scalar_value(nodes.mse_noisy);
    LossBreakdown {
        total: g.scalar_value(nodes.loss),
        rate_side_bits: g.scalar_value(nodes.rate_side),
        rate_base_bits: g.scalar_value(nodes.rate_base),
        rate_enh_bits: nodes.rate_enh.map(|n| g.scalar_value(n)).unwrap_or(0.0),
        mse_denoise,
        mse_noisy,
        distortion: (1.0 - task_weight) * mse_denoise + task_weight * mse_noisy,
        num_pixels: nodes.num_pixels,
        sigma,
    }
}

fn adam_update<F: Scalar>(
    params: &mut ParamSet<F>,
    grads: &BTreeMap<String, ArrayD<F>>,
    state: &mut TrainState<F>,
) {
    let t = (state.step + 1) as i32;
    let b1 = c::<F>(ADAM_BETA1);
    let b2 = c::<F>(ADAM_BETA2);
    let one = F::one();
    let corr1 = c::<F>(1.0 - libm::pow(ADAM_BETA1, t as f64));
    let corr2 = c::<F>(1.0 - libm::pow(ADAM_BETA2, t as f64));
    let lr = c::<F>(state.lr);
    let eps = c::<F>(ADAM_EPS);
    for (name, p) in params.iter_mut() {
        let Some(gr) = grads.get(name) else { continue };
        let m = state.m.get_mut(name).expect("moment state tracks params");
        let v = state.v.get_mut(name).expect("moment state tracks params");
        ndarray::Zip::from(p)
            .and(m)
            .and(v)
            .and(gr)
            .for_each(|pv, mv, vv, &gv| {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let mhat = *mv / corr1;
                let vhat = *vv / corr2;
                *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
            });
    }
}

/// One optimizer step over a freshly sampled batch. On success the params
/// and state advance; a non-finite loss leaves them untouched and reports
/// the full breakdown.
pub fn train_step<F: Scalar>(
    params: &mut ParamSet<F>,
    state: &mut TrainState<F>,
    cfg: &ModelConfig,
    tc: &TrainConfig,
    images: &[ImageBuffer],
) -> Result<LossBreakdown, TrainError> {
    let batch = prepare_batch::<F>(images, cfg, tc, state.step)?;
    let mut g = Graph::<F>::new();
    let vars = net::bind_params(&mut g, params, true);
    let nodes = build_train_loss(&mut g, &vars, cfg, &batch, tc.lambda, tc.task_weight);
    let breakdown = breakdown_from_nodes(&g, &nodes, tc.task_weight, batch.sigma);
    if !breakdown.total.is_finite() {
        return Err(TrainError::NonFiniteLoss(breakdown));
    }
    g.backward(nodes.loss);
    let mut grads = BTreeMap::new();
    for (name, &id) in vars.iter() {
        if let Some(gr) = g.grad(id) {
            grads.insert(name.clone(), gr.clone());
        }
    }
    adam_update(params, &grads, state);
    state.step += 1;
    Ok(breakdown)
}

pub fn steps_per_epoch(num_images: usize, batch: usize) -> usize {
    num_images.div_ceil(batch).max(1)
}

/// Report of the analytic-vs-finite-difference gradient comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub within_tol: usize,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn pass_fraction(&self) -> f64 {
        self.within_tol as f64 / self.checked.max(1) as f64
    }
}

/// Central finite differences against the analytic gradient on `samples`
/// randomly chosen weights, in double precision.
pub fn gradient_check(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    images: &[ImageBuffer],
    samples: usize,
    step_size: f64,
    rel_tol: f64,
    seed: u64,
) -> Result<GradCheckReport, TrainError> {
    let params = crate::model::init_params::<f64>(cfg, seed);
    let batch = prepare_batch::<f64>(images, cfg, tc, 0)?;

    // Analytic gradients once.
    let mut g = Graph::<f64>::new();
    let vars = net::bind_params(&mut g, &params, true);
    let nodes = build_train_loss(&mut g, &vars, cfg, &batch, tc.lambda, tc.task_weight);
    g.backward(nodes.loss);
    let mut analytic = BTreeMap::new();
    for (name, &id) in vars.iter() {
        if let Some(gr) = g.grad(id) {
            analytic.insert(name.clone(), gr.clone());
        }
    }

    let names: Vec<String> = params.iter().map(|(k, _)| k.clone()).collect();
    let sizes: Vec<usize> = params.iter().map(|(_, v)| v.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = derive_rng(seed, 0x9c, 1);

    let forward_loss = |p: &ParamSet<f64>| -> f64 {
        let mut g = Graph::<f64>::new();
        let vars = net::bind_params(&mut g, p, false);
        let nodes = build_train_loss(&mut g, &vars, cfg, &batch, tc.lambda, tc.task_weight);
        g.scalar_value(nodes.loss)
    };

    let mut checked = 0usize;
    let mut within = 0usize;
    let mut max_rel = 0.0f64;
    for _ in 0..samples {
        let mut flat = rng.random_range(0..total);
        let mut which = 0usize;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let name = &names[which];
        let base = params.get(name).unwrap().as_slice().unwrap()[flat];

        let mut plus = params.clone();
        plus.get_mut(name).unwrap().as_slice_mut().unwrap()[flat] = base + step_size;
        let mut minus = params.clone();
        minus.get_mut(name).unwrap().as_slice_mut().unwrap()[flat] = base - step_size;
        let fd = (forward_loss(&plus) - forward_loss(&minus)) / (2.0 * step_size);
        let an = analytic.get(name).map(|a| a.as_slice().unwrap()[flat]).unwrap_or(0.0);

        let denom = fd.abs().max(an.abs());
        let rel = if denom < 1e-9 { 0.0 } else { (fd - an).abs() / denom };
        // Gradients at finite-difference noise level count as agreeing.
        let ok = rel < rel_tol || (fd - an).abs() < 1e-8;
        checked += 1;
        if ok {
            within += 1;
        }
        if rel.is_finite() {
            max_rel = max_rel.max(rel);
        }
    }
    Ok(GradCheckReport { checked, within_tol: within, max_rel_err: max_rel })
}
