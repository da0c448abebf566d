//! Encode/decode pipeline: transforms, sequential quantization under the
//! context models, range coding, and the bitstream container.
//!
//! Substream layout: a `u16` little-endian bound `A` on the residual
//! magnitude, then range-coded symbols over the support `[-A, A]`, visited
//! in raster order with channels interleaved per position. The side stream
//! is decoded first (it carries the hyper-latent both layers condition on);
//! base and enhancement substreams share no state with each other.

use alloc::vec::Vec;
use ndarray::Array3;
use thiserror::Error;

use crate::coder::{CoderError, Pmf, QuantizedPmf, RangeDecoder, RangeEncoder};
use crate::container::{BitstreamHeader, ContainerError, ScalableBitstream};
use crate::entropy::{
    gaussian_bin_prob_floored, gaussian_residual_pmf, logistic_bin_prob, logistic_residual_pmf,
    MAX_SUPPORT_HALF_WIDTH, P_MIN,
};
use crate::image::ImageBuffer;
use crate::model::context::LayerCoder;
use crate::model::{
    analysis_image, factorized_prior, hyper_analysis_image, hyper_features_from, split_latent,
    synthesize_base, synthesize_full, CodingLayer, FactorizedPrior, LatentPartition, LatentTensor,
    ModelConfig, ModelError, ParamSet, ANALYSIS_STRIDE, HYPER_STRIDE,
};
use crate::pad::{crop_back, next_multiple_of_64, OrigDims};
use crate::scalar::{c, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Coder(#[from] CoderError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("bitstream was produced by model {header:#018x}, decoder holds {params:#018x}")]
    ModelIdMismatch { header: u64, params: u64 },
    #[error("bitstream channels (C={header_c}, i={header_i}) do not match the model config")]
    ConfigMismatch { header_c: u16, header_i: u16 },
    #[error("padded input {got_h}x{got_w} does not match original dims {orig_h}x{orig_w} padded to 64")]
    PaddingMismatch { got_h: usize, got_w: usize, orig_h: usize, orig_w: usize },
}

/// Bits per substream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBits {
    pub side: f64,
    pub base: f64,
    pub enh: f64,
}

impl RateBits {
    pub fn total(&self) -> f64 {
        self.side + self.base + self.enh
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeReport {
    /// Ideal code length under the entropy models (`-sum log2 p`).
    pub estimated_bits: RateBits,
    /// Bits actually written per substream.
    pub actual_bits: RateBits,
}

/// One quantized coding layer: the reconstruction the synthesis transforms
/// consume, plus the integer symbols and per-symbol scales for the coder.
pub struct QuantizedLayer<F: Scalar> {
    pub reconstruction: Array3<F>,
    pub symbols: Vec<i32>,
    pub sigmas: Vec<f64>,
}

impl<F: Scalar> QuantizedLayer<F> {
    fn empty(n: usize, m: usize) -> Self {
        Self { reconstruction: Array3::zeros((0, n, m)), symbols: Vec::new(), sigmas: Vec::new() }
    }
}

/// Sequentially quantizes one layer: at each raster position the context
/// model conditions on what a decoder would already have reconstructed.
pub fn quantize_layer<F: Scalar>(
    coder: &LayerCoder<F>,
    y_layer: &Array3<F>,
    hyper_features: &Array3<F>,
) -> QuantizedLayer<F> {
    let (l, n, m) = y_layer.dim();
    let mut recon = Array3::<F>::zeros((l, n, m));
    let mut symbols = Vec::with_capacity(l * n * m);
    let mut sigmas = Vec::with_capacity(l * n * m);
    if l == 0 {
        return QuantizedLayer { reconstruction: recon, symbols, sigmas };
    }
    for r in 0..n {
        for cc in 0..m {
            let (mu, sigma) = coder.entropy_params_at(&recon, hyper_features, r, cc);
            for ch in 0..l {
                let resid = (y_layer[[ch, r, cc]] - mu[ch]).round();
                symbols.push(resid.as_f64() as i32);
                sigmas.push(sigma[ch].as_f64());
                recon[[ch, r, cc]] = resid + mu[ch];
            }
        }
    }
    QuantizedLayer { reconstruction: recon, symbols, sigmas }
}

/// Quantizes the hyper-latent against the factorized prior. Returns the
/// reconstruction, symbols and per-symbol scales (channel interleaved).
pub fn quantize_hyper<F: Scalar>(
    z: &LatentTensor<F>,
    prior: &FactorizedPrior<F>,
) -> (LatentTensor<F>, Vec<i32>, Vec<f64>) {
    let (ch, n, m) = z.0.dim();
    let mut recon = Array3::<F>::zeros((ch, n, m));
    let mut symbols = Vec::with_capacity(ch * n * m);
    let mut scales = Vec::with_capacity(ch * n * m);
    for r in 0..n {
        for cc in 0..m {
            for k in 0..ch {
                let resid = (z.0[[k, r, cc]] - prior.loc[k]).round();
                symbols.push(resid.as_f64() as i32);
                scales.push(prior.scale[k].as_f64());
                recon[[k, r, cc]] = resid + prior.loc[k];
            }
        }
    }
    (LatentTensor(recon), symbols, scales)
}

#[derive(Clone, Copy)]
enum BinModel {
    Gaussian,
    Logistic,
}

impl BinModel {
    fn pmf(self, scale: f64, half_width: i32) -> Pmf {
        match self {
            BinModel::Gaussian => gaussian_residual_pmf(scale, half_width),
            BinModel::Logistic => logistic_residual_pmf(scale, half_width),
        }
    }

    fn floored_prob(self, symbol: i32, scale: f64) -> f64 {
        match self {
            BinModel::Gaussian => gaussian_bin_prob_floored(symbol as f64, 0.0, scale),
            BinModel::Logistic => logistic_bin_prob(symbol as f64, scale).max(P_MIN),
        }
    }
}

/// Ideal code length of a substream under its (floored) bin probabilities.
fn ideal_bits(symbols: &[i32], scales: &[f64], model: BinModel) -> f64 {
    let mut bits = 0.0;
    for (&s, &sc) in symbols.iter().zip(scales) {
        bits -= libm::log2(model.floored_prob(s, sc));
    }
    bits
}

fn encode_substream(
    symbols: &[i32],
    scales: &[f64],
    model: BinModel,
) -> Result<Vec<u8>, CoderError> {
    if symbols.is_empty() {
        return Ok(Vec::new());
    }
    let bound = symbols.iter().map(|s| s.unsigned_abs()).max().unwrap_or(0).max(1);
    if bound > MAX_SUPPORT_HALF_WIDTH as u32 {
        let (index, &symbol) =
            symbols.iter().enumerate().max_by_key(|(_, s)| s.unsigned_abs()).unwrap();
        return Err(CoderError::SymbolOutsideSupport { index, symbol });
    }
    let bound = bound as i32;
    let mut out = Vec::new();
    out.extend_from_slice(&(bound as u16).to_le_bytes());
    let mut enc = RangeEncoder::new();
    for (i, (&s, &sc)) in symbols.iter().zip(scales).enumerate() {
        let q = QuantizedPmf::build(&model.pmf(sc, bound), i)?;
        enc.encode_symbol(s, &q)?;
    }
    out.extend_from_slice(&enc.finish());
    Ok(out)
}

/// Range decoder over one substream with its residual bound.
struct SubstreamDecoder<'a> {
    dec: RangeDecoder<'a>,
    bound: i32,
    model: BinModel,
}

impl<'a> SubstreamDecoder<'a> {
    fn new(bytes: &'a [u8], model: BinModel, name: &'static str) -> Result<Self, PipelineError> {
        if bytes.len() < 2 {
            return Err(ContainerError::MissingSubstream(name).into());
        }
        let bound = u16::from_le_bytes([bytes[0], bytes[1]]) as i32;
        Ok(Self { dec: RangeDecoder::new(&bytes[2..]), bound, model })
    }

    fn decode(&mut self, scale: f64) -> Result<i32, CoderError> {
        let q = QuantizedPmf::build(&self.model.pmf(scale, self.bound), 0)?;
        self.dec.decode_symbol(&q)
    }
}

fn latent_grid(header: &BitstreamHeader) -> (usize, usize, usize, usize) {
    let ph = next_multiple_of_64(header.orig_h as usize);
    let pw = next_multiple_of_64(header.orig_w as usize);
    let n = ph / ANALYSIS_STRIDE;
    let m = pw / ANALYSIS_STRIDE;
    (n, m, n / HYPER_STRIDE, m / HYPER_STRIDE)
}

fn check_header(
    header: &BitstreamHeader,
    cfg: &ModelConfig,
    model_id: u64,
) -> Result<(), PipelineError> {
    if header.model_id != model_id {
        return Err(PipelineError::ModelIdMismatch { header: header.model_id, params: model_id });
    }
    if header.total_channels as usize != cfg.total_channels
        || header.base_channels as usize != cfg.base_channels
    {
        return Err(PipelineError::ConfigMismatch {
            header_c: header.total_channels,
            header_i: header.base_channels,
        });
    }
    Ok(())
}

/// Encodes a padded image into a scalable bitstream. `x_padded` must be the
/// reflect-padded original; its dims are re-derived from `orig` as a guard.
pub fn encode_image<F: Scalar>(
    params: &ParamSet<F>,
    cfg: &ModelConfig,
    model_id: u64,
    x_padded: &ImageBuffer,
    orig: OrigDims,
) -> Result<(ScalableBitstream, EncodeReport), PipelineError> {
    cfg.validate()?;
    let (ph, pw) = (next_multiple_of_64(orig.height), next_multiple_of_64(orig.width));
    if x_padded.height() != ph || x_padded.width() != pw {
        return Err(PipelineError::PaddingMismatch {
            got_h: x_padded.height(),
            got_w: x_padded.width(),
            orig_h: orig.height,
            orig_w: orig.width,
        });
    }
    let y = analysis_image(params, cfg, x_padded)?;
    let z = hyper_analysis_image(params, cfg, &y)?;
    let prior = factorized_prior(params, cfg)?;
    let (z_hat, z_symbols, z_scales) = quantize_hyper(&z, &prior);
    let hyper_features = hyper_features_from(params, cfg, &z_hat)?;

    let parts = split_latent(&y, cfg.base_channels)?;
    let base_coder = LayerCoder::new(params, cfg, CodingLayer::Base)?;
    let q_base = quantize_layer(&base_coder, &parts.base.0, &hyper_features.0);
    let q_enh = if cfg.enhancement_channels() > 0 {
        let enh_coder = LayerCoder::new(params, cfg, CodingLayer::Enhancement)?;
        quantize_layer(&enh_coder, &parts.enhancement.0, &hyper_features.0)
    } else {
        QuantizedLayer::empty(y.spatial().0, y.spatial().1)
    };

    let side = encode_substream(&z_symbols, &z_scales, BinModel::Logistic)?;
    let base = encode_substream(&q_base.symbols, &q_base.sigmas, BinModel::Gaussian)?;
    let enhancement = encode_substream(&q_enh.symbols, &q_enh.sigmas, BinModel::Gaussian)?;

    let estimated_bits = RateBits {
        side: ideal_bits(&z_symbols, &z_scales, BinModel::Logistic),
        base: ideal_bits(&q_base.symbols, &q_base.sigmas, BinModel::Gaussian),
        enh: ideal_bits(&q_enh.symbols, &q_enh.sigmas, BinModel::Gaussian),
    };
    let actual_bits = RateBits {
        side: 8.0 * side.len() as f64,
        base: 8.0 * base.len() as f64,
        enh: 8.0 * enhancement.len() as f64,
    };

    let bs = ScalableBitstream {
        header: BitstreamHeader {
            orig_h: orig.height as u32,
            orig_w: orig.width as u32,
            total_channels: cfg.total_channels as u16,
            base_channels: cfg.base_channels as u16,
            model_id,
        },
        side,
        base,
        enhancement,
    };
    Ok((bs, EncodeReport { estimated_bits, actual_bits }))
}

fn decode_hyper<F: Scalar>(
    bs: &ScalableBitstream,
    params: &ParamSet<F>,
    cfg: &ModelConfig,
) -> Result<Array3<F>, PipelineError> {
    let (_, _, nz, mz) = latent_grid(&bs.header);
    let prior = factorized_prior(params, cfg)?;
    let mut dec = SubstreamDecoder::new(&bs.side, BinModel::Logistic, "side")?;
    let mut z_hat = Array3::<F>::zeros((cfg.hyper_channels, nz, mz));
    for r in 0..nz {
        for cc in 0..mz {
            for k in 0..cfg.hyper_channels {
                let s = dec.decode(prior.scale[k].as_f64())?;
                z_hat[[k, r, cc]] = c::<F>(s as f64) + prior.loc[k];
            }
        }
    }
    let features = hyper_features_from(params, cfg, &LatentTensor(z_hat))?;
    Ok(features.0)
}

fn decode_layer<F: Scalar>(
    bytes: &[u8],
    name: &'static str,
    coder: &LayerCoder<F>,
    hyper_features: &Array3<F>,
    n: usize,
    m: usize,
) -> Result<Array3<F>, PipelineError> {
    let l = coder.layer_channels();
    let mut recon = Array3::<F>::zeros((l, n, m));
    if l == 0 {
        return Ok(recon);
    }
    let mut dec = SubstreamDecoder::new(bytes, BinModel::Gaussian, name)?;
    for r in 0..n {
        for cc in 0..m {
            let (mu, sigma) = coder.entropy_params_at(&recon, hyper_features, r, cc);
            for ch in 0..l {
                let s = dec.decode(sigma[ch].as_f64())?;
                recon[[ch, r, cc]] = c::<F>(s as f64) + mu[ch];
            }
        }
    }
    Ok(recon)
}

/// Decodes the denoised image. Reads the side and base substreams only.
pub fn decode_base<F: Scalar>(
    params: &ParamSet<F>,
    cfg: &ModelConfig,
    model_id: u64,
    bs: &ScalableBitstream,
) -> Result<ImageBuffer, PipelineError> {
    check_header(&bs.header, cfg, model_id)?;
    let (n, m, _, _) = latent_grid(&bs.header);
    let hyper_features = decode_hyper(bs, params, cfg)?;
    let base_coder = LayerCoder::new(params, cfg, CodingLayer::Base)?;
    let y1 = decode_layer(&bs.base, "base", &base_coder, &hyper_features, n, m)?;
    let img = synthesize_base(params, cfg, &LatentTensor(y1))?;
    Ok(crop_back(
        &img,
        OrigDims { height: bs.header.orig_h as usize, width: bs.header.orig_w as usize },
    ))
}

/// Decodes the noisy-input reconstruction from all three substreams.
pub fn decode_full<F: Scalar>(
    params: &ParamSet<F>,
    cfg: &ModelConfig,
    model_id: u64,
    bs: &ScalableBitstream,
) -> Result<ImageBuffer, PipelineError> {
    check_header(&bs.header, cfg, model_id)?;
    let (n, m, _, _) = latent_grid(&bs.header);
    if cfg.enhancement_channels() > 0 && bs.enhancement.is_empty() {
        return Err(ContainerError::MissingSubstream("enhancement").into());
    }
    let hyper_features = decode_hyper(bs, params, cfg)?;
    let base_coder = LayerCoder::new(params, cfg, CodingLayer::Base)?;
    let y1 = decode_layer(&bs.base, "base", &base_coder, &hyper_features, n, m)?;
    let y2 = if cfg.enhancement_channels() > 0 {
        let enh_coder = LayerCoder::new(params, cfg, CodingLayer::Enhancement)?;
        decode_layer(&bs.enhancement, "enhancement", &enh_coder, &hyper_features, n, m)?
    } else {
        Array3::zeros((0, n, m))
    };
    let merged = crate::model::merge_latent(&LatentPartition {
        base: LatentTensor(y1),
        enhancement: LatentTensor(y2),
    });
    let img = synthesize_full(params, cfg, &merged)?;
    Ok(crop_back(
        &img,
        OrigDims { height: bs.header.orig_h as usize, width: bs.header.orig_w as usize },
    ))
}

/// Parses container bytes and decodes the denoised image. Uses the
/// base-only parse, so bytes past the base substream are never read.
pub fn decode_base_bytes<F: Scalar>(
    params: &ParamSet<F>,
    cfg: &ModelConfig,
    model_id: u64,
    bytes: &[u8],
) -> Result<ImageBuffer, PipelineError> {
    let bs = ScalableBitstream::parse_base_only(bytes)?;
    decode_base(params, cfg, model_id, &bs)
}

/// Parses container bytes and decodes the noisy-input reconstruction.
pub fn decode_full_bytes<F: Scalar>(
    params: &ParamSet<F>,
    cfg: &ModelConfig,
    model_id: u64,
    bytes: &[u8],
) -> Result<ImageBuffer, PipelineError> {
    let bs = ScalableBitstream::parse(bytes)?;
    decode_full(params, cfg, model_id, &bs)
}

/// The transform-only path (no entropy coding): analysis, sequential
/// quantization, and both syntheses. This is the oracle the coded path must
/// agree with bit-for-bit.
pub fn transform_roundtrip<F: Scalar>(
    params: &ParamSet<F>,
    cfg: &ModelConfig,
    x_padded: &ImageBuffer,
    orig: OrigDims,
) -> Result<(ImageBuffer, ImageBuffer), PipelineError> {
    let y = analysis_image(params, cfg, x_padded)?;
    let z = hyper_analysis_image(params, cfg, &y)?;
    let prior = factorized_prior(params, cfg)?;
    let (z_hat, _, _) = quantize_hyper(&z, &prior);
    let hyper_features = hyper_features_from(params, cfg, &z_hat)?;
    let parts = split_latent(&y, cfg.base_channels)?;
    let base_coder = LayerCoder::new(params, cfg, CodingLayer::Base)?;
    let q_base = quantize_layer(&base_coder, &parts.base.0, &hyper_features.0);
    let q_enh = if cfg.enhancement_channels() > 0 {
        let enh_coder = LayerCoder::new(params, cfg, CodingLayer::Enhancement)?;
        quantize_layer(&enh_coder, &parts.enhancement.0, &hyper_features.0)
    } else {
        QuantizedLayer::empty(y.spatial().0, y.spatial().1)
    };
    let base_img = synthesize_base(params, cfg, &LatentTensor(q_base.reconstruction.clone()))?;
    let merged = crate::model::merge_latent(&LatentPartition {
        base: LatentTensor(q_base.reconstruction),
        enhancement: LatentTensor(q_enh.reconstruction),
    });
    let full_img = synthesize_full(params, cfg, &merged)?;
    Ok((crop_back(&base_img, orig), crop_back(&full_img, orig)))
}
