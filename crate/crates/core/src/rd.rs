//! Rate-distortion bookkeeping: bpp accounting, RD curves, model evaluation
//! and Bjontegaard delta-rate.
//!
//! bpp is measured against the ORIGINAL (unpadded) pixel count. The header
//! and the side substream count toward the base layer; the enhancement
//! substream adds on top for the full reconstruction.

use alloc::vec::Vec;
use thiserror::Error;

use crate::container::{ScalableBitstream, CONTAINER_OVERHEAD_BYTES};
use crate::image::ImageBuffer;
use crate::metrics::psnr;
use crate::pad::pad_to_64;
use crate::pipeline::{decode_base, decode_full, encode_image, PipelineError};
use crate::model::{ModelConfig, ParamSet};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum RdError {
    #[error("bpp is undefined for a zero-area image")]
    ZeroArea,
    #[error("curve needs at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("curves have no overlapping quality range")]
    EmptyOverlap,
    #[error("curve point has non-finite or non-positive bpp/psnr")]
    BadPoint,
    #[error("curve bpp values must be strictly increasing")]
    NonMonotonic,
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("image {index} failed to code: {source}")]
    ImageFailed { index: usize, source: PipelineError },
}

/// Which decode target a measurement refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Denoise,
    NoisyRecon,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Denoise => "denoise",
            Task::NoisyRecon => "noisy_recon",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RDPoint {
    pub bpp: f64,
    pub psnr: f64,
    pub task: Task,
    pub model_id: u64,
    pub lambda: Option<f64>,
}

/// An RD curve, sorted by bpp and strictly increasing in rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RDCurve {
    points: Vec<RDPoint>,
}

impl RDCurve {
    pub fn new(mut points: Vec<RDPoint>) -> Result<Self, RdError> {
        for p in &points {
            if !(p.bpp > 0.0) || !p.psnr.is_finite() {
                return Err(RdError::BadPoint);
            }
        }
        points.sort_by(|a, b| a.bpp.partial_cmp(&b.bpp).expect("finite bpp"));
        for pair in points.windows(2) {
            if pair[1].bpp <= pair[0].bpp {
                return Err(RdError::NonMonotonic);
            }
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[RDPoint] {
        &self.points
    }

    fn psnr_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &self.points {
            lo = lo.min(p.psnr);
            hi = hi.max(p.psnr);
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BppBreakdown {
    pub base_bpp: f64,
    pub full_bpp: f64,
}

/// bpp from raw byte counts against the original pixel count.
pub fn bpp_from_sizes(
    header_bytes: usize,
    side_bytes: usize,
    base_bytes: usize,
    enh_bytes: usize,
    orig_h: usize,
    orig_w: usize,
) -> Result<BppBreakdown, RdError> {
    let area = (orig_h * orig_w) as f64;
    if area == 0.0 {
        return Err(RdError::ZeroArea);
    }
    let base_bpp = 8.0 * (header_bytes + side_bytes + base_bytes) as f64 / area;
    let full_bpp = base_bpp + 8.0 * enh_bytes as f64 / area;
    Ok(BppBreakdown { base_bpp, full_bpp })
}

/// bpp of a bitstream, using the original dims recorded in its header.
pub fn bpp_accounting(bs: &ScalableBitstream) -> Result<BppBreakdown, RdError> {
    let (side, base, enh) = bs.substream_lengths();
    bpp_from_sizes(
        CONTAINER_OVERHEAD_BYTES,
        side,
        base,
        enh,
        bs.header.orig_h as usize,
        bs.header.orig_w as usize,
    )
}

/// Per-image measurements of one model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageEval {
    pub base_bpp: f64,
    pub full_bpp: f64,
    pub psnr_denoise: f64,
    pub psnr_noisy_recon: f64,
    pub psnr_noisy_vs_clean: f64,
}

/// Runs one model over `(clean, noisy)` pairs: encode the noisy image, then
/// measure base-layer denoising against the clean image and full-layer
/// reconstruction against the noisy input. Returns the two mean RD points
/// and the per-image detail, in input order.
pub fn evaluate_model_on_images<F: Scalar>(
    params: &ParamSet<F>,
    cfg: &ModelConfig,
    model_id: u64,
    lambda: Option<f64>,
    pairs: &[(ImageBuffer, ImageBuffer)],
) -> Result<(RDPoint, RDPoint, Vec<ImageEval>), RdError> {
    let mut details = Vec::with_capacity(pairs.len());
    let (mut sb, mut sf, mut pd, mut pr) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (index, (clean, noisy)) in pairs.iter().enumerate() {
        let fail = |source: PipelineError| RdError::ImageFailed { index, source };
        let (padded, orig) = pad_to_64(noisy);
        let (bs, _) = encode_image(params, cfg, model_id, &padded, orig).map_err(fail)?;
        let denoised = decode_base(params, cfg, model_id, &bs).map_err(fail)?;
        let recon = decode_full(params, cfg, model_id, &bs).map_err(fail)?;
        let bpp = bpp_accounting(&bs)?;
        let eval = ImageEval {
            base_bpp: bpp.base_bpp,
            full_bpp: bpp.full_bpp,
            psnr_denoise: psnr(&denoised, clean).expect("same dims"),
            psnr_noisy_recon: psnr(&recon, noisy).expect("same dims"),
            psnr_noisy_vs_clean: psnr(noisy, clean).expect("same dims"),
        };
        sb += eval.base_bpp;
        sf += eval.full_bpp;
        pd += eval.psnr_denoise;
        pr += eval.psnr_noisy_recon;
        details.push(eval);
    }
    let n = pairs.len().max(1) as f64;
    let denoise = RDPoint { bpp: sb / n, psnr: pd / n, task: Task::Denoise, model_id, lambda };
    let recon = RDPoint { bpp: sf / n, psnr: pr / n, task: Task::NoisyRecon, model_id, lambda };
    Ok((denoise, recon, details))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BDRateReport {
    /// Average rate difference of `test` against `anchor` over the shared
    /// quality range, in percent. Negative means the test curve needs less
    /// rate at equal quality.
    pub delta_rate_percent: f64,
    pub overlap_psnr: (f64, f64),
}

const BD_MIN_POINTS: usize = 4;

/// Classic Bjontegaard delta-rate: cubic fit of `log10(rate)` against PSNR
/// per curve, integrated over the shared PSNR interval.
pub fn bd_rate(anchor: &RDCurve, test: &RDCurve) -> Result<BDRateReport, RdError> {
    for c in [anchor, test] {
        if c.points().len() < BD_MIN_POINTS {
            return Err(RdError::TooFewPoints { need: BD_MIN_POINTS, got: c.points().len() });
        }
    }
    let (a_lo, a_hi) = anchor.psnr_range();
    let (t_lo, t_hi) = test.psnr_range();
    let lo = a_lo.max(t_lo);
    let hi = a_hi.min(t_hi);
    if hi <= lo {
        return Err(RdError::EmptyOverlap);
    }
    // Center PSNR for fit conditioning; the fitted polynomial through the
    // same points is unchanged by the shift.
    let shift = 0.5 * (lo + hi);
    let fit = |curve: &RDCurve| {
        let xs: Vec<f64> = curve.points().iter().map(|p| p.psnr - shift).collect();
        let ys: Vec<f64> = curve.points().iter().map(|p| libm::log10(p.bpp)).collect();
        polyfit3(&xs, &ys)
    };
    let pa = fit(anchor);
    let pt = fit(test);
    let int_a = poly3_integral(&pa, lo - shift, hi - shift);
    let int_t = poly3_integral(&pt, lo - shift, hi - shift);
    let avg_diff = (int_t - int_a) / (hi - lo);
    Ok(BDRateReport {
        delta_rate_percent: (libm::pow(10.0, avg_diff) - 1.0) * 100.0,
        overlap_psnr: (lo, hi),
    })
}

/// Least-squares cubic fit; with exactly four points this interpolates.
fn polyfit3(xs: &[f64], ys: &[f64]) -> [f64; 4] {
    let mut ata = [[0.0f64; 4]; 4];
    let mut atb = [0.0f64; 4];
    for (&x, &y) in xs.iter().zip(ys) {
        let powers = [1.0, x, x * x, x * x * x];
        for r in 0..4 {
            atb[r] += powers[r] * y;
            for c in 0..4 {
                ata[r][c] += powers[r] * powers[c];
            }
        }
    }
    solve4(ata, atb)
}

/// Gaussian elimination with partial pivoting on a 4x4 system.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> [f64; 4] {
    for col in 0..4 {
        let mut pivot = col;
        for r in col + 1..4 {
            if a[r][col].abs() > a[pivot][col].abs() {
                pivot = r;
            }
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let diag = a[col][col];
        debug_assert!(diag.abs() > 1e-300, "singular normal matrix");
        for r in col + 1..4 {
            let f = a[r][col] / diag;
            for c in col..4 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 4];
    for r in (0..4).rev() {
        let mut acc = b[r];
        for c in r + 1..4 {
            acc -= a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
    }
    x
}

fn poly3_integral(coef: &[f64; 4], a: f64, b: f64) -> f64 {
    let eval = |x: f64| {
        coef[0] * x + coef[1] * x * x / 2.0 + coef[2] * x * x * x / 3.0
            + coef[3] * x * x * x * x / 4.0
    };
    eval(b) - eval(a)
}
