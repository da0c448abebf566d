//! Noise synthesis and estimation.
//!
//! Two noise families are supported, matching how noisy images are stored in
//! practice (values clipped to the 8-bit range and re-quantized):
//!
//! * clipped-quantized AWGN at a fixed strength, or with the strength drawn
//!   uniformly from a set per training iteration;
//! * a "practical" signal-dependent model with per-pixel variance
//!   `a*x + b` (heteroscedastic Gaussian approximation of the
//!   Poissonian-Gaussian sensor model), with exact Poisson sampling as an
//!   opt-in.

use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use thiserror::Error;

use crate::image::ImageBuffer;

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("sigma must be non-negative, got {0}")]
    NegativeSigma(f64),
    #[error("noise coefficients must be non-negative, got a={0}, b={1}")]
    NegativeCoefficient(f64, f64),
    #[error("sigma set must be non-empty")]
    EmptySigmaSet,
    #[error("noisy and clean images must have identical dimensions")]
    DimensionMismatch,
}

/// Which noise family to synthesize, with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    /// AWGN with a fixed strength, in 8-bit units.
    Awgn { sigma: f64 },
    /// AWGN whose strength is drawn uniformly from `sigma_set` per iteration.
    VariableAwgn { sigma_set: Vec<f64> },
    /// Signal-dependent variance `a*x + b` per channel, in normalized units.
    /// `exact_poisson` replaces the Gaussian approximation of the shot-noise
    /// component with true Poisson draws.
    Practical { a: [f64; 3], b: [f64; 3], exact_poisson: bool },
}

/// Noise family plus the seed of its RNG stream.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub seed: u64,
}

/// Default `(a, b)` of the practical model. Placeholder values; the fitted
/// coefficients of the camera-noise simulator this stands in for are not
/// public, so these are meant to be overridden from the config.
pub const DEFAULT_PRACTICAL_A: f64 = 0.01;
pub const DEFAULT_PRACTICAL_B: f64 = 0.0001;

impl NoiseSpec {
    pub fn awgn(sigma: f64, seed: u64) -> Self {
        Self { kind: NoiseKind::Awgn { sigma }, seed }
    }

    pub fn variable_awgn(sigma_set: Vec<f64>, seed: u64) -> Self {
        Self { kind: NoiseKind::VariableAwgn { sigma_set }, seed }
    }

    pub fn practical(a: f64, b: f64, seed: u64) -> Self {
        Self { kind: NoiseKind::Practical { a: [a; 3], b: [b; 3], exact_poisson: false }, seed }
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        match &self.kind {
            NoiseKind::Awgn { sigma } => {
                if *sigma < 0.0 {
                    return Err(NoiseError::NegativeSigma(*sigma));
                }
            }
            NoiseKind::VariableAwgn { sigma_set } => {
                if sigma_set.is_empty() {
                    return Err(NoiseError::EmptySigmaSet);
                }
                for &s in sigma_set {
                    if s < 0.0 {
                        return Err(NoiseError::NegativeSigma(s));
                    }
                }
            }
            NoiseKind::Practical { a, b, .. } => {
                for ch in 0..3 {
                    if a[ch] < 0.0 || b[ch] < 0.0 {
                        return Err(NoiseError::NegativeCoefficient(a[ch], b[ch]));
                    }
                }
            }
        }
        Ok(())
    }

    /// The noise strength used for one training iteration. Fixed-sigma specs
    /// return their sigma; the variable spec draws uniformly from its set,
    /// keyed by `(seed, iteration)` so training is reproducible and resumable.
    pub fn sigma_for_iteration(&self, iteration: u64) -> Result<f64, NoiseError> {
        self.validate()?;
        match &self.kind {
            NoiseKind::Awgn { sigma } => Ok(*sigma),
            NoiseKind::VariableAwgn { sigma_set } => {
                let mut rng = derive_rng(self.seed, STREAM_SIGMA_CHOICE, iteration);
                Ok(sigma_set[rng.random_range(0..sigma_set.len())])
            }
            NoiseKind::Practical { .. } => Ok(0.0),
        }
    }

    /// Synthesize the noisy version of `clean`, with the RNG stream derived
    /// from `(seed, image_index)` so images are independent and the corpus
    /// is reproducible in any order.
    pub fn synthesize(&self, clean: &ImageBuffer, image_index: u64) -> Result<ImageBuffer, NoiseError> {
        self.validate()?;
        match &self.kind {
            NoiseKind::Awgn { sigma } => synth_awgn(clean, *sigma, mix(self.seed, image_index)),
            NoiseKind::VariableAwgn { sigma_set } => {
                let mut rng = derive_rng(self.seed, STREAM_SIGMA_CHOICE, image_index);
                let sigma = sigma_set[rng.random_range(0..sigma_set.len())];
                synth_awgn(clean, sigma, mix(self.seed, image_index))
            }
            NoiseKind::Practical { a, b, exact_poisson } => {
                synth_practical_full(clean, *a, *b, *exact_poisson, mix(self.seed, image_index))
            }
        }
    }
}

const STREAM_SIGMA_CHOICE: u64 = 0x9d_5a_b1;
const STREAM_PIXEL_NOISE: u64 = 0x6e_01_5e;

/// splitmix64; used to fold (seed, index) pairs into fresh RNG seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn mix(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x51_7c_c1_b7_27_22_0a_95)))
}

/// An RNG stream keyed by `(seed, domain, index)`. Streams with different
/// keys are independent for all practical purposes.
pub fn derive_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed, domain), index))
}

#[inline]
fn clip_quantize_8bit(v255: f64) -> f32 {
    let k = libm::round(v255.clamp(0.0, 255.0));
    (k / 255.0) as f32
}

/// Additive white Gaussian noise of strength `sigma` (8-bit units), then
/// clipping to `[0, 255]` and re-quantizing — the stored-noisy-image model.
pub fn synth_awgn(clean: &ImageBuffer, sigma: f64, seed: u64) -> Result<ImageBuffer, NoiseError> {
    if sigma < 0.0 {
        return Err(NoiseError::NegativeSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(clean.quantize_8bit());
    }
    let mut rng = derive_rng(seed, STREAM_PIXEL_NOISE, 0);
    let normal = Normal::new(0.0f64, sigma).expect("sigma validated");
    let data = clean
        .pixels()
        .iter()
        .map(|&x| clip_quantize_8bit(255.0 * x as f64 + normal.sample(&mut rng)))
        .collect::<Vec<f32>>();
    Ok(ImageBuffer::new(clean.height(), clean.width(), data).expect("same dims"))
}

/// Signal-dependent noise with per-pixel variance `a*x + b` in normalized
/// units, clipped and quantized like [`synth_awgn`].
pub fn synth_practical(
    clean: &ImageBuffer,
    a: [f64; 3],
    b: [f64; 3],
    seed: u64,
) -> Result<ImageBuffer, NoiseError> {
    synth_practical_full(clean, a, b, false, seed)
}

fn synth_practical_full(
    clean: &ImageBuffer,
    a: [f64; 3],
    b: [f64; 3],
    exact_poisson: bool,
    seed: u64,
) -> Result<ImageBuffer, NoiseError> {
    for ch in 0..3 {
        if a[ch] < 0.0 || b[ch] < 0.0 {
            return Err(NoiseError::NegativeCoefficient(a[ch], b[ch]));
        }
    }
    let mut rng = derive_rng(seed, STREAM_PIXEL_NOISE, 1);
    let unit_normal = Normal::new(0.0f64, 1.0).unwrap();
    let n = clean.pixels().len();
    let mut data = Vec::with_capacity(n);
    for (idx, &xf) in clean.pixels().iter().enumerate() {
        let ch = idx % 3;
        let x = xf as f64;
        let noisy = if exact_poisson && a[ch] > 0.0 {
            // Shot noise as a scaled Poisson draw with matching mean and
            // variance, plus the Gaussian read-noise floor.
            let shot = if x > 0.0 {
                a[ch] * Poisson::new(x / a[ch]).expect("positive rate").sample(&mut rng)
            } else {
                0.0
            };
            shot + libm::sqrt(b[ch]) * unit_normal.sample(&mut rng)
        } else {
            let std = libm::sqrt(a[ch] * x + b[ch]);
            x + std * unit_normal.sample(&mut rng)
        };
        data.push(clip_quantize_8bit(255.0 * noisy));
    }
    Ok(ImageBuffer::new(clean.height(), clean.width(), data).expect("same dims"))
}

/// A noise-strength estimate in 8-bit units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaEstimate {
    pub sigma: f64,
    /// Too few samples for a meaningful spread (single-pixel image).
    pub degenerate: bool,
}

/// Estimates the noise strength as the standard deviation of
/// `255 * (noisy - clean)` over all pixel values.
pub fn estimate_sigma(noisy: &ImageBuffer, clean: &ImageBuffer) -> Result<SigmaEstimate, NoiseError> {
    noisy.same_dims(clean).map_err(|_| NoiseError::DimensionMismatch)?;
    if noisy.height() * noisy.width() < 2 {
        return Ok(SigmaEstimate { sigma: 0.0, degenerate: true });
    }
    let n = noisy.pixels().len();
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for (&a, &b) in noisy.pixels().iter().zip(clean.pixels()) {
        let d = 255.0 * (a as f64 - b as f64);
        sum += d;
        sum_sq += d * d;
    }
    let mean = sum / n as f64;
    let var = (sum_sq - sum * mean).max(0.0) / (n as f64 - 1.0);
    Ok(SigmaEstimate { sigma: libm::sqrt(var), degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample_std_vs(clean: &ImageBuffer, noisy: &ImageBuffer) -> f64 {
        estimate_sigma(noisy, clean).unwrap().sigma
    }

    #[test]
    fn zero_sigma_is_quantized_identity() {
        let mut clean = ImageBuffer::constant(8, 8, 0.5);
        clean.set(0, 0, 0, 0.5001); // off-grid value, must snap
        let out = synth_awgn(&clean, 0.0, 42).unwrap();
        assert_eq!(out, clean.quantize_8bit());
    }

    #[test]
    fn awgn_std_matches_sigma_on_midgray() {
        let clean = ImageBuffer::constant(256, 256, 128.0 / 255.0);
        let out = synth_awgn(&clean, 25.0, 7).unwrap();
        let std = sample_std_vs(&clean, &out);
        assert!((24.5..=25.5).contains(&std), "std {std}");
    }

    #[test]
    fn awgn_output_stays_in_range() {
        let clean = ImageBuffer::constant(32, 32, 0.02);
        let out = synth_awgn(&clean, 80.0, 3).unwrap();
        for &v in out.pixels() {
            assert!((0.0..=1.0).contains(&v));
            let k = v * 255.0;
            assert!((k - k.round()).abs() < 1e-5, "not an 8-bit code point: {v}");
        }
    }

    #[test]
    fn awgn_is_deterministic_in_seed() {
        let clean = ImageBuffer::constant(16, 16, 0.6);
        let a = synth_awgn(&clean, 25.0, 9).unwrap();
        let b = synth_awgn(&clean, 25.0, 9).unwrap();
        let c = synth_awgn(&clean, 25.0, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn negative_parameters_are_rejected() {
        let clean = ImageBuffer::constant(4, 4, 0.5);
        assert_eq!(synth_awgn(&clean, -1.0, 0).unwrap_err(), NoiseError::NegativeSigma(-1.0));
        assert!(synth_practical(&clean, [-0.1; 3], [0.0; 3], 0).is_err());
        assert!(synth_practical(&clean, [0.0; 3], [-0.1; 3], 0).is_err());
    }

    #[test]
    fn practical_zero_coefficients_is_quantized_identity() {
        let clean = ImageBuffer::constant(8, 8, 0.3);
        let out = synth_practical(&clean, [0.0; 3], [0.0; 3], 5).unwrap();
        assert_eq!(out, clean.quantize_8bit());
    }

    #[test]
    fn practical_variance_matches_model_at_midpoint() {
        let clean = ImageBuffer::constant(512, 512, 0.5);
        let out = synth_practical(&clean, [0.01; 3], [0.0001; 3], 11).unwrap();
        let mut var = 0.0f64;
        for (&y, &x) in out.pixels().iter().zip(clean.pixels()) {
            let d = y as f64 - x as f64;
            var += d * d;
        }
        var /= out.pixels().len() as f64;
        let expected = 0.01 * 0.5 + 0.0001;
        assert!((var - expected).abs() < 0.05 * expected, "var {var} vs {expected}");
    }

    #[test]
    fn practical_variance_grows_with_intensity() {
        let lo = ImageBuffer::constant(128, 128, 0.25);
        let hi = ImageBuffer::constant(128, 128, 0.75);
        let var = |clean: &ImageBuffer| {
            let out = synth_practical(clean, [0.02; 3], [0.0001; 3], 13).unwrap();
            let s = sample_std_vs(clean, &out) / 255.0;
            s * s
        };
        assert!(var(&lo) < var(&hi));
    }

    #[test]
    fn exact_poisson_matches_variance_model() {
        let clean = ImageBuffer::constant(256, 256, 0.5);
        let spec = NoiseSpec {
            kind: NoiseKind::Practical { a: [0.01; 3], b: [0.0001; 3], exact_poisson: true },
            seed: 21,
        };
        let out = spec.synthesize(&clean, 0).unwrap();
        let s = sample_std_vs(&clean, &out) / 255.0;
        let expected = (0.01 * 0.5 + 0.0001f64).sqrt();
        assert!((s - expected).abs() < 0.05 * expected, "std {s} vs {expected}");
    }

    #[test]
    fn estimate_sigma_of_identical_images_is_zero() {
        let img = ImageBuffer::constant(16, 16, 0.4);
        let est = estimate_sigma(&img, &img).unwrap();
        assert_eq!(est.sigma, 0.0);
        assert!(!est.degenerate);
    }

    #[test]
    fn estimate_sigma_recovers_awgn_strength() {
        let clean = ImageBuffer::constant(512, 512, 0.5);
        let noisy = synth_awgn(&clean, 25.0, 17).unwrap();
        let est = estimate_sigma(&noisy, &clean).unwrap();
        assert!((24.5..=25.5).contains(&est.sigma), "sigma {}", est.sigma);
    }

    #[test]
    fn estimate_sigma_single_pixel_is_degenerate() {
        let a = ImageBuffer::constant(1, 1, 0.2);
        let b = ImageBuffer::constant(1, 1, 0.8);
        let est = estimate_sigma(&a, &b).unwrap();
        assert_eq!(est.sigma, 0.0);
        assert!(est.degenerate);
    }

    #[test]
    fn estimate_sigma_rejects_mismatched_dims() {
        let a = ImageBuffer::constant(4, 4, 0.5);
        let b = ImageBuffer::constant(4, 5, 0.5);
        assert_eq!(estimate_sigma(&a, &b).unwrap_err(), NoiseError::DimensionMismatch);
    }

    /// Per-strength accuracy of the estimator on clipped-quantized noise.
    /// For strengths where clipping is negligible the estimate must sit
    /// within +/-1 of sigma; for sigma=50 it is compared against the
    /// numerically integrated std of the clipped-quantized distribution.
    #[test]
    fn estimate_sigma_tracks_clipped_quantized_oracle() {
        use statrs::distribution::ContinuousCDF;
        let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();

        // Structured mid-range image: horizontal ramp over [0.2, 0.8].
        let h = 256;
        let w = 256;
        let mut data = Vec::with_capacity(h * w * 3);
        for r in 0..h {
            for c in 0..w {
                for ch in 0..3 {
                    let v = 0.2 + 0.6 * ((c + ch * 7 + r) % w) as f32 / w as f32;
                    data.push((v * 255.0).round() / 255.0);
                }
            }
        }
        let clean = ImageBuffer::new(h, w, data).unwrap();

        let oracle_std = |img: &ImageBuffer, sigma: f64| {
            // First two moments of round(clip(v + n)) - v per 8-bit level v,
            // averaged over the image's level histogram.
            let mut hist = [0u64; 256];
            for &x in img.pixels() {
                hist[(x * 255.0).round() as usize] += 1;
            }
            let phi = |x: f64| normal.cdf(x);
            let (mut m1, mut m2, mut n) = (0.0f64, 0.0f64, 0u64);
            for (v, &count) in hist.iter().enumerate() {
                if count == 0 {
                    continue;
                }
                let v = v as f64;
                let (mut e1, mut e2) = (0.0f64, 0.0f64);
                for k in 0..=255u32 {
                    let k = k as f64;
                    let lo = if k == 0.0 { 0.0 } else { phi((k - 0.5 - v) / sigma) };
                    let hi = if k == 255.0 { 1.0 } else { phi((k + 0.5 - v) / sigma) };
                    let p = (hi - lo).max(0.0);
                    e1 += (k - v) * p;
                    e2 += (k - v) * (k - v) * p;
                }
                m1 += count as f64 * e1;
                m2 += count as f64 * e2;
                n += count;
            }
            m1 /= n as f64;
            m2 /= n as f64;
            (m2 - m1 * m1).sqrt()
        };

        for (sigma, vs_oracle) in [(15.0, false), (25.0, false), (50.0, true)] {
            let noisy = synth_awgn(&clean, sigma, 100 + sigma as u64).unwrap();
            let est = estimate_sigma(&noisy, &clean).unwrap().sigma;
            if vs_oracle {
                let want = oracle_std(&clean, sigma);
                assert!(
                    (est - want).abs() < 0.02 * want,
                    "sigma {sigma}: estimate {est} vs oracle {want}"
                );
            } else {
                assert!(
                    (est - sigma).abs() <= 1.0,
                    "sigma {sigma}: estimate {est} drifted"
                );
            }
        }
    }

    #[test]
    fn variable_sigma_draws_are_roughly_uniform() {
        let spec = NoiseSpec::variable_awgn(vec![50.0, 25.0, 15.0], 77);
        let mut counts = [0u32; 3];
        let iters = 3000;
        for it in 0..iters {
            let s = spec.sigma_for_iteration(it).unwrap();
            let slot = match s as u32 {
                50 => 0,
                25 => 1,
                15 => 2,
                _ => panic!("unexpected sigma {s}"),
            };
            counts[slot] += 1;
        }
        for &c in &counts {
            let f = c as f64 / iters as f64;
            assert!((0.30..=0.37).contains(&f), "frequency {f} out of band");
        }
    }
}
