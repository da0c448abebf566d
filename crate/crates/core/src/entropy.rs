//! Quantization and the discrete entropy models.
//!
//! Latent elements are coded under a discretized Gaussian whose `(mu, sigma)`
//! come from the context/entropy-parameter networks; hyper-latent elements
//! under a per-channel logistic ("factorized") prior. In both cases the
//! integer symbol is the residual `round(v - mu)` and the bin probability is
//! the CDF mass of a unit-width bin, so the same closed form drives the rate
//! estimate, the training loss and the range coder.

use alloc::vec::Vec;

use crate::coder::Pmf;
use crate::scalar::{c, normal_cdf, Scalar};

/// Scale floor of every conditional Gaussian; keeps likelihoods and rate
/// gradients bounded.
pub const SIGMA_MIN: f64 = 0.11;

/// Probability floor used by rate estimation and the coder: `2^-32`.
pub const P_MIN: f64 = 1.0 / 4294967296.0;

/// Largest residual magnitude the coder will build a support for.
pub const MAX_SUPPORT_HALF_WIDTH: i32 = 4096;

/// Inference quantization: round the residual against the predicted mean,
/// then restore the mean.
#[inline]
pub fn quantize_infer<F: Scalar>(v: F, mu: F) -> F {
    (v - mu).round() + mu
}

/// The integer symbol actually coded for an element.
#[inline]
pub fn quantize_symbol<F: Scalar>(v: F, mu: F) -> i32 {
    (v - mu).round().as_f64() as i32
}

/// Training quantization surrogate: additive uniform noise in `[-0.5, 0.5)`.
/// The draw is supplied by the caller so training stays seed-deterministic.
#[inline]
pub fn quantize_train<F: Scalar>(v: F, u: F) -> F {
    v + u
}

/// Mass of the unit bin centered on `value` under `Normal(mu, sigma)`:
/// `Phi((d+0.5)/sigma) - Phi((d-0.5)/sigma)` with `d = value - mu`.
///
/// Evaluated on the far side of the symmetry axis so the two CDF values never
/// cancel catastrophically. No probability floor is applied here; the bin
/// masses of one distribution sum to 1.
pub fn gaussian_bin_prob<F: Scalar>(value: F, mu: F, sigma: F) -> F {
    debug_assert!(sigma > F::zero());
    let d = (value - mu).abs();
    let half = c::<F>(0.5);
    // Both arguments non-positive: evaluate in the lower tail.
    let upper = normal_cdf((half - d) / sigma);
    let lower = normal_cdf((-half - d) / sigma);
    (upper - lower).max(F::zero())
}

/// [`gaussian_bin_prob`] with the `2^-32` floor applied — the form used by
/// rate estimation and the range coder. `sigma` must respect [`SIGMA_MIN`].
pub fn gaussian_bin_prob_floored<F: Scalar>(value: F, mu: F, sigma: F) -> F {
    assert!(
        sigma.as_f64() >= SIGMA_MIN - 1e-9,
        "sigma {sigma} below the {SIGMA_MIN} floor"
    );
    gaussian_bin_prob(value, mu, sigma).max(c::<F>(P_MIN))
}

/// Logistic CDF `1 / (1 + exp(-x/scale))`, the per-channel prior of the
/// hyper-latent. Strictly increasing onto `(0, 1)`.
pub fn logistic_cdf<F: Scalar>(x: F, scale: F) -> F {
    let z = x / scale;
    let one = F::one();
    if z >= F::zero() {
        one / (one + (-z).exp())
    } else {
        let e = z.exp();
        e / (one + e)
    }
}

/// Unit-bin mass at integer residual `k` under the zero-centered logistic.
pub fn logistic_bin_prob<F: Scalar>(k: F, scale: F) -> F {
    let d = k.abs();
    let half = c::<F>(0.5);
    // Tail-side evaluation, mirroring gaussian_bin_prob.
    let upper = logistic_cdf((half - d) / scale, F::one());
    let lower = logistic_cdf((-half - d) / scale, F::one());
    (upper - lower).max(F::zero())
}

/// PMF of integer residuals in `[-half_width, half_width]` under a
/// zero-centered discretized Gaussian, floored for coding.
pub fn gaussian_residual_pmf(sigma: f64, half_width: i32) -> Pmf {
    let mut probs = Vec::with_capacity((2 * half_width + 1) as usize);
    for k in -half_width..=half_width {
        probs.push(gaussian_bin_prob_floored(k as f64, 0.0, sigma));
    }
    Pmf::new(-half_width, probs)
}

/// PMF of integer residuals under the zero-centered logistic prior.
pub fn logistic_residual_pmf(scale: f64, half_width: i32) -> Pmf {
    let mut probs = Vec::with_capacity((2 * half_width + 1) as usize);
    for k in -half_width..=half_width {
        probs.push(logistic_bin_prob(k as f64, scale).max(P_MIN));
    }
    Pmf::new(-half_width, probs)
}

/// Ideal code length `sum(-log2 p)` in bits. Probabilities must be positive;
/// the floor in the bin-probability functions guarantees that for them.
pub fn bits_from_probs<'a, I: IntoIterator<Item = &'a f64>>(probs: I) -> f64 {
    let mut bits = 0.0f64;
    for &p in probs {
        assert!(p > 0.0 && p <= 1.0, "probability {p} outside (0, 1]");
        bits -= libm::log2(p);
    }
    bits
}

/// Total estimated rate of an image: latent and hyper-prior terms.
pub fn estimate_rate(latent_probs: &[f64], hyper_probs: &[f64]) -> f64 {
    bits_from_probs(latent_probs) + bits_from_probs(hyper_probs)
}
