//! Element type abstraction for the numerical code.
//!
//! The transforms and the training loss run in `f32`; gradient verification
//! against central finite differences runs the same code in `f64`. `Scalar`
//! is the small surface both need: ndarray linear algebra plus the special
//! functions used by the entropy models.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, NumAssign};

pub trait Scalar:
    Float
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + core::fmt::Debug
    + core::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn lift(v: f64) -> Self;
    fn as_f64(self) -> f64;
    /// Complementary error function (more accurate than `1 - erf` in the tails).
    fn erfc_(self) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn lift(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn erfc_(self) -> Self {
        libm::erfcf(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn lift(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn erfc_(self) -> Self {
        libm::erfc(self)
    }
}

/// Shorthand for lifting an `f64` constant into the generic element type.
#[inline]
pub fn c<F: Scalar>(v: f64) -> F {
    F::lift(v)
}

/// Standard normal CDF, evaluated via `erfc` so that deep tails keep
/// full relative precision.
#[inline]
pub fn normal_cdf<F: Scalar>(x: F) -> F {
    let half = c::<F>(0.5);
    let inv_sqrt2 = c::<F>(core::f64::consts::FRAC_1_SQRT_2);
    half * (-x * inv_sqrt2).erfc_()
}

/// Standard normal density.
#[inline]
pub fn normal_pdf<F: Scalar>(x: F) -> F {
    let inv_sqrt_2pi = c::<F>(0.3989422804014327);
    inv_sqrt_2pi * (-x * x * c::<F>(0.5)).exp()
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus<F: Scalar>(x: F) -> F {
    if x > c::<F>(30.0) {
        x
    } else if x < c::<F>(-30.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_matches_reference() {
        use statrs::distribution::ContinuousCDF;
        let n = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
        for &x in &[-8.0, -3.0, -0.5, 0.0, 0.5, 1.0, 4.0, 8.0] {
            let got: f64 = normal_cdf(x);
            let want = n.cdf(x);
            assert!((got - want).abs() < 5e-11, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn tail_cdf_keeps_relative_precision() {
        let p: f64 = normal_cdf(-10.0);
        // Reference value of Phi(-10) to a few digits.
        assert!((p / 7.619853e-24 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn softplus_limits() {
        assert!((softplus(0.0f64) - core::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(softplus(100.0f64), 100.0);
        assert!(softplus(-100.0f64) > 0.0);
    }
}
