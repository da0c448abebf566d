//! Distortion metrics on the 8-bit pixel scale.

use crate::image::{ImageBuffer, ImageError};

/// Mean squared error on the `[0, 255]` scale.
pub fn mse_255(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, ImageError> {
    a.same_dims(b)?;
    let mut acc = 0.0f64;
    for (&x, &y) in a.pixels().iter().zip(b.pixels()) {
        let d = 255.0 * (x as f64 - y as f64);
        acc += d * d;
    }
    Ok(acc / a.pixels().len() as f64)
}

/// Values above this are reported as exactly 100 dB (identical images give
/// infinite PSNR otherwise).
pub const PSNR_CAP_DB: f64 = 100.0;

/// Peak signal-to-noise ratio in dB with a 255 peak, capped at 100 dB.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, ImageError> {
    let mse = mse_255(a, b)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * libm::log10(255.0 * 255.0 / mse)).min(PSNR_CAP_DB))
}
