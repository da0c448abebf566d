//! Padding to the input granularity of the transforms.
//!
//! The analysis/synthesis pair needs dimensions that are multiples of 64.
//! Images are reflect-padded on the bottom and right edges (mirrored without
//! gaps, repeating for very small inputs), and decoded images are cropped
//! back to the original size.

use alloc::vec::Vec;

use crate::image::{ImageBuffer, CHANNELS};

pub const ALIGNMENT: usize = 64;

/// The original height and width recorded before padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrigDims {
    pub height: usize,
    pub width: usize,
}

pub fn next_multiple_of_64(n: usize) -> usize {
    n.div_ceil(ALIGNMENT) * ALIGNMENT
}

/// Mirror index for symmetric extension of a length-`n` signal.
#[inline]
fn reflect(i: usize, n: usize) -> usize {
    let period = 2 * n;
    let m = i % period;
    if m < n {
        m
    } else {
        period - 1 - m
    }
}

/// Reflect-pads `x` on the bottom/right up to the next multiples of 64.
pub fn pad_to_64(x: &ImageBuffer) -> (ImageBuffer, OrigDims) {
    let orig = OrigDims { height: x.height(), width: x.width() };
    let ph = next_multiple_of_64(orig.height);
    let pw = next_multiple_of_64(orig.width);
    if ph == orig.height && pw == orig.width {
        return (x.clone(), orig);
    }
    let mut data = Vec::with_capacity(ph * pw * CHANNELS);
    for r in 0..ph {
        let sr = reflect(r, orig.height);
        for c in 0..pw {
            let sc = reflect(c, orig.width);
            for ch in 0..CHANNELS {
                data.push(x.get(sr, sc, ch));
            }
        }
    }
    (ImageBuffer::new(ph, pw, data).expect("padded dims valid"), orig)
}

/// Crops the top-left `orig` region back out of a padded/decoded image.
pub fn crop_back(y: &ImageBuffer, orig: OrigDims) -> ImageBuffer {
    assert!(
        y.height() >= orig.height && y.width() >= orig.width,
        "crop target {}x{} exceeds image {}x{}",
        orig.height,
        orig.width,
        y.height(),
        y.width()
    );
    if y.height() == orig.height && y.width() == orig.width {
        return y.clone();
    }
    let mut data = Vec::with_capacity(orig.height * orig.width * CHANNELS);
    for r in 0..orig.height {
        for c in 0..orig.width {
            for ch in 0..CHANNELS {
                data.push(y.get(r, c, ch));
            }
        }
    }
    ImageBuffer::new(orig.height, orig.width, data).expect("crop dims valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pads_to_next_multiple() {
        assert_eq!(next_multiple_of_64(500), 512);
        assert_eq!(next_multiple_of_64(321), 384);
        assert_eq!(next_multiple_of_64(481), 512);
        assert_eq!(next_multiple_of_64(512), 512);
        assert_eq!(next_multiple_of_64(1), 64);
    }

    #[test]
    fn pad_dimensions_match_contract() {
        let img = ImageBuffer::constant(500, 500, 0.5);
        let (p, orig) = pad_to_64(&img);
        assert_eq!((p.height(), p.width()), (512, 512));
        assert_eq!((orig.height, orig.width), (500, 500));

        let img = ImageBuffer::constant(321, 481, 0.5);
        let (p, _) = pad_to_64(&img);
        assert_eq!((p.height(), p.width()), (384, 512));
    }

    #[test]
    fn aligned_input_is_unchanged() {
        let img = ImageBuffer::constant(512, 512, 0.25);
        let (p, _) = pad_to_64(&img);
        assert_eq!(p, img);
    }

    #[test]
    fn padding_is_mirrored_not_extended() {
        // 2x1 ramp: padded rows just below the edge must mirror back up.
        let img = ImageBuffer::new(2, 1, alloc::vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let (p, _) = pad_to_64(&img);
        assert_eq!(p.get(0, 0, 0), 0.0);
        assert_eq!(p.get(1, 0, 0), 1.0);
        assert_eq!(p.get(2, 0, 0), 1.0);
        assert_eq!(p.get(3, 0, 0), 0.0);
    }

    #[test]
    fn crop_back_restores_large_strip() {
        // Exercise the top of the supported size range without a huge square.
        let img = ImageBuffer::constant(4096, 3, 0.75);
        let (p, orig) = pad_to_64(&img);
        assert_eq!((p.height(), p.width()), (4096, 64));
        assert_eq!(crop_back(&p, orig), img);
    }

    proptest! {
        #[test]
        fn crop_back_of_pad_is_identity(h in 1usize..150, w in 1usize..150, seed in 0u64..1000) {
            let mut img = ImageBuffer::constant(h, w, 0.0);
            let mut state = seed;
            for v in img.pixels_mut() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *v = ((state >> 40) as f32 / 16777216.0 * 255.0).round() / 255.0;
            }
            let (p, orig) = pad_to_64(&img);
            prop_assert!(p.height() % 64 == 0 && p.width() % 64 == 0);
            prop_assert_eq!(crop_back(&p, orig), img);
        }
    }
}
