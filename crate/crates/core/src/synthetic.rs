//! Deterministic synthetic image corpus.
//!
//! Desk-scale training and evaluation need a reproducible set of clean RGB
//! images without shipping a dataset. Images are piecewise-smooth: a random
//! linear gradient base, a handful of soft-edged ellipses, and a mild
//! low-frequency texture, snapped to the 8-bit grid like any stored image.

use alloc::vec::Vec;
use rand::Rng;

use crate::image::ImageBuffer;
use crate::noise::derive_rng;

const STREAM_SYNTH: u64 = 0x5e_ed_ca_fe;

/// One synthetic clean image, fully determined by `(h, w, seed)`.
pub fn generate_image(h: usize, w: usize, seed: u64) -> ImageBuffer {
    let mut rng = derive_rng(seed, STREAM_SYNTH, (h as u64) << 32 | w as u64);
    let mut planes = [[0.0f64; 3]; 2];
    for p in planes.iter_mut() {
        for v in p.iter_mut() {
            *v = rng.random_range(0.15..0.85);
        }
    }
    // Gradient direction and per-channel endpoints.
    let angle: f64 = rng.random_range(0.0..core::f64::consts::TAU);
    let (gx, gy) = (libm::cos(angle), libm::sin(angle));

    struct Blob {
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        color: [f64; 3],
        soft: f64,
    }
    let n_blobs = rng.random_range(3..9);
    let blobs: Vec<Blob> = (0..n_blobs)
        .map(|_| Blob {
            cx: rng.random_range(0.0..1.0),
            cy: rng.random_range(0.0..1.0),
            rx: rng.random_range(0.08..0.35),
            ry: rng.random_range(0.08..0.35),
            color: [
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95),
            ],
            soft: rng.random_range(0.05..0.25),
        })
        .collect();

    let (fx, fy): (f64, f64) = (rng.random_range(1.0..4.0), rng.random_range(1.0..4.0));
    let tex_amp: f64 = rng.random_range(0.01..0.05);
    let phase: f64 = rng.random_range(0.0..core::f64::consts::TAU);

    let mut data = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            let x = c as f64 / w.max(2) as f64;
            let y = r as f64 / h.max(2) as f64;
            let t = ((x - 0.5) * gx + (y - 0.5) * gy + 0.5).clamp(0.0, 1.0);
            let tex = tex_amp * libm::sin(core::f64::consts::TAU * (fx * x + fy * y) + phase);
            for ch in 0..3 {
                let mut v = planes[0][ch] * (1.0 - t) + planes[1][ch] * t;
                for b in &blobs {
                    let ex = (x - b.cx) / b.rx;
                    let ey = (y - b.cy) / b.ry;
                    let d = ex * ex + ey * ey;
                    // Smoothstep falloff from the ellipse boundary.
                    let e = ((1.0 - d) / b.soft).clamp(0.0, 1.0);
                    let wgt = e * e * (3.0 - 2.0 * e);
                    v = v * (1.0 - wgt) + b.color[ch] * wgt;
                }
                v += tex;
                data.push((libm::round(v.clamp(0.0, 1.0) * 255.0) / 255.0) as f32);
            }
        }
    }
    ImageBuffer::new(h, w, data).expect("valid dims")
}

/// A corpus of `count` images sharing a seed stream.
pub fn generate_corpus(count: usize, h: usize, w: usize, seed: u64) -> Vec<ImageBuffer> {
    (0..count).map(|i| generate_image(h, w, seed.wrapping_add(i as u64 * 7919))).collect()
}
