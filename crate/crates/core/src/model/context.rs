//! Incremental entropy-parameter evaluation.
//!
//! During (de)coding, the elements of a layer are visited in raster order;
//! at each position the masked context convolution may read only positions
//! already decoded. This module evaluates the context + entropy-parameter
//! stack at a single position, sharing the exact parameters of the batch
//! path, so the encoder-side pass and the decoder reproduce each other
//! bit-for-bit.

use alloc::format;
use alloc::vec::Vec;
use ndarray::{linalg::general_mat_vec_mul, Array1, Array2, Array3, Array4, s};

use crate::entropy::SIGMA_MIN;
use crate::scalar::{c, softplus, Scalar};

use super::net::{ep_specs, CONTEXT_KERNEL, LEAKY_ALPHA};
use super::{CodingLayer, ModelConfig, ModelError, ParamSet};

/// Context and entropy-parameter weights of one layer, extracted once per
/// (de)coding run.
pub struct LayerCoder<F: Scalar> {
    layer_channels: usize,
    hyper_channels: usize,
    /// `(2L, L)` weight matrix per causal kernel offset.
    ctx_taps: Vec<(isize, isize, Array2<F>)>,
    ctx_bias: Array1<F>,
    ep: Vec<(Array2<F>, Array1<F>)>,
}

impl<F: Scalar> LayerCoder<F> {
    pub fn new(
        params: &ParamSet<F>,
        cfg: &ModelConfig,
        layer: CodingLayer,
    ) -> Result<Self, ModelError> {
        let l = layer.channels(cfg);
        let tag = layer.tag();
        let ctx_w = params
            .expect(&format!("ctx_{tag}.w"))?
            .view()
            .into_dimensionality::<ndarray::Ix4>()
            .map_err(|_| ModelError::MissingParam(format!("ctx_{tag}.w shape")))?
            .to_owned();
        let ctx_bias = params
            .expect(&format!("ctx_{tag}.b"))?
            .iter()
            .copied()
            .collect::<Array1<F>>();
        let taps = causal_taps(&ctx_w);
        let mut ep = Vec::new();
        for spec in ep_specs(cfg, layer) {
            let w: Array4<F> = params
                .expect(&format!("{}.w", spec.name))?
                .view()
                .into_dimensionality::<ndarray::Ix4>()
                .map_err(|_| ModelError::MissingParam(format!("{} shape", spec.name)))?
                .to_owned();
            // 1x1 convolutions act as plain matrices on the channel axis.
            let (cout, cin, _, _) = w.dim();
            let m = w.into_shape_with_order((cout, cin)).expect("1x1 kernel");
            let b =
                params.expect(&format!("{}.b", spec.name))?.iter().copied().collect::<Array1<F>>();
            ep.push((m, b));
        }
        Ok(Self {
            layer_channels: l,
            hyper_channels: cfg.hyper_feature_channels(),
            ctx_taps: taps,
            ctx_bias,
            ep,
        })
    }

    pub fn layer_channels(&self) -> usize {
        self.layer_channels
    }

    /// Entropy parameters of every channel at raster position `(n, m)`.
    ///
    /// `decoded` is the layer's reconstruction buffer; only positions before
    /// `(n, m)` in raster order are read (enforced by the causal taps), so
    /// the contents of later positions are irrelevant.
    pub fn entropy_params_at(
        &self,
        decoded: &Array3<F>,
        hyper_features: &Array3<F>,
        n: usize,
        m: usize,
    ) -> (Vec<F>, Vec<F>) {
        let (l, rows, cols) = decoded.dim();
        debug_assert_eq!(l, self.layer_channels);
        let center = (CONTEXT_KERNEL / 2) as isize;
        let mut ctx = self.ctx_bias.clone();
        for (dr, dc, w) in &self.ctx_taps {
            let r = n as isize + dr - center;
            let cc = m as isize + dc - center;
            if r < 0 || cc < 0 || r >= rows as isize || cc >= cols as isize {
                continue;
            }
            let col = decoded.slice(s![.., r as usize, cc as usize]);
            general_mat_vec_mul(F::one(), w, &col, F::one(), &mut ctx);
        }
        // EP input: hyper features at this position, then context features.
        let mut v = Array1::<F>::zeros(self.hyper_channels + ctx.len());
        v.slice_mut(s![..self.hyper_channels])
            .assign(&hyper_features.slice(s![.., n, m]));
        v.slice_mut(s![self.hyper_channels..]).assign(&ctx);
        let last = self.ep.len() - 1;
        for (idx, (w, b)) in self.ep.iter().enumerate() {
            let mut out = b.clone();
            general_mat_vec_mul(F::one(), w, &v, F::one(), &mut out);
            if idx < last {
                let alpha = c::<F>(LEAKY_ALPHA);
                out.mapv_inplace(|x| if x > F::zero() { x } else { x * alpha });
            }
            v = out;
        }
        let mu = v.slice(s![..self.layer_channels]).to_vec();
        let sigma = v
            .slice(s![self.layer_channels..])
            .iter()
            .map(|&r| softplus(r) + c::<F>(SIGMA_MIN))
            .collect();
        (mu, sigma)
    }
}

/// Kernel offsets the causal mask keeps, with their `(2L, L)` tap matrices.
fn causal_taps<F: Scalar>(ctx_w: &Array4<F>) -> Vec<(isize, isize, Array2<F>)> {
    let (cout, cin, k, _) = ctx_w.dim();
    let center = k / 2;
    let mut taps = Vec::new();
    for r in 0..k {
        for c in 0..k {
            if r < center || (r == center && c < center) {
                let mut w = Array2::<F>::zeros((cout, cin));
                for o in 0..cout {
                    for i in 0..cin {
                        w[[o, i]] = ctx_w[[o, i, r, c]];
                    }
                }
                taps.push((r as isize, c as isize, w));
            }
        }
    }
    taps
}

/// Zeroes every raster position at or after `(n, m)`.
pub fn zero_from<F: Scalar>(t: &Array3<F>, n: usize, m: usize) -> Array3<F> {
    let mut out = t.clone();
    let (_, rows, cols) = out.dim();
    for r in 0..rows {
        for cc in 0..cols {
            if r > n || (r == n && cc >= m) {
                out.slice_mut(s![.., r, cc]).fill(F::zero());
            }
        }
    }
    out
}

/// The built-in mask audit: entropy parameters at `(n, m)` must be identical
/// whether or not the current and future positions hold data. Returns the
/// largest absolute deviation (0.0 when causality holds, as it must).
pub fn causality_audit<F: Scalar>(
    coder: &LayerCoder<F>,
    decoded: &Array3<F>,
    hyper_features: &Array3<F>,
    n: usize,
    m: usize,
) -> f64 {
    let (mu_a, sig_a) = coder.entropy_params_at(decoded, hyper_features, n, m);
    let scrubbed = zero_from(decoded, n, m);
    let (mu_b, sig_b) = coder.entropy_params_at(&scrubbed, hyper_features, n, m);
    let mut worst = 0.0f64;
    for (a, b) in mu_a.iter().zip(&mu_b).chain(sig_a.iter().zip(&sig_b)) {
        worst = worst.max((a.as_f64() - b.as_f64()).abs());
    }
    worst
}
