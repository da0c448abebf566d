//! The neural transforms and the latent partition.
//!
//! One analysis transform maps the (noisy) input image to a latent tensor
//! whose channels are split into a base layer (first `i` channels) and an
//! enhancement layer (the rest). Two synthesis transforms decode them: the
//! base decoder sees only base channels and produces the denoised image, the
//! full decoder sees all channels and reproduces the noisy input. A
//! hyper-autoencoder plus per-layer causal context models provide the
//! entropy parameters; the two layers never condition on each other, so the
//! two bitstreams stay independently decodable.

pub mod context;
pub mod net;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use ndarray::{Array1, Array3, Array4, ArrayD, Axis, IxDyn, s};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::entropy::SIGMA_MIN;
use crate::graph::Graph;
use crate::image::ImageBuffer;
use crate::scalar::{c, softplus, Scalar};

/// Spatial downsampling of the analysis transform (four stride-2 stages).
pub const ANALYSIS_STRIDE: usize = 16;
/// Further downsampling of the hyper-analysis relative to the latent grid.
pub const HYPER_STRIDE: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("base channels {base} outside 1..={total}")]
    BadChannelSplit { base: usize, total: usize },
    #[error("input {h}x{w} is not a multiple of {alignment} (pad first)")]
    InputNotAligned { h: usize, w: usize, alignment: usize },
    #[error("latent grid {n}x{m} is not a multiple of {HYPER_STRIDE}")]
    LatentNotAligned { n: usize, m: usize },
    #[error("expected {expected} channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error("parameter {name} has shape {got:?}, expected {expected:?}")]
    ParamShape { name: String, expected: Vec<usize>, got: Vec<usize> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Paper,
    Toy,
    Custom,
}

/// Architecture hyperparameters. `total_channels` is the latent width `C`,
/// `base_channels` the split point `i`; `width` scales every internal block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub profile: Profile,
    pub total_channels: usize,
    pub base_channels: usize,
    pub width: usize,
    pub hyper_channels: usize,
    pub use_attention: bool,
}

impl ModelConfig {
    /// Full-size model: C = 192 with the split point chosen per noise level
    /// (160 for the strongest noise, 180 for the variable-noise model, 190
    /// for the weakest).
    pub fn paper(base_channels: usize) -> Self {
        Self {
            profile: Profile::Paper,
            total_channels: 192,
            base_channels,
            width: 192,
            hyper_channels: 192,
            use_attention: false,
        }
    }

    /// Desk-scale model: C = 48, i = 40, block widths at a quarter of the
    /// full size. Trains in minutes while keeping every structural property.
    pub fn toy() -> Self {
        Self {
            profile: Profile::Toy,
            total_channels: 48,
            base_channels: 40,
            width: 48,
            hyper_channels: 48,
            use_attention: false,
        }
    }

    /// Minimal model for fast unit tests.
    pub fn micro() -> Self {
        Self {
            profile: Profile::Custom,
            total_channels: 8,
            base_channels: 6,
            width: 8,
            hyper_channels: 8,
            use_attention: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.base_channels == 0 || self.base_channels > self.total_channels {
            return Err(ModelError::BadChannelSplit {
                base: self.base_channels,
                total: self.total_channels,
            });
        }
        Ok(())
    }

    pub fn enhancement_channels(&self) -> usize {
        self.total_channels - self.base_channels
    }

    /// Channel width of the feature map the hyper-decoder hands to the
    /// entropy-parameter heads.
    pub fn hyper_feature_channels(&self) -> usize {
        self.width
    }
}

/// Which coding layer an entropy model belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodingLayer {
    Base,
    Enhancement,
}

impl CodingLayer {
    pub fn channels(self, cfg: &ModelConfig) -> usize {
        match self {
            CodingLayer::Base => cfg.base_channels,
            CodingLayer::Enhancement => cfg.enhancement_channels(),
        }
    }

    pub(crate) fn tag(self) -> &'static str {
        match self {
            CodingLayer::Base => "base",
            CodingLayer::Enhancement => "enh",
        }
    }
}

/// A `(channels, N, M)` latent tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor<F: Scalar>(pub Array3<F>);

impl<F: Scalar> LatentTensor<F> {
    pub fn channels(&self) -> usize {
        self.0.dim().0
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.0.dim().1, self.0.dim().2)
    }
}

/// Disjoint, exhaustive split of a latent tensor at channel `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPartition<F: Scalar> {
    pub base: LatentTensor<F>,
    pub enhancement: LatentTensor<F>,
}

/// Splits the first `i` channels into the base layer; channel order is
/// preserved and `merge_latent` restores the input exactly.
pub fn split_latent<F: Scalar>(
    y: &LatentTensor<F>,
    base_channels: usize,
) -> Result<LatentPartition<F>, ModelError> {
    let total = y.channels();
    if base_channels == 0 || base_channels > total {
        return Err(ModelError::BadChannelSplit { base: base_channels, total });
    }
    let base = y.0.slice(s![..base_channels, .., ..]).to_owned();
    let enhancement = y.0.slice(s![base_channels.., .., ..]).to_owned();
    Ok(LatentPartition { base: LatentTensor(base), enhancement: LatentTensor(enhancement) })
}

pub fn merge_latent<F: Scalar>(p: &LatentPartition<F>) -> LatentTensor<F> {
    if p.enhancement.channels() == 0 {
        return p.base.clone();
    }
    let merged = ndarray::concatenate(Axis(0), &[p.base.0.view(), p.enhancement.0.view()])
        .expect("matching spatial dims");
    LatentTensor(merged)
}

/// Named weight arrays. Keys iterate in lexicographic order, which fixes the
/// update and serialization order everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<F: Scalar> {
    entries: BTreeMap<String, ArrayD<F>>,
}

impl<F: Scalar> Default for ParamSet<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamSet<F> {
    pub fn new() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, value: ArrayD<F>) {
        self.entries.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<F>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<F>> {
        self.entries.get_mut(name)
    }

    pub fn expect(&self, name: &str) -> Result<&ArrayD<F>, ModelError> {
        self.entries.get(name).ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<F>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<F>)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|v| v.len()).sum()
    }

    /// Exact-widening (or narrowing) element conversion.
    pub fn convert<G: Scalar>(&self) -> ParamSet<G> {
        let mut out = ParamSet::new();
        for (k, v) in &self.entries {
            out.insert(k, v.mapv(|x| c::<G>(x.as_f64())));
        }
        out
    }

    /// Checks that exactly the parameters `cfg` expects are present, with
    /// the right shapes.
    pub fn validate_against(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let expected = net::expected_param_shapes(cfg);
        for (name, shape) in &expected {
            let arr = self.expect(name)?;
            if arr.shape() != &shape[..] {
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    got: arr.shape().to_vec(),
                });
            }
        }
        for name in self.entries.keys() {
            if !expected.contains_key(name) {
                return Err(ModelError::MissingParam(format!("unexpected parameter {name}")));
            }
        }
        Ok(())
    }
}

/// Fresh parameters: variance-scaling fan-in normals for weights, zeros for
/// biases. Draws happen in `f64` so both element types see identical values.
pub fn init_params<F: Scalar>(cfg: &ModelConfig, seed: u64) -> ParamSet<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908);
    let unit = Normal::new(0.0f64, 1.0).unwrap();
    let mut params = ParamSet::new();
    for (name, shape) in net::expected_param_shapes(cfg) {
        let arr = if name.ends_with(".b") || name == "prior.loc" {
            ArrayD::from_elem(IxDyn(&shape), F::zero())
        } else if name == "prior.scale_raw" {
            // softplus(0.35) + SIGMA_MIN gives an initial scale near 1.
            ArrayD::from_elem(IxDyn(&shape), c::<F>(0.35))
        } else {
            let fan_in = net::fan_in(&name, &shape);
            let std = libm::sqrt(1.0 / fan_in as f64);
            ArrayD::from_shape_fn(IxDyn(&shape), |_| c::<F>(unit.sample(&mut rng) * std))
        };
        params.insert(&name, arr);
    }
    params
}

/// Per-channel logistic prior of the hyper-latent, with the scale floor
/// already applied.
#[derive(Debug, Clone)]
pub struct FactorizedPrior<F: Scalar> {
    pub loc: Array1<F>,
    pub scale: Array1<F>,
}

pub fn factorized_prior<F: Scalar>(
    params: &ParamSet<F>,
    cfg: &ModelConfig,
) -> Result<FactorizedPrior<F>, ModelError> {
    let loc = params.expect("prior.loc")?;
    let raw = params.expect("prior.scale_raw")?;
    if loc.len() != cfg.hyper_channels || raw.len() != cfg.hyper_channels {
        return Err(ModelError::ChannelMismatch { expected: cfg.hyper_channels, got: loc.len() });
    }
    let loc = loc.iter().copied().collect::<Array1<F>>();
    let scale = raw.iter().map(|&r| softplus(r) + c::<F>(SIGMA_MIN)).collect::<Array1<F>>();
    Ok(FactorizedPrior { loc, scale })
}

pub fn image_to_tensor<F: Scalar>(img: &ImageBuffer) -> Array4<F> {
    let (h, w) = (img.height(), img.width());
    let mut t = Array4::<F>::zeros((1, 3, h, w));
    for r in 0..h {
        for cc in 0..w {
            for ch in 0..3 {
                t[[0, ch, r, cc]] = c::<F>(img.get(r, cc, ch) as f64);
            }
        }
    }
    t
}

/// Converts a `(1, 3, H, W)` tensor to an image, clamping to `[0, 1]`.
pub fn tensor_to_image<F: Scalar>(t: &Array4<F>) -> ImageBuffer {
    let (_, ch, h, w) = t.dim();
    assert_eq!(ch, 3, "expected an RGB tensor");
    let mut data = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for cc in 0..w {
            for k in 0..3 {
                data.push(t[[0, k, r, cc]].as_f64().clamp(0.0, 1.0) as f32);
            }
        }
    }
    ImageBuffer::new(h, w, data).expect("valid dims")
}

fn single_image_graph<F: Scalar>(
    params: &ParamSet<F>,
    g: &mut Graph<F>,
) -> net::BoundParams {
    net::bind_params(g, params, false)
}

/// Analysis transform on a padded image: `(H, W)` must be multiples of 64;
/// the latent is `(C, H/16, W/16)`.
pub fn analysis_image<F: Scalar>(
    params: &ParamSet<F>,
    cfg: &ModelConfig,
    x: &ImageBuffer,
) -> Result<LatentTensor<F>, ModelError> {
    cfg.validate()?;
    let (h, w) = (x.height(), x.width());
    if h % crate::pad::ALIGNMENT != 0 || w % crate::pad::ALIGNMENT != 0 {
        return Err(ModelError::InputNotAligned { h, w, alignment: crate::pad::ALIGNMENT });
    }
    let mut g = Graph::new();
    let vars = single_image_graph(params, &mut g);
    let xt = g.constant(image_to_tensor::<F>(x).into_dyn());
    let y = net::analysis_fwd(&mut g, &vars, cfg, xt);
    let y4 = g.value(y).view().into_dimensionality::<ndarray::Ix4>().unwrap().to_owned();
    Ok(LatentTensor(y4.index_axis(Axis(0), 0).to_owned()))
}

fn synthesize<F: Scalar>(
    params: &ParamSet<F>,
    cfg: &ModelConfig,
    y: &LatentTensor<F>,
    kind: net::SynthKind,
) -> Result<ImageBuffer, ModelError> {
    cfg.validate()?;
    let expected = match kind {
        net::SynthKind::Base => cfg.base_channels,
        net::SynthKind::Full => cfg.total_channels,
    };
    if y.channels() != expected {
        return Err(ModelError::ChannelMismatch { expected, got: y.channels() });
    }
    let mut g = Graph::new();
    let vars = single_image_graph(params, &mut g);
    let yt = g.constant(y.0.clone().insert_axis(Axis(0)).into_dyn());
    let out = net::synth_fwd(&mut g, &vars, cfg, kind, yt);
    let o4 = g.value(out).view().into_dimensionality::<ndarray::Ix4>().unwrap().to_owned();
    Ok(tensor_to_image(&o4))
}

/// Decodes the denoised image from the base sub-latent alone. Enhancement
/// channels are not an input, so independence holds by construction.
pub fn synthesize_base<F: Scalar>(
    params: &ParamSet<F>,
    cfg: &ModelConfig,
    y_base: &LatentTensor<F>,
) -> Result<ImageBuffer, ModelError> {
    synthesize(params, cfg, y_base, net::SynthKind::Base)
}

/// Decodes the noisy-input reconstruction from the full latent.
pub fn synthesize_full<F: Scalar>(
    params: &ParamSet<F>,
    cfg: &ModelConfig,
    y: &LatentTensor<F>,
) -> Result<ImageBuffer, ModelError> {
    synthesize(params, cfg, y, net::SynthKind::Full)
}

/// Hyper-analysis of a latent tensor: `(hyper_channels, N/4, M/4)`.
pub fn hyper_analysis_image<F: Scalar>(
    params: &ParamSet<F>,
    cfg: &ModelConfig,
    y: &LatentTensor<F>,
) -> Result<LatentTensor<F>, ModelError> {
    let (n, m) = y.spatial();
    if n % HYPER_STRIDE != 0 || m % HYPER_STRIDE != 0 {
        return Err(ModelError::LatentNotAligned { n, m });
    }
    if y.channels() != cfg.total_channels {
        return Err(ModelError::ChannelMismatch { expected: cfg.total_channels, got: y.channels() });
    }
    let mut g = Graph::new();
    let vars = single_image_graph(params, &mut g);
    let yt = g.constant(y.0.clone().insert_axis(Axis(0)).into_dyn());
    let z = net::hyper_analysis_fwd(&mut g, &vars, cfg, yt);
    let z4 = g.value(z).view().into_dimensionality::<ndarray::Ix4>().unwrap().to_owned();
    Ok(LatentTensor(z4.index_axis(Axis(0), 0).to_owned()))
}

/// Hyper-synthesis: maps a quantized hyper-latent to the feature map the
/// entropy-parameter heads consume, spatially aligned with the main latent.
pub fn hyper_features_from<F: Scalar>(
    params: &ParamSet<F>,
    cfg: &ModelConfig,
    z_hat: &LatentTensor<F>,
) -> Result<LatentTensor<F>, ModelError> {
    if z_hat.channels() != cfg.hyper_channels {
        return Err(ModelError::ChannelMismatch { expected: cfg.hyper_channels, got: z_hat.channels() });
    }
    let mut g = Graph::new();
    let vars = single_image_graph(params, &mut g);
    let zt = g.constant(z_hat.0.clone().insert_axis(Axis(0)).into_dyn());
    let f = net::hyper_synth_fwd(&mut g, &vars, cfg, zt);
    let f4 = g.value(f).view().into_dimensionality::<ndarray::Ix4>().unwrap().to_owned();
    Ok(LatentTensor(f4.index_axis(Axis(0), 0).to_owned()))
}

/// Hyper analysis, inference quantization against the prior locations, and
/// hyper synthesis in one call. Returns `(z_hat, features)`.
pub fn hyper_roundtrip<F: Scalar>(
    params: &ParamSet<F>,
    cfg: &ModelConfig,
    y: &LatentTensor<F>,
) -> Result<(LatentTensor<F>, LatentTensor<F>), ModelError> {
    let z = hyper_analysis_image(params, cfg, y)?;
    let prior = factorized_prior(params, cfg)?;
    let mut z_hat = z.0;
    for (ch, mut plane) in z_hat.axis_iter_mut(Axis(0)).enumerate() {
        let loc = prior.loc[ch];
        plane.mapv_inplace(|v| crate::entropy::quantize_infer(v, loc));
    }
    let z_hat = LatentTensor(z_hat);
    let features = hyper_features_from(params, cfg, &z_hat)?;
    Ok((z_hat, features))
}
