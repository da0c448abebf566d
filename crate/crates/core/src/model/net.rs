//! Layer tables and graph builders for the transforms.
//!
//! Every convolution in the model is described once in a spec table; weight
//! initialization, checkpoint validation, the training graph and the
//! incremental decoder all derive from it, so they cannot drift apart.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::entropy::SIGMA_MIN;
use crate::graph::{nn, Graph, NodeId};
use crate::scalar::Scalar;

use super::{CodingLayer, ModelConfig, ParamSet};

pub const LEAKY_ALPHA: f64 = 0.01;
pub const CONTEXT_KERNEL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Base,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Act {
    LeakyRelu,
    None,
}

#[derive(Debug, Clone)]
pub(crate) struct ConvSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub transposed: bool,
    pub out_pad: usize,
    pub act: Act,
    pub masked: bool,
}

impl ConvSpec {
    fn conv(name: String, cin: usize, cout: usize, k: usize, stride: usize, act: Act) -> Self {
        Self { name, cin, cout, k, stride, pad: k / 2, transposed: false, out_pad: 0, act, masked: false }
    }

    fn tconv(name: String, cin: usize, cout: usize, act: Act) -> Self {
        Self { name, cin, cout, k: 5, stride: 2, pad: 2, transposed: true, out_pad: 1, act, masked: false }
    }

    fn weight_shape(&self) -> Vec<usize> {
        if self.transposed {
            vec![self.cin, self.cout, self.k, self.k]
        } else {
            vec![self.cout, self.cin, self.k, self.k]
        }
    }
}

pub(crate) fn analysis_specs(cfg: &ModelConfig) -> Vec<ConvSpec> {
    let w = cfg.width;
    vec![
        ConvSpec::conv("analysis.c1".into(), 3, w, 5, 2, Act::LeakyRelu),
        ConvSpec::conv("analysis.c2".into(), w, w, 5, 2, Act::LeakyRelu),
        ConvSpec::conv("analysis.c3".into(), w, w, 5, 2, Act::LeakyRelu),
        ConvSpec::conv("analysis.c4".into(), w, cfg.total_channels, 5, 2, Act::None),
    ]
}

pub(crate) fn synth_specs(cfg: &ModelConfig, kind: SynthKind) -> Vec<ConvSpec> {
    let w = cfg.width;
    let (prefix, cin) = match kind {
        SynthKind::Base => ("synth_base", cfg.base_channels),
        SynthKind::Full => ("synth_full", cfg.total_channels),
    };
    vec![
        ConvSpec::tconv(format!("{prefix}.d1"), cin, w, Act::LeakyRelu),
        ConvSpec::tconv(format!("{prefix}.d2"), w, w, Act::LeakyRelu),
        ConvSpec::tconv(format!("{prefix}.d3"), w, w, Act::LeakyRelu),
        ConvSpec::tconv(format!("{prefix}.d4"), w, 3, Act::None),
    ]
}

pub(crate) fn hyper_analysis_specs(cfg: &ModelConfig) -> Vec<ConvSpec> {
    let w = cfg.width;
    vec![
        ConvSpec::conv("hyper_analysis.c1".into(), cfg.total_channels, w, 3, 1, Act::LeakyRelu),
        ConvSpec::conv("hyper_analysis.c2".into(), w, w, 5, 2, Act::LeakyRelu),
        ConvSpec::conv("hyper_analysis.c3".into(), w, cfg.hyper_channels, 5, 2, Act::None),
    ]
}

pub(crate) fn hyper_synth_specs(cfg: &ModelConfig) -> Vec<ConvSpec> {
    let w = cfg.width;
    vec![
        ConvSpec::tconv("hyper_synth.d1".into(), cfg.hyper_channels, w, Act::LeakyRelu),
        ConvSpec::tconv("hyper_synth.d2".into(), w, w, Act::LeakyRelu),
        ConvSpec::conv("hyper_synth.c3".into(), w, cfg.hyper_feature_channels(), 3, 1, Act::None),
    ]
}

/// Context-model feature width for a layer with `l` channels.
pub(crate) fn ctx_features(l: usize) -> usize {
    2 * l
}

pub(crate) fn context_spec(cfg: &ModelConfig, layer: CodingLayer) -> ConvSpec {
    let l = layer.channels(cfg);
    let mut s = ConvSpec::conv(
        format!("ctx_{}", layer.tag()),
        l,
        ctx_features(l),
        CONTEXT_KERNEL,
        1,
        Act::None,
    );
    s.masked = true;
    s
}

pub(crate) fn ep_specs(cfg: &ModelConfig, layer: CodingLayer) -> Vec<ConvSpec> {
    let l = layer.channels(cfg);
    let tag = layer.tag();
    let input = cfg.hyper_feature_channels() + ctx_features(l);
    let hidden = input;
    vec![
        ConvSpec::conv(format!("ep_{tag}.c1"), input, hidden, 1, 1, Act::LeakyRelu),
        ConvSpec::conv(format!("ep_{tag}.c2"), hidden, hidden, 1, 1, Act::LeakyRelu),
        ConvSpec::conv(format!("ep_{tag}.c3"), hidden, 2 * l, 1, 1, Act::None),
    ]
}

fn attention_specs(prefix: &str, width: usize) -> Vec<ConvSpec> {
    vec![
        ConvSpec::conv(format!("{prefix}.attn.t1"), width, width, 3, 1, Act::LeakyRelu),
        ConvSpec::conv(format!("{prefix}.attn.t2"), width, width, 3, 1, Act::None),
        ConvSpec::conv(format!("{prefix}.attn.g"), width, width, 1, 1, Act::None),
    ]
}

pub(crate) fn all_conv_specs(cfg: &ModelConfig) -> Vec<ConvSpec> {
    let mut specs = Vec::new();
    specs.extend(analysis_specs(cfg));
    specs.extend(synth_specs(cfg, SynthKind::Base));
    specs.extend(synth_specs(cfg, SynthKind::Full));
    specs.extend(hyper_analysis_specs(cfg));
    specs.extend(hyper_synth_specs(cfg));
    specs.push(context_spec(cfg, CodingLayer::Base));
    specs.extend(ep_specs(cfg, CodingLayer::Base));
    if cfg.enhancement_channels() > 0 {
        specs.push(context_spec(cfg, CodingLayer::Enhancement));
        specs.extend(ep_specs(cfg, CodingLayer::Enhancement));
    }
    if cfg.use_attention {
        for prefix in ["analysis", "synth_base", "synth_full"] {
            specs.extend(attention_specs(prefix, cfg.width));
        }
    }
    specs
}

/// Every parameter name the config implies, with its shape.
pub fn expected_param_shapes(cfg: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
    let mut shapes = BTreeMap::new();
    for spec in all_conv_specs(cfg) {
        shapes.insert(format!("{}.w", spec.name), spec.weight_shape());
        shapes.insert(format!("{}.b", spec.name), vec![spec.cout]);
    }
    shapes.insert("prior.loc".into(), vec![cfg.hyper_channels]);
    shapes.insert("prior.scale_raw".into(), vec![cfg.hyper_channels]);
    shapes
}

/// Fan-in used by the variance-scaling initializer. A stride-2 transposed
/// convolution spreads each input over `stride^2` outputs, which shrinks the
/// effective fan-in accordingly.
pub(crate) fn fan_in(name: &str, shape: &[usize]) -> usize {
    debug_assert!(name.ends_with(".w"));
    let is_transposed = shape.len() == 4
        && (name.contains(".d1") || name.contains(".d2") || name.contains(".d3") || name.contains(".d4"));
    if is_transposed {
        let (cin, k) = (shape[0], shape[2]);
        (cin * k * k / 4).max(1)
    } else {
        let (cin, k) = (shape[1], shape[2]);
        (cin * k * k).max(1)
    }
}

/// Parameters bound into a graph, by name.
pub struct BoundParams {
    ids: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> NodeId {
        *self.ids.get(name).unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &NodeId)> {
        self.ids.iter()
    }
}

pub fn bind_params<F: Scalar>(
    g: &mut Graph<F>,
    params: &ParamSet<F>,
    trainable: bool,
) -> BoundParams {
    let mut ids = BTreeMap::new();
    for (name, value) in params.iter() {
        let id = if trainable { g.variable(value.clone()) } else { g.constant(value.clone()) };
        ids.insert(name.clone(), id);
    }
    BoundParams { ids }
}

fn apply_spec<F: Scalar>(
    g: &mut Graph<F>,
    vars: &BoundParams,
    spec: &ConvSpec,
    x: NodeId,
) -> NodeId {
    let w = vars.id(&format!("{}.w", spec.name));
    let b = vars.id(&format!("{}.b", spec.name));
    let y = if spec.transposed {
        g.convt2d(x, w, b, spec.stride, spec.pad, spec.out_pad)
    } else if spec.masked {
        let mask = Arc::new(nn::causal_mask::<F>(spec.k));
        g.conv2d_masked(x, w, b, spec.stride, spec.pad, mask)
    } else {
        g.conv2d(x, w, b, spec.stride, spec.pad)
    };
    match spec.act {
        Act::LeakyRelu => g.leaky_relu(y, LEAKY_ALPHA),
        Act::None => y,
    }
}

fn run_specs<F: Scalar>(
    g: &mut Graph<F>,
    vars: &BoundParams,
    specs: &[ConvSpec],
    mut x: NodeId,
) -> NodeId {
    for spec in specs {
        x = apply_spec(g, vars, spec, x);
    }
    x
}

/// Gated residual block, enabled by `use_attention`.
fn attention_fwd<F: Scalar>(
    g: &mut Graph<F>,
    vars: &BoundParams,
    prefix: &str,
    x: NodeId,
) -> NodeId {
    let t1w = vars.id(&format!("{prefix}.attn.t1.w"));
    let t1b = vars.id(&format!("{prefix}.attn.t1.b"));
    let t2w = vars.id(&format!("{prefix}.attn.t2.w"));
    let t2b = vars.id(&format!("{prefix}.attn.t2.b"));
    let gw = vars.id(&format!("{prefix}.attn.g.w"));
    let gb = vars.id(&format!("{prefix}.attn.g.b"));
    let h = g.conv2d(x, t1w, t1b, 1, 1);
    let h = g.leaky_relu(h, LEAKY_ALPHA);
    let trunk = g.conv2d(h, t2w, t2b, 1, 1);
    let gate_lin = g.conv2d(x, gw, gb, 1, 0);
    let gate = g.sigmoid(gate_lin);
    let gated = g.mul(trunk, gate);
    g.add(x, gated)
}

/// Image tensor `(B, 3, H, W)` to latent `(B, C, H/16, W/16)`.
pub fn analysis_fwd<F: Scalar>(
    g: &mut Graph<F>,
    vars: &BoundParams,
    cfg: &ModelConfig,
    x: NodeId,
) -> NodeId {
    let specs = analysis_specs(cfg);
    let mut h = apply_spec(g, vars, &specs[0], x);
    h = apply_spec(g, vars, &specs[1], h);
    if cfg.use_attention {
        h = attention_fwd(g, vars, "analysis", h);
    }
    h = apply_spec(g, vars, &specs[2], h);
    apply_spec(g, vars, &specs[3], h)
}

/// Latent `(B, L, N, M)` to image tensor `(B, 3, 16N, 16M)`, unclamped.
pub fn synth_fwd<F: Scalar>(
    g: &mut Graph<F>,
    vars: &BoundParams,
    cfg: &ModelConfig,
    kind: SynthKind,
    y: NodeId,
) -> NodeId {
    let specs = synth_specs(cfg, kind);
    let prefix = match kind {
        SynthKind::Base => "synth_base",
        SynthKind::Full => "synth_full",
    };
    let mut h = apply_spec(g, vars, &specs[0], y);
    h = apply_spec(g, vars, &specs[1], h);
    if cfg.use_attention {
        h = attention_fwd(g, vars, prefix, h);
    }
    h = apply_spec(g, vars, &specs[2], h);
    apply_spec(g, vars, &specs[3], h)
}

pub fn hyper_analysis_fwd<F: Scalar>(
    g: &mut Graph<F>,
    vars: &BoundParams,
    cfg: &ModelConfig,
    y: NodeId,
) -> NodeId {
    run_specs(g, vars, &hyper_analysis_specs(cfg), y)
}

pub fn hyper_synth_fwd<F: Scalar>(
    g: &mut Graph<F>,
    vars: &BoundParams,
    cfg: &ModelConfig,
    z_hat: NodeId,
) -> NodeId {
    run_specs(g, vars, &hyper_synth_specs(cfg), z_hat)
}

/// Per-element entropy parameters of one coding layer: the causal context of
/// the layer's own quantized latent plus the shared hyper features, through
/// three 1x1 stages. Returns `(mu, sigma)` with `sigma >= SIGMA_MIN`.
pub fn context_ep_fwd<F: Scalar>(
    g: &mut Graph<F>,
    vars: &BoundParams,
    cfg: &ModelConfig,
    layer: CodingLayer,
    y_hat: NodeId,
    hyper_features: NodeId,
) -> (NodeId, NodeId) {
    let l = layer.channels(cfg);
    let ctx = apply_spec(g, vars, &context_spec(cfg, layer), y_hat);
    let joint = g.concat_c(hyper_features, ctx);
    let out = run_specs(g, vars, &ep_specs(cfg, layer), joint);
    let mu = g.slice_c(out, 0, l);
    let raw = g.slice_c(out, l, 2 * l);
    let sp = g.softplus(raw);
    let sigma = g.add_scalar(sp, SIGMA_MIN);
    (mu, sigma)
}
