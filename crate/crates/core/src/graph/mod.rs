//! Reverse-mode autodiff over ndarray tensors.
//!
//! A `Graph` is a flat tape: every operation evaluates eagerly and records
//! what it needs for the backward pass (input ids only — column matrices are
//! recomputed, which keeps peak memory flat). The op set is exactly what the
//! codec transforms and the rate-distortion loss require.

pub mod nn;

use alloc::sync::Arc;
use alloc::vec::Vec;
use ndarray::{Array1, Array2, Array4, ArrayD, Axis, IxDyn, s};

use crate::scalar::{c, normal_cdf, normal_pdf, softplus, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone)]
enum Op<F: Scalar> {
    Leaf,
    Conv2d { x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize, mask: Option<Arc<Array2<F>>> },
    ConvT2d { x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize, out_pad: usize },
    LeakyRelu { x: NodeId, alpha: F },
    Softplus { x: NodeId },
    Sigmoid { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Div { a: NodeId, b: NodeId },
    AddScalar { x: NodeId },
    MulScalar { x: NodeId, k: F },
    MaxScalar { x: NodeId, k: F },
    NormalCdf { x: NodeId },
    Ln { x: NodeId },
    ConcatC { a: NodeId, b: NodeId },
    SliceC { x: NodeId, from: usize, to: usize },
    BroadcastC { x: NodeId },
    SumAll { x: NodeId },
    MeanAll { x: NodeId },
}

struct Node<F: Scalar> {
    value: ArrayD<F>,
    grad: Option<ArrayD<F>>,
    op: Op<F>,
    needs_grad: bool,
}

pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: ArrayD<F>, op: Op<F>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, grad: None, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// A constant input (no gradient flows into it).
    pub fn constant(&mut self, value: ArrayD<F>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// A trainable input; its gradient is available after `backward`.
    pub fn variable(&mut self, value: ArrayD<F>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<F> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&ArrayD<F>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value.iter().next().unwrap().as_f64()
    }

    fn as4(&self, id: NodeId) -> Array4<F> {
        self.nodes[id.0]
            .value
            .view()
            .into_dimensionality::<ndarray::Ix4>()
            .expect("expected a 4-d tensor")
            .to_owned()
    }

    fn as1(&self, id: NodeId) -> Array1<F> {
        self.nodes[id.0]
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("expected a 1-d tensor")
            .to_owned()
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize) -> NodeId {
        self.conv2d_inner(x, w, b, stride, pad, None)
    }

    /// Convolution with a fixed spatial kernel mask (context models).
    pub fn conv2d_masked(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
        mask: Arc<Array2<F>>,
    ) -> NodeId {
        self.conv2d_inner(x, w, b, stride, pad, Some(mask))
    }

    fn conv2d_inner(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
        mask: Option<Arc<Array2<F>>>,
    ) -> NodeId {
        let xv = self.as4(x);
        let wv = self.masked_weights(w, &mask);
        let bv = self.as1(b);
        let y = nn::conv2d_forward(&xv, &wv, &bv, stride, pad);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(y.into_dyn(), Op::Conv2d { x, w, b, stride, pad, mask }, needs)
    }

    fn masked_weights(&self, w: NodeId, mask: &Option<Arc<Array2<F>>>) -> Array4<F> {
        let mut wv = self.as4(w);
        if let Some(m) = mask {
            for mut ij in wv.axis_iter_mut(Axis(0)) {
                for mut cij in ij.axis_iter_mut(Axis(0)) {
                    cij *= &m.view();
                }
            }
        }
        wv
    }

    pub fn convt2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> NodeId {
        let xv = self.as4(x);
        let wv = self.as4(w);
        let bv = self.as1(b);
        let y = nn::convt2d_forward(&xv, &wv, &bv, stride, pad, out_pad);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(y.into_dyn(), Op::ConvT2d { x, w, b, stride, pad, out_pad }, needs)
    }

    pub fn leaky_relu(&mut self, x: NodeId, alpha: f64) -> NodeId {
        let a = c::<F>(alpha);
        let y = self.nodes[x.0].value.mapv(|v| if v > F::zero() { v } else { v * a });
        let needs = self.needs(x);
        self.push(y, Op::LeakyRelu { x, alpha: a }, needs)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let y = self.nodes[x.0].value.mapv(softplus);
        let needs = self.needs(x);
        self.push(y, Op::Softplus { x }, needs)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let one = F::one();
        let y = self.nodes[x.0].value.mapv(|v| {
            if v >= F::zero() {
                one / (one + (-v).exp())
            } else {
                let e = v.exp();
                e / (one + e)
            }
        });
        let needs = self.needs(x);
        self.push(y, Op::Sigmoid { x }, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let needs = self.needs(a) || self.needs(b);
        self.push(y, Op::Add { a, b }, needs)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let needs = self.needs(a) || self.needs(b);
        self.push(y, Op::Sub { a, b }, needs)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let needs = self.needs(a) || self.needs(b);
        self.push(y, Op::Mul { a, b }, needs)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let y = &self.nodes[a.0].value / &self.nodes[b.0].value;
        let needs = self.needs(a) || self.needs(b);
        self.push(y, Op::Div { a, b }, needs)
    }

    pub fn add_scalar(&mut self, x: NodeId, k: f64) -> NodeId {
        let kk = c::<F>(k);
        let y = self.nodes[x.0].value.mapv(|v| v + kk);
        let needs = self.needs(x);
        self.push(y, Op::AddScalar { x }, needs)
    }

    pub fn mul_scalar(&mut self, x: NodeId, k: f64) -> NodeId {
        let kk = c::<F>(k);
        let y = self.nodes[x.0].value.mapv(|v| v * kk);
        let needs = self.needs(x);
        self.push(y, Op::MulScalar { x, k: kk }, needs)
    }

    /// Elementwise `max(x, k)`; subgradient 0 on the clamped side.
    pub fn max_scalar(&mut self, x: NodeId, k: f64) -> NodeId {
        let kk = c::<F>(k);
        let y = self.nodes[x.0].value.mapv(|v| v.max(kk));
        let needs = self.needs(x);
        self.push(y, Op::MaxScalar { x, k: kk }, needs)
    }

    pub fn normal_cdf(&mut self, x: NodeId) -> NodeId {
        let y = self.nodes[x.0].value.mapv(normal_cdf);
        let needs = self.needs(x);
        self.push(y, Op::NormalCdf { x }, needs)
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let y = self.nodes[x.0].value.mapv(|v| v.ln());
        let needs = self.needs(x);
        self.push(y, Op::Ln { x }, needs)
    }

    /// Concatenates two `(B, C, H, W)` tensors along channels.
    pub fn concat_c(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.as4(a);
        let bv = self.as4(b);
        let y = ndarray::concatenate(Axis(1), &[av.view(), bv.view()]).expect("channel concat");
        let needs = self.needs(a) || self.needs(b);
        self.push(y.into_dyn(), Op::ConcatC { a, b }, needs)
    }

    /// Channel slice `[from, to)` of a `(B, C, H, W)` tensor.
    pub fn slice_c(&mut self, x: NodeId, from: usize, to: usize) -> NodeId {
        let xv = self.as4(x);
        let y = xv.slice(s![.., from..to, .., ..]).to_owned();
        let needs = self.needs(x);
        self.push(y.into_dyn(), Op::SliceC { x, from, to }, needs)
    }

    /// Broadcasts a per-channel vector `(C)` over a `(B, C, H, W)` layout.
    pub fn broadcast_c(&mut self, x: NodeId, batch: usize, h: usize, w: usize) -> NodeId {
        let xv = self.as1(x);
        let cch = xv.len();
        let mut y = Array4::<F>::zeros((batch, cch, h, w));
        for (ch, &v) in xv.iter().enumerate() {
            y.slice_mut(s![.., ch, .., ..]).fill(v);
        }
        let needs = self.needs(x);
        self.push(y.into_dyn(), Op::BroadcastC { x }, needs)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x.0].value.iter().fold(F::zero(), |acc, &v| acc + v);
        let needs = self.needs(x);
        self.push(ArrayD::from_elem(IxDyn(&[1]), s), Op::SumAll { x }, needs)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.nodes[x.0].value.len();
        let s = self.nodes[x.0].value.iter().fold(F::zero(), |acc, &v| acc + v)
            / c::<F>(n as f64);
        let needs = self.needs(x);
        self.push(ArrayD::from_elem(IxDyn(&[1]), s), Op::MeanAll { x }, needs)
    }

    fn accumulate(&mut self, id: NodeId, delta: ArrayD<F>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut self.nodes[id.0].grad {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }

    /// Backpropagates from a scalar node. Gradients of all `variable` leaves
    /// reachable from it become available through [`Graph::grad`].
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(self.nodes[loss.0].value.len(), 1, "backward needs a scalar loss");
        self.nodes[loss.0].grad = Some(ArrayD::from_elem(IxDyn(&[1]), F::one()));
        for i in (0..=loss.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = self.nodes[i].grad.clone().expect("checked above");
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::Conv2d { x, w, b, stride, pad, mask } => {
                    let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap().to_owned();
                    let xv = self.as4(x);
                    let wv = self.masked_weights(w, &mask);
                    let (in_h, in_w) = (xv.dim().2, xv.dim().3);
                    let k = wv.dim().2;
                    if self.needs(x) {
                        let dx = nn::conv2d_backward_data(&g4, &wv, stride, pad, in_h, in_w);
                        self.accumulate(x, dx.into_dyn());
                    }
                    if self.needs(w) || self.needs(b) {
                        let mut dw = Array4::<F>::zeros(wv.dim());
                        let db = nn::conv2d_backward_weights(&xv, &g4, stride, pad, k, &mut dw);
                        if let Some(m) = &mask {
                            for mut ij in dw.axis_iter_mut(Axis(0)) {
                                for mut cij in ij.axis_iter_mut(Axis(0)) {
                                    cij *= &m.view();
                                }
                            }
                        }
                        self.accumulate(w, dw.into_dyn());
                        self.accumulate(b, db.into_dyn());
                    }
                }
                Op::ConvT2d { x, w, b, stride, pad, out_pad } => {
                    let _ = out_pad;
                    let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap().to_owned();
                    let xv = self.as4(x);
                    let wv = self.as4(w);
                    let (in_h, in_w) = (xv.dim().2, xv.dim().3);
                    let k = wv.dim().2;
                    if self.needs(x) {
                        let dx = nn::convt2d_backward_data(&g4, &wv, stride, pad, in_h, in_w);
                        self.accumulate(x, dx.into_dyn());
                    }
                    if self.needs(w) || self.needs(b) {
                        let mut dw = Array4::<F>::zeros(wv.dim());
                        let db = nn::convt2d_backward_weights(&xv, &g4, stride, pad, k, &mut dw);
                        self.accumulate(w, dw.into_dyn());
                        self.accumulate(b, db.into_dyn());
                    }
                }
                Op::LeakyRelu { x, alpha } => {
                    let dx = ndarray::Zip::from(&g)
                        .and(&self.nodes[x.0].value)
                        .map_collect(|&gv, &xv| if xv > F::zero() { gv } else { gv * alpha });
                    self.accumulate(x, dx);
                }
                Op::Softplus { x } => {
                    let one = F::one();
                    let dx = ndarray::Zip::from(&g)
                        .and(&self.nodes[x.0].value)
                        .map_collect(|&gv, &xv| {
                            let sgm = if xv >= F::zero() {
                                one / (one + (-xv).exp())
                            } else {
                                let e = xv.exp();
                                e / (one + e)
                            };
                            gv * sgm
                        });
                    self.accumulate(x, dx);
                }
                Op::Sigmoid { x } => {
                    let one = F::one();
                    let dx = ndarray::Zip::from(&g)
                        .and(&self.nodes[i].value)
                        .map_collect(|&gv, &yv| gv * yv * (one - yv));
                    self.accumulate(x, dx);
                }
                Op::Add { a, b } => {
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g);
                }
                Op::Sub { a, b } => {
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g.mapv(|v| -v));
                }
                Op::Mul { a, b } => {
                    if self.needs(a) {
                        let da = &g * &self.nodes[b.0].value;
                        self.accumulate(a, da);
                    }
                    if self.needs(b) {
                        let db = &g * &self.nodes[a.0].value;
                        self.accumulate(b, db);
                    }
                }
                Op::Div { a, b } => {
                    if self.needs(a) {
                        let da = &g / &self.nodes[b.0].value;
                        self.accumulate(a, da);
                    }
                    if self.needs(b) {
                        let bv = &self.nodes[b.0].value;
                        let av = &self.nodes[a.0].value;
                        let db = ndarray::Zip::from(&g)
                            .and(av)
                            .and(bv)
                            .map_collect(|&gv, &avv, &bvv| -gv * avv / (bvv * bvv));
                        self.accumulate(b, db);
                    }
                }
                Op::AddScalar { x } => self.accumulate(x, g),
                Op::MulScalar { x, k } => self.accumulate(x, g.mapv(|v| v * k)),
                Op::MaxScalar { x, k } => {
                    let dx = ndarray::Zip::from(&g)
                        .and(&self.nodes[x.0].value)
                        .map_collect(|&gv, &xv| if xv > k { gv } else { F::zero() });
                    self.accumulate(x, dx);
                }
                Op::NormalCdf { x } => {
                    let dx = ndarray::Zip::from(&g)
                        .and(&self.nodes[x.0].value)
                        .map_collect(|&gv, &xv| gv * normal_pdf(xv));
                    self.accumulate(x, dx);
                }
                Op::Ln { x } => {
                    let dx = &g / &self.nodes[x.0].value;
                    self.accumulate(x, dx);
                }
                Op::ConcatC { a, b } => {
                    let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                    let ca = self.nodes[a.0].value.shape()[1];
                    let da = g4.slice(s![.., ..ca, .., ..]).to_owned();
                    let db = g4.slice(s![.., ca.., .., ..]).to_owned();
                    self.accumulate(a, da.into_dyn());
                    self.accumulate(b, db.into_dyn());
                }
                Op::SliceC { x, from, to } => {
                    let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                    let xs = self.nodes[x.0].value.shape();
                    let mut dx = Array4::<F>::zeros((xs[0], xs[1], xs[2], xs[3]));
                    dx.slice_mut(s![.., from..to, .., ..]).assign(&g4);
                    self.accumulate(x, dx.into_dyn());
                }
                Op::BroadcastC { x } => {
                    let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                    let cch = self.nodes[x.0].value.len();
                    let mut dx = Array1::<F>::zeros(cch);
                    for ch in 0..cch {
                        dx[ch] = g4.slice(s![.., ch, .., ..]).sum();
                    }
                    self.accumulate(x, dx.into_dyn());
                }
                Op::SumAll { x } => {
                    let gv = g.iter().next().copied().unwrap();
                    let dx = ArrayD::from_elem(self.nodes[x.0].value.raw_dim(), gv);
                    self.accumulate(x, dx);
                }
                Op::MeanAll { x } => {
                    let n = self.nodes[x.0].value.len();
                    let gv = g.iter().next().copied().unwrap() / c::<F>(n as f64);
                    let dx = ArrayD::from_elem(self.nodes[x.0].value.raw_dim(), gv);
                    self.accumulate(x, dx);
                }
            }
        }
    }
}

/// Mean squared error between two nodes, scaled to the 8-bit pixel range.
pub fn mse_255_node<F: Scalar>(g: &mut Graph<F>, a: NodeId, b: NodeId) -> NodeId {
    let d = g.sub(a, b);
    let sq = g.mul(d, d);
    let m = g.mean_all(sq);
    g.mul_scalar(m, 255.0 * 255.0)
}
