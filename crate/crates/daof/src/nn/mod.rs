//! Minimal from-scratch MLP stack: Gelu hidden layers, identity output,
//! reverse-mode gradients with an explicit cache contract, Adam, soft target
//! updates, and a binary checkpoint format.
//!
//! Gradients are hand-derived per layer. The cache stores every layer input
//! and pre-activation so `backward` can be audited against finite
//! differences without any autodiff machinery.

mod adam;
mod checkpoint;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{checkpoint_load, checkpoint_save, CheckpointError, CheckpointMeta};

use thiserror::Error;

use crate::core::Rng;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input dimension {got} does not match network input {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("layer dimensions are incompatible at layer {layer}")]
    LayerDims { layer: usize },
    #[error("shape mismatch between networks (layer {layer})")]
    ShapeMismatch { layer: usize },
    #[error("non-finite gradient in layer {layer} {block}")]
    NonFiniteGrad { layer: usize, block: &'static str },
}

/// Dense row-major matrix used for mini-batch execution.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Dot product with sixteen independent accumulator lanes so the reduction
/// vectorizes without reassociating floating-point ops run to run.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 16];
    let mut ca = a.chunks_exact(16);
    let mut cb = b.chunks_exact(16);
    for (xs, ys) in (&mut ca).zip(&mut cb) {
        let xs: &[f64; 16] = xs.try_into().unwrap();
        let ys: &[f64; 16] = ys.try_into().unwrap();
        for l in 0..16 {
            acc[l] += xs[l] * ys[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    let mut lanes = [0.0f64; 8];
    for l in 0..8 {
        lanes[l] = acc[l] + acc[l + 8];
    }
    (((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])))
        + tail
}

/// `y += a * x`
#[inline]
pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Gelu,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Gelu => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Gelu),
            _ => None,
        }
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact erf-based Gelu: `x * Phi(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// `d/dx gelu(x) = Phi(x) + x * phi(x)`
#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let phi_pdf = FRAC_1_SQRT_2PI * (-0.5 * x * x).exp();
    phi_cdf + x * phi_pdf
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub act: Activation,
}

/// Multilayer perceptron. Hidden layers use Gelu, the output layer is
/// identity, unless constructed otherwise.
#[derive(Clone, Debug)]
pub struct MlpNet {
    layers: Vec<Layer>,
}

/// Per-layer gradient blocks shaped like the network parameters.
#[derive(Clone, Debug)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl NetGrads {
    pub fn zeros_like(net: &MlpNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    w: vec![0.0; l.w.len()],
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v *= s;
            }
        }
    }
}

/// Forward cache: layer inputs (`acts[l]` feeds layer `l`) and
/// pre-activations (`zs[l]` is layer `l`'s affine output before the
/// activation). Sufficient for exact reverse-mode gradients.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub acts: Vec<Mat>,
    pub zs: Vec<Mat>,
}

impl MlpNet {
    /// Uniform Kaiming-style initialization with bounds `±sqrt(1/fan_in)`;
    /// hidden layers Gelu, output identity.
    pub fn new(dims: &[usize], rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let (in_dim, out_dim) = (dims[i], dims[i + 1]);
            let bound = (1.0 / in_dim as f64).sqrt();
            let w = (0..in_dim * out_dim)
                .map(|_| rng.uniform_range(-bound, bound))
                .collect();
            let b = (0..out_dim).map(|_| rng.uniform_range(-bound, bound)).collect();
            let act = if i + 1 == dims.len() - 1 {
                Activation::Identity
            } else {
                Activation::Gelu
            };
            layers.push(Layer {
                in_dim,
                out_dim,
                w,
                b,
                act,
            });
        }
        Self { layers }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let mut rng = Rng::new(0);
        let mut net = Self::new(dims, &mut rng);
        for l in &mut net.layers {
            l.w.iter_mut().for_each(|v| *v = 0.0);
            l.b.iter_mut().for_each(|v| *v = 0.0);
        }
        net
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        for i in 1..layers.len() {
            if layers[i].in_dim != layers[i - 1].out_dim {
                return Err(NnError::LayerDims { layer: i });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].in_dim];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty net").out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn affine_batch(layer: &Layer, x: &Mat, out: &mut Mat) {
        for r in 0..x.rows {
            let xrow = x.row(r);
            let orow = out.row_mut(r);
            for o in 0..layer.out_dim {
                let wrow = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                orow[o] = layer.b[o] + dot(xrow, wrow);
            }
        }
    }

    /// Single-sample inference without cache.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::InputDim {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            next.clear();
            next.resize(layer.out_dim, 0.0);
            for o in 0..layer.out_dim {
                let wrow = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let z = layer.b[o] + dot(&cur, wrow);
                next[o] = match layer.act {
                    Activation::Identity => z,
                    Activation::Gelu => gelu(z),
                };
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Allocation-free single-sample inference for latency-sensitive paths.
    pub fn forward_into(&self, input: &[f64], scratch: &mut Scratch, out: &mut Vec<f64>) {
        debug_assert_eq!(input.len(), self.input_dim());
        scratch.a.clear();
        scratch.a.extend_from_slice(input);
        for layer in &self.layers {
            scratch.b.clear();
            scratch.b.resize(layer.out_dim, 0.0);
            for o in 0..layer.out_dim {
                let wrow = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let z = layer.b[o] + dot(&scratch.a, wrow);
                scratch.b[o] = match layer.act {
                    Activation::Identity => z,
                    Activation::Gelu => gelu(z),
                };
            }
            std::mem::swap(&mut scratch.a, &mut scratch.b);
        }
        out.clear();
        out.extend_from_slice(&scratch.a);
    }

    /// Mini-batch forward pass returning the output and the cache needed by
    /// [`MlpNet::backward`].
    pub fn forward_batch(&self, input: &Mat) -> Result<(Mat, ForwardCache), NnError> {
        if input.cols != self.input_dim() {
            return Err(NnError::InputDim {
                expected: self.input_dim(),
                got: input.cols,
            });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut zs = Vec::with_capacity(self.layers.len());
        acts.push(input.clone());
        for layer in &self.layers {
            let x = acts.last().expect("at least the input activation");
            let mut z = Mat::zeros(x.rows, layer.out_dim);
            Self::affine_batch(layer, x, &mut z);
            let mut a = z.clone();
            if layer.act == Activation::Gelu {
                for v in a.data.iter_mut() {
                    *v = gelu(*v);
                }
            }
            zs.push(z);
            acts.push(a);
        }
        let output = acts.last().expect("output activation").clone();
        Ok((output, ForwardCache { acts, zs }))
    }

    /// Exact reverse-mode gradients of the scalar loss whose per-sample
    /// output gradient is `output_grad`. Returns parameter gradients and the
    /// gradient with respect to the network input.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Mat) -> (NetGrads, Mat) {
        assert_eq!(cache.zs.len(), self.layers.len(), "cache/layer mismatch");
        let rows = output_grad.rows;
        let mut grads = NetGrads::zeros_like(self);
        let mut delta = output_grad.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.zs[l];
            if layer.act == Activation::Gelu {
                for (d, zv) in delta.data.iter_mut().zip(&z.data) {
                    *d *= gelu_grad(*zv);
                }
            }
            let x = &cache.acts[l];
            let g = &mut grads.layers[l];
            for r in 0..rows {
                let drow = delta.row(r);
                let xrow = x.row(r);
                for o in 0..layer.out_dim {
                    let d = drow[o];
                    if d != 0.0 {
                        axpy(&mut g.w[o * layer.in_dim..(o + 1) * layer.in_dim], d, xrow);
                    }
                    g.b[o] += d;
                }
            }
            let mut dx = Mat::zeros(rows, layer.in_dim);
            for r in 0..rows {
                let drow = delta.row(r);
                let dxrow = dx.row_mut(r);
                for o in 0..layer.out_dim {
                    let d = drow[o];
                    if d != 0.0 {
                        axpy(dxrow, d, &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim]);
                    }
                }
            }
            delta = dx;
        }
        (grads, delta)
    }
}

/// Reusable buffers for [`MlpNet::forward_into`].
#[derive(Clone, Debug, Default)]
pub struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

/// Single-precision inference copy of a network, for the optional 32-bit
/// speed mode. Weights are cast once; training and evaluation stay in f64.
#[derive(Clone, Debug)]
pub struct F32Net {
    layers: Vec<(usize, usize, Vec<f32>, Vec<f32>, Activation)>,
}

impl F32Net {
    pub fn from_net(net: &MlpNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    (
                        l.in_dim,
                        l.out_dim,
                        l.w.iter().map(|v| *v as f32).collect(),
                        l.b.iter().map(|v| *v as f32).collect(),
                        l.act,
                    )
                })
                .collect(),
        }
    }

    pub fn forward_into(&self, input: &[f64], scratch: &mut ScratchF32, out: &mut Vec<f64>) {
        scratch.a.clear();
        scratch.a.extend(input.iter().map(|v| *v as f32));
        for (in_dim, out_dim, w, b, act) in &self.layers {
            debug_assert_eq!(scratch.a.len(), *in_dim);
            scratch.b.clear();
            scratch.b.resize(*out_dim, 0.0);
            for o in 0..*out_dim {
                let wrow = &w[o * in_dim..(o + 1) * in_dim];
                let z = b[o] + dot_f32(&scratch.a, wrow);
                scratch.b[o] = match act {
                    Activation::Identity => z,
                    Activation::Gelu => {
                        0.5 * z * (1.0 + libm::erff(z * std::f32::consts::FRAC_1_SQRT_2))
                    }
                };
            }
            std::mem::swap(&mut scratch.a, &mut scratch.b);
        }
        out.clear();
        out.extend(scratch.a.iter().map(|v| *v as f64));
    }
}

#[derive(Clone, Debug, Default)]
pub struct ScratchF32 {
    a: Vec<f32>,
    b: Vec<f32>,
}

#[inline]
fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 16];
    let mut ca = a.chunks_exact(16);
    let mut cb = b.chunks_exact(16);
    for (xs, ys) in (&mut ca).zip(&mut cb) {
        let xs: &[f32; 16] = xs.try_into().unwrap();
        let ys: &[f32; 16] = ys.try_into().unwrap();
        for l in 0..16 {
            acc[l] += xs[l] * ys[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    let mut lanes = [0.0f32; 8];
    for l in 0..8 {
        lanes[l] = acc[l] + acc[l + 8];
    }
    (((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])))
        + tail
}

/// Divides the first layer's weight columns by `scale`, folding a fixed
/// input standardization into the network itself.
pub fn fold_input_scale(net: &mut MlpNet, scale: &[f64]) {
    let layer = &mut net.layers_mut()[0];
    assert_eq!(layer.in_dim, scale.len());
    for o in 0..layer.out_dim {
        for (i, s) in scale.iter().enumerate() {
            layer.w[o * layer.in_dim + i] /= s;
        }
    }
}

/// Multiplies the last layer's rows (and biases) by `scale`, folding a fixed
/// output scaling into the network itself.
pub fn fold_output_scale(net: &mut MlpNet, scale: &[f64]) {
    let layer = net.layers_mut().last_mut().expect("non-empty net");
    assert_eq!(layer.out_dim, scale.len());
    for (o, s) in scale.iter().enumerate() {
        for w in &mut layer.w[o * layer.in_dim..(o + 1) * layer.in_dim] {
            *w *= s;
        }
        layer.b[o] *= s;
    }
}

/// Scales gradients so their global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut NetGrads, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for l in &grads.layers {
        for v in l.w.iter().chain(l.b.iter()) {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// In-place Polyak update: `target = tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut MlpNet, online: &MlpNet, tau: f64) -> Result<(), NnError> {
    if target.layers.len() != online.layers.len() {
        return Err(NnError::ShapeMismatch { layer: 0 });
    }
    for (l, (t, o)) in target
        .layers
        .iter_mut()
        .zip(&online.layers)
        .enumerate()
    {
        if t.w.len() != o.w.len() || t.b.len() != o.b.len() {
            return Err(NnError::ShapeMismatch { layer: l });
        }
        for (tv, ov) in t.w.iter_mut().zip(&o.w).chain(t.b.iter_mut().zip(&o.b)) {
            *tv = tau * *ov + (1.0 - tau) * *tv;
        }
    }
    Ok(())
}
