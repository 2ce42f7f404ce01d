//! Minimal convolutional network engine with hand-written backward passes.
//!
//! Layers operate on NHWC activations so channel slicing stays contiguous and
//! the pointwise convolutions reduce to GEMM. Every layer supports width
//! slicing: at half width a conv keeps the first half of its output channels
//! (and of its input channels when the previous layer was sliced), and the
//! final linear layer keeps the first half of its input features. The GEMM
//! primitive addresses those blocks through strided views, so sliced execution
//! never copies weights.

mod adam;
mod loss;
mod scalar;

pub use adam::{adam_step, sgd_step, AdamHyper, AdamState};
pub use loss::{softmax_cross_entropy, softmax_cross_entropy_batch};
pub use scalar::{gemm, MatView, Scalar};

use crate::error::{Error, Result};
use rand::Rng;

/// Activation buffers run to a few MB and are allocated per batch; glibc
/// would hand them back to the kernel on every free, costing a page fault
/// storm. Raise the malloc thresholds once so those buffers get reused.
fn tune_allocator() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| {
        #[cfg(target_os = "linux")]
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 256 << 20);
            libc::mallopt(libc::M_TRIM_THRESHOLD, 256 << 20);
        }
    });
}

/// Width multiplier: the engine supports the two-level set {0.5, 1.0}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Width {
    Half,
    Full,
}

impl Width {
    pub fn multiplier(self) -> f64 {
        match self {
            Width::Half => 0.5,
            Width::Full => 1.0,
        }
    }

    /// Channels retained at this width. Sliced layers require even counts.
    pub fn channels(self, full: usize) -> usize {
        match self {
            Width::Full => full,
            Width::Half => {
                debug_assert!(full % 2 == 0, "sliced layer needs an even channel count");
                full / 2
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    StandardConv,
    DepthwiseConv,
    Relu6,
    GlobalAvgPool,
    Linear,
}

/// One layer of the architecture. Convolutions are stride-1 with zero "same"
/// padding (`kernel / 2`); spatial dimensions are preserved until the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl LayerSpec {
    pub fn conv(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        LayerSpec { kind: LayerKind::StandardConv, in_ch, out_ch, kernel, stride: 1, padding: kernel / 2 }
    }

    pub fn depthwise(channels: usize, kernel: usize) -> Self {
        LayerSpec {
            kind: LayerKind::DepthwiseConv,
            in_ch: channels,
            out_ch: channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn relu6(channels: usize) -> Self {
        LayerSpec { kind: LayerKind::Relu6, in_ch: channels, out_ch: channels, kernel: 0, stride: 1, padding: 0 }
    }

    pub fn global_avg_pool(channels: usize) -> Self {
        LayerSpec { kind: LayerKind::GlobalAvgPool, in_ch: channels, out_ch: channels, kernel: 0, stride: 1, padding: 0 }
    }

    pub fn linear(in_features: usize, out_features: usize) -> Self {
        LayerSpec { kind: LayerKind::Linear, in_ch: in_features, out_ch: out_features, kernel: 0, stride: 1, padding: 0 }
    }

    pub fn has_weights(self) -> bool {
        matches!(self.kind, LayerKind::StandardConv | LayerKind::DepthwiseConv | LayerKind::Linear)
    }
}

/// Validate layer chaining and per-kind constraints.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("layer list must be nonempty".into()));
    }
    let mut cur = specs[0].in_ch;
    for (i, s) in specs.iter().enumerate() {
        if s.in_ch == 0 || s.out_ch == 0 {
            return Err(Error::InvalidArgument(format!("layer {i}: zero channel count")));
        }
        if s.in_ch != cur {
            return Err(Error::InvalidArgument(format!(
                "layer {i}: expects {cur} input channels, spec says {}",
                s.in_ch
            )));
        }
        match s.kind {
            LayerKind::DepthwiseConv if s.in_ch != s.out_ch => {
                return Err(Error::InvalidArgument(format!(
                    "layer {i}: depthwise conv requires in == out channels"
                )));
            }
            LayerKind::StandardConv | LayerKind::DepthwiseConv => {
                if s.stride != 1 || s.kernel == 0 || s.kernel % 2 == 0 || s.padding != s.kernel / 2 {
                    return Err(Error::InvalidArgument(format!(
                        "layer {i}: only stride-1 odd-kernel same-padding convs are supported"
                    )));
                }
            }
            _ => {}
        }
        cur = s.out_ch;
    }
    Ok(())
}

/// Dense tensor: shape plus row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![T::zero(); n] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-layer weight tensors in declaration order. Convs contribute one 2-D
/// tensor, the linear layer a weight tensor followed by its bias.
///
/// Weight layouts (row-major):
/// * standard conv: `(kernel^2 * in_ch, out_ch)`, rows tap-major;
/// * depthwise conv: `(kernel^2, channels)`;
/// * linear: `(in_features, out_features)` plus bias `(out_features)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn zeros_like(&self) -> Self {
        ParamSet {
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape.clone())).collect(),
        }
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// `self += scale * other`, elementwise across every tensor.
    pub fn add_scaled(&mut self, other: &ParamSet<T>, scale: T) {
        debug_assert_eq!(self.tensors.len(), other.tensors.len());
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            for (d, &s) in dst.data.iter_mut().zip(&src.data) {
                *d += scale * s;
            }
        }
    }
}

/// Tensor shapes implied by a spec list (weighted layers only).
pub fn param_shapes(specs: &[LayerSpec]) -> Vec<Vec<usize>> {
    let mut shapes = Vec::new();
    for s in specs {
        match s.kind {
            LayerKind::StandardConv => shapes.push(vec![s.kernel * s.kernel * s.in_ch, s.out_ch]),
            LayerKind::DepthwiseConv => shapes.push(vec![s.kernel * s.kernel, s.out_ch]),
            LayerKind::Linear => {
                shapes.push(vec![s.in_ch, s.out_ch]);
                shapes.push(vec![s.out_ch]);
            }
            _ => {}
        }
    }
    shapes
}

/// He-style uniform fan-in initialization; biases start at zero. Draws are
/// made in f64 so the same seed produces the same pattern at either precision.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> ParamSet<T> {
    let mut tensors = Vec::new();
    for s in specs {
        match s.kind {
            LayerKind::StandardConv | LayerKind::DepthwiseConv => {
                let fan_in = match s.kind {
                    LayerKind::StandardConv => s.kernel * s.kernel * s.in_ch,
                    _ => s.kernel * s.kernel,
                };
                let shape = if s.kind == LayerKind::StandardConv {
                    vec![s.kernel * s.kernel * s.in_ch, s.out_ch]
                } else {
                    vec![s.kernel * s.kernel, s.out_ch]
                };
                tensors.push(uniform_tensor(shape, fan_in, rng));
            }
            LayerKind::Linear => {
                tensors.push(uniform_tensor(vec![s.in_ch, s.out_ch], s.in_ch, rng));
                tensors.push(Tensor::zeros(vec![s.out_ch]));
            }
            _ => {}
        }
    }
    ParamSet { tensors }
}

fn uniform_tensor<T: Scalar, R: Rng + ?Sized>(
    shape: Vec<usize>,
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(shape, data)
}

/// Per-layer `(in_channels, out_channels)` actually used at `width`.
///
/// The network input and the classifier output are never sliced; every other
/// channel count scales with the width multiplier.
pub fn channel_plan(specs: &[LayerSpec], width: Width) -> Vec<(usize, usize)> {
    let mut plan = Vec::with_capacity(specs.len());
    let mut cur = specs[0].in_ch;
    for (i, s) in specs.iter().enumerate() {
        let out = match s.kind {
            LayerKind::Linear if i == specs.len() - 1 => s.out_ch,
            LayerKind::Relu6 | LayerKind::GlobalAvgPool => cur,
            _ => width.channels(s.out_ch),
        };
        plan.push((cur, out));
        cur = out;
    }
    plan
}

enum LayerCache<T> {
    /// im2col matrix of the layer input.
    StdConv { cols: Tensor<T>, h: usize, w: usize },
    /// Layer input (dense at the executed width).
    Depthwise { input: Tensor<T>, h: usize, w: usize },
    /// 1 where the pre-activation fell strictly inside (0, 6).
    Relu6 { mask: Vec<u8> },
    Pool { h: usize, w: usize },
    /// Layer input features.
    Linear { input: Tensor<T> },
}

/// Everything backward needs from one forward pass.
pub struct ForwardCache<T> {
    batch: usize,
    layers: Vec<LayerCache<T>>,
    plan: Vec<(usize, usize)>,
}

/// Run the network on a batch. `input` is `(batch, h, w, in_ch)` for conv
/// stacks or `(batch, features)` for purely linear ones. Returns the output
/// tensor `(batch, classes)` and the backward cache.
pub fn forward<T: Scalar>(
    specs: &[LayerSpec],
    params: &ParamSet<T>,
    input: &Tensor<T>,
    width: Width,
) -> (Tensor<T>, ForwardCache<T>) {
    let plan = channel_plan(specs, width);
    let (batch, mut h, mut w) = match input.shape.as_slice() {
        [b, h, w, c] => {
            debug_assert_eq!(*c, plan[0].0);
            (*b, *h, *w)
        }
        [b, c] => {
            debug_assert_eq!(*c, plan[0].0);
            (*b, 1, 1)
        }
        other => panic!("unsupported input rank {other:?}"),
    };
    tune_allocator();
    let mut caches = Vec::with_capacity(specs.len());
    let mut act = input.clone();
    let mut tensor_idx = 0usize;
    for (i, s) in specs.iter().enumerate() {
        let (ci, co) = plan[i];
        match s.kind {
            LayerKind::StandardConv => {
                let weight = &params.tensors[tensor_idx];
                tensor_idx += 1;
                // Rows of a 1x1 conv weight are exactly the input channels, so
                // input slicing stays a contiguous block; wider kernels
                // interleave taps and cannot slice their input.
                assert!(
                    s.kernel == 1 || ci == s.in_ch,
                    "cannot slice the input of a k>1 standard conv"
                );
                let cols = im2col(act, batch, h, w, ci, s.kernel, s.padding);
                let rows = batch * h * w;
                let mut out = Tensor::zeros(vec![batch, h, w, co]);
                gemm(
                    T::one(),
                    MatView::dense(&cols.data, rows, s.kernel * s.kernel * ci),
                    false,
                    MatView {
                        data: &weight.data,
                        rows: s.kernel * s.kernel * ci,
                        cols: co,
                        row_stride: s.out_ch,
                    },
                    false,
                    T::zero(),
                    &mut out.data,
                    rows,
                    co,
                    co,
                );
                caches.push(LayerCache::StdConv { cols, h, w });
                act = out;
            }
            LayerKind::DepthwiseConv => {
                let weight = &params.tensors[tensor_idx];
                tensor_idx += 1;
                let out = depthwise_forward(&act, batch, h, w, ci, s, weight, co);
                caches.push(LayerCache::Depthwise { input: act, h, w });
                act = out;
            }
            LayerKind::Relu6 => {
                let zero = T::zero();
                let six = T::from_f64(6.0);
                let mut mask = vec![0u8; act.data.len()];
                for (v, m) in act.data.iter_mut().zip(mask.iter_mut()) {
                    if *v > zero && *v < six {
                        *m = 1;
                    } else if *v <= zero {
                        *v = zero;
                    } else {
                        *v = six;
                    }
                }
                caches.push(LayerCache::Relu6 { mask });
            }
            LayerKind::GlobalAvgPool => {
                let mut out = Tensor::zeros(vec![batch, ci]);
                let inv = T::from_f64(1.0 / (h * w) as f64);
                for b in 0..batch {
                    let base = b * h * w * ci;
                    let dst = &mut out.data[b * ci..(b + 1) * ci];
                    for p in 0..h * w {
                        let src = &act.data[base + p * ci..base + (p + 1) * ci];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    for d in dst.iter_mut() {
                        *d *= inv;
                    }
                }
                caches.push(LayerCache::Pool { h, w });
                h = 1;
                w = 1;
                act = out;
            }
            LayerKind::Linear => {
                let weight = &params.tensors[tensor_idx];
                let bias = &params.tensors[tensor_idx + 1];
                tensor_idx += 2;
                let mut out = Tensor::zeros(vec![batch, co]);
                for b in 0..batch {
                    out.data[b * co..(b + 1) * co].copy_from_slice(&bias.data[..co]);
                }
                gemm(
                    T::one(),
                    MatView::dense(&act.data, batch, ci),
                    false,
                    MatView { data: &weight.data, rows: ci, cols: co, row_stride: s.out_ch },
                    false,
                    T::one(),
                    &mut out.data,
                    batch,
                    co,
                    co,
                );
                caches.push(LayerCache::Linear { input: act });
                act = out;
            }
        }
    }
    (act, ForwardCache { batch, layers: caches, plan })
}

/// Backpropagate `upstream` (gradient of the loss w.r.t. the network output).
///
/// Returns gradients shaped like the full-width parameter set — coordinates
/// outside the executed width's blocks stay exactly zero — plus the gradient
/// w.r.t. the network input.
pub fn backward<T: Scalar>(
    specs: &[LayerSpec],
    params: &ParamSet<T>,
    cache: &ForwardCache<T>,
    upstream: &Tensor<T>,
) -> (ParamSet<T>, Tensor<T>) {
    let mut grads = params.zeros_like();
    let batch = cache.batch;
    let mut grad = upstream.clone();
    let mut tensor_idx = params.tensors.len();
    for (i, s) in specs.iter().enumerate().rev() {
        let (ci, co) = cache.plan[i];
        match (&cache.layers[i], s.kind) {
            (LayerCache::StdConv { cols, h, w }, LayerKind::StandardConv) => {
                tensor_idx -= 1;
                let weight = &params.tensors[tensor_idx];
                let rows = batch * h * w;
                let kk = s.kernel * s.kernel * ci;
                gemm(
                    T::one(),
                    MatView::dense(&cols.data, rows, kk),
                    true,
                    MatView::dense(&grad.data, rows, co),
                    false,
                    T::zero(),
                    &mut grads.tensors[tensor_idx].data,
                    kk,
                    co,
                    s.out_ch,
                );
                let mut dcols = Tensor::zeros(vec![rows, kk]);
                gemm(
                    T::one(),
                    MatView::dense(&grad.data, rows, co),
                    false,
                    MatView { data: &weight.data, rows: kk, cols: co, row_stride: s.out_ch },
                    true,
                    T::zero(),
                    &mut dcols.data,
                    rows,
                    kk,
                    kk,
                );
                grad = col2im(dcols, batch, *h, *w, ci, s.kernel, s.padding);
            }
            (LayerCache::Depthwise { input, h, w }, LayerKind::DepthwiseConv) => {
                tensor_idx -= 1;
                let weight = &params.tensors[tensor_idx];
                let dkernel = &mut grads.tensors[tensor_idx];
                grad = depthwise_backward(input, &grad, batch, *h, *w, ci, s, weight, dkernel);
            }
            (LayerCache::Relu6 { mask }, LayerKind::Relu6) => {
                for (g, &m) in grad.data.iter_mut().zip(mask) {
                    if m == 0 {
                        *g = T::zero();
                    }
                }
            }
            (LayerCache::Pool { h, w }, LayerKind::GlobalAvgPool) => {
                let inv = T::from_f64(1.0 / (h * w) as f64);
                let mut dx = Tensor::zeros(vec![batch, *h, *w, ci]);
                for b in 0..batch {
                    let src = &grad.data[b * ci..(b + 1) * ci];
                    let base = b * h * w * ci;
                    for p in 0..h * w {
                        let dst = &mut dx.data[base + p * ci..base + (p + 1) * ci];
                        for (d, &g) in dst.iter_mut().zip(src) {
                            *d = g * inv;
                        }
                    }
                }
                grad = dx;
            }
            (LayerCache::Linear { input }, LayerKind::Linear) => {
                tensor_idx -= 2;
                let weight = &params.tensors[tensor_idx];
                {
                    let dbias = &mut grads.tensors[tensor_idx + 1];
                    for b in 0..batch {
                        for (db, &g) in
                            dbias.data[..co].iter_mut().zip(&grad.data[b * co..(b + 1) * co])
                        {
                            *db += g;
                        }
                    }
                }
                gemm(
                    T::one(),
                    MatView::dense(&input.data, batch, ci),
                    true,
                    MatView::dense(&grad.data, batch, co),
                    false,
                    T::zero(),
                    &mut grads.tensors[tensor_idx].data,
                    ci,
                    co,
                    s.out_ch,
                );
                let mut dx = Tensor::zeros(vec![batch, ci]);
                gemm(
                    T::one(),
                    MatView::dense(&grad.data, batch, co),
                    false,
                    MatView { data: &weight.data, rows: ci, cols: co, row_stride: s.out_ch },
                    true,
                    T::zero(),
                    &mut dx.data,
                    batch,
                    ci,
                    ci,
                );
                grad = dx;
            }
            _ => unreachable!("cache kind mismatch"),
        }
    }
    (grads, grad)
}

/// Expand `(b, h, w, c)` into `(b*h*w, kernel^2 * c)` patches, tap-major,
/// zero-padded at the border. A 1x1 kernel is the identity, so the input
/// buffer is reused as is.
fn im2col<T: Scalar>(
    act: Tensor<T>,
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
    kernel: usize,
    padding: usize,
) -> Tensor<T> {
    if kernel == 1 && padding == 0 {
        return Tensor::new(vec![batch * h * w, c], act.data);
    }
    let kk = kernel * kernel * c;
    let mut cols = Tensor::zeros(vec![batch * h * w, kk]);
    for b in 0..batch {
        for oy in 0..h {
            for tap_y in 0..kernel {
                let iy = oy as isize + tap_y as isize - padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                let iy = iy as usize;
                for tap_x in 0..kernel {
                    let tap = tap_y * kernel + tap_x;
                    let dx = tap_x as isize - padding as isize;
                    let ox_lo = (-dx).max(0) as usize;
                    let ox_hi = (w as isize - dx).min(w as isize) as usize;
                    for ox in ox_lo..ox_hi {
                        let ix = (ox as isize + dx) as usize;
                        let src = ((b * h + iy) * w + ix) * c;
                        let dst = ((b * h + oy) * w + ox) * kk + tap * c;
                        if c == 1 {
                            cols.data[dst] = act.data[src];
                        } else {
                            cols.data[dst..dst + c].copy_from_slice(&act.data[src..src + c]);
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add the column gradient back into `(b, h, w, c)`.
fn col2im<T: Scalar>(
    dcols: Tensor<T>,
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
    kernel: usize,
    padding: usize,
) -> Tensor<T> {
    if kernel == 1 && padding == 0 {
        return Tensor::new(vec![batch, h, w, c], dcols.data);
    }
    let kk = kernel * kernel * c;
    let mut dx = Tensor::zeros(vec![batch, h, w, c]);
    for b in 0..batch {
        for oy in 0..h {
            for tap_y in 0..kernel {
                let iy = oy as isize + tap_y as isize - padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                let iy = iy as usize;
                for tap_x in 0..kernel {
                    let tap = tap_y * kernel + tap_x;
                    let dx_off = tap_x as isize - padding as isize;
                    let ox_lo = (-dx_off).max(0) as usize;
                    let ox_hi = (w as isize - dx_off).min(w as isize) as usize;
                    for ox in ox_lo..ox_hi {
                        let ix = (ox as isize + dx_off) as usize;
                        let dst = ((b * h + iy) * w + ix) * c;
                        let src = ((b * h + oy) * w + ox) * kk + tap * c;
                        if c == 1 {
                            dx.data[dst] += dcols.data[src];
                        } else {
                            for (d, &g) in
                                dx.data[dst..dst + c].iter_mut().zip(&dcols.data[src..src + c])
                            {
                                *d += g;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

#[allow(clippy::too_many_arguments)]
fn depthwise_forward<T: Scalar>(
    act: &Tensor<T>,
    batch: usize,
    h: usize,
    w: usize,
    ci: usize,
    s: &LayerSpec,
    weight: &Tensor<T>,
    co: usize,
) -> Tensor<T> {
    debug_assert_eq!(ci, co);
    let mut out = Tensor::zeros(vec![batch, h, w, co]);
    let full_c = s.out_ch;
    for b in 0..batch {
        for tap_y in 0..s.kernel {
            for tap_x in 0..s.kernel {
                let tap = tap_y * s.kernel + tap_x;
                let wk = &weight.data[tap * full_c..tap * full_c + co];
                let dy = tap_y as isize - s.padding as isize;
                let dx = tap_x as isize - s.padding as isize;
                let ox_lo = (-dx).max(0) as usize;
                let ox_hi = (w as isize - dx).min(w as isize) as usize;
                if ox_lo >= ox_hi {
                    continue;
                }
                let run = ox_hi - ox_lo;
                for oy in 0..h {
                    let iy = oy as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    let src = ((b * h + iy) * w + (ox_lo as isize + dx) as usize) * ci;
                    let dst = ((b * h + oy) * w + ox_lo) * co;
                    let x_run = &act.data[src..src + run * ci];
                    let y_run = &mut out.data[dst..dst + run * co];
                    for (y_px, x_px) in y_run.chunks_exact_mut(co).zip(x_run.chunks_exact(ci)) {
                        for i in 0..co {
                            y_px[i] += x_px[i] * wk[i];
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn depthwise_backward<T: Scalar>(
    input: &Tensor<T>,
    grad: &Tensor<T>,
    batch: usize,
    h: usize,
    w: usize,
    ci: usize,
    s: &LayerSpec,
    weight: &Tensor<T>,
    dkernel: &mut Tensor<T>,
) -> Tensor<T> {
    let full_c = s.out_ch;
    let mut dx = Tensor::zeros(vec![batch, h, w, ci]);
    let mut dk_local = vec![T::zero(); s.kernel * s.kernel * ci];
    for b in 0..batch {
        for tap_y in 0..s.kernel {
            for tap_x in 0..s.kernel {
                let tap = tap_y * s.kernel + tap_x;
                let wk = &weight.data[tap * full_c..tap * full_c + ci];
                let dk = &mut dk_local[tap * ci..(tap + 1) * ci];
                let dy_off = tap_y as isize - s.padding as isize;
                let dx_off = tap_x as isize - s.padding as isize;
                let ox_lo = (-dx_off).max(0) as usize;
                let ox_hi = (w as isize - dx_off).min(w as isize) as usize;
                if ox_lo >= ox_hi {
                    continue;
                }
                let run = ox_hi - ox_lo;
                for oy in 0..h {
                    let iy = oy as isize + dy_off;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    let src = ((b * h + iy) * w + (ox_lo as isize + dx_off) as usize) * ci;
                    let gsrc = ((b * h + oy) * w + ox_lo) * ci;
                    let x_run = &input.data[src..src + run * ci];
                    let g_run = &grad.data[gsrc..gsrc + run * ci];
                    let dx_run = &mut dx.data[src..src + run * ci];
                    for ((x_px, g_px), dx_px) in x_run
                        .chunks_exact(ci)
                        .zip(g_run.chunks_exact(ci))
                        .zip(dx_run.chunks_exact_mut(ci))
                    {
                        for i in 0..ci {
                            dk[i] += x_px[i] * g_px[i];
                            dx_px[i] += g_px[i] * wk[i];
                        }
                    }
                }
            }
        }
    }
    // Scatter the dense local accumulator into the (possibly wider) gradient.
    for tap in 0..s.kernel * s.kernel {
        for (d, &v) in dkernel.data[tap * full_c..tap * full_c + ci]
            .iter_mut()
            .zip(&dk_local[tap * ci..(tap + 1) * ci])
        {
            *d += v;
        }
    }
    dx
}
