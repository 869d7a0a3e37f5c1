//! Small convolutional networks with reverse-mode gradients and plain SGD.
//!
//! Activations are stored channel-major as `[C, B, H, W]` so that 3×3
//! convolutions and dense layers reduce to single matrix products over the
//! batch. Network inputs and outputs use the usual sample-major order.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Scalar type of a network: `f32` for training runs, `f64` for checks.
pub trait Float:
    Copy
    + Default
    + PartialOrd
    + fmt::Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;

}

macro_rules! impl_float {
    ($t:ty) => {
        impl Float for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_float!(f32);
impl_float!(f64);

/// Row-major product `C = op(A)·op(B) + β·C` where `op` optionally transposes.
///
/// `A` is stored as `m×k` (or `k×m` when `ta`), `B` as `k×n` (or `n×k`).
#[allow(clippy::too_many_arguments)]
fn matmul<T: Float>(m: usize, k: usize, n: usize, a: &[T], ta: bool, b: &[T], tb: bool, beta: T, c: &mut [T]) {
    let lda = if ta { m } else { k };
    let ldb = if tb { k } else { n };
    matmul_ld(m, k, n, (a, lda, ta), (b, ldb, tb), beta, c, n);
}

/// [`matmul`] on sub-matrices with explicit row strides `ld`.
#[allow(clippy::too_many_arguments)]
fn matmul_ld<T: Float>(
    m: usize,
    k: usize,
    n: usize,
    (a, lda, ta): (&[T], usize, bool),
    (b, ldb, tb): (&[T], usize, bool),
    beta: T,
    c: &mut [T],
    ldc: usize,
) {
    let extent = |rows: usize, cols: usize, ld: usize| if rows == 0 || cols == 0 { 0 } else { (rows - 1) * ld + cols };
    let (ar, ac) = if ta { (k, m) } else { (m, k) };
    let (br, bc) = if tb { (n, k) } else { (k, n) };
    assert!(a.len() >= extent(ar, ac, lda) && b.len() >= extent(br, bc, ldb) && c.len() >= extent(m, n, ldc));
    let (rsa, csa) = if ta { (1, lda as isize) } else { (lda as isize, 1) };
    let (rsb, csb) = if tb { (1, ldb as isize) } else { (ldb as isize, 1) };
    let read_dst = beta != T::ZERO;
    // SAFETY: the extents are checked above; `c` is a distinct mutable borrow.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            c.as_mut_ptr(),
            1,
            ldc as isize,
            read_dst,
            a.as_ptr(),
            csa,
            rsa,
            b.as_ptr(),
            csb,
            rsb,
            beta,
            T::ONE,
            false,
            false,
            false,
            gemm::Parallelism::None,
        )
    }
}

/// Upper bound on im2col buffer entries; convolutions run in sample chunks
/// that fit.
const COL_BUDGET: usize = 1 << 18;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Square kernel, stride 1, zero padding "same".
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    BatchNorm {
        channels: usize,
    },
    Relu,
    MaxPool2,
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Softmax,
}

impl LayerSpec {
    fn output_shape(&self, [c, h, w]: [usize; 3]) -> Result<[usize; 3]> {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
            } => {
                if in_channels != c {
                    return Err(mismatch(format!("{in_channels} conv input channels"), c));
                }
                if kernel % 2 == 0 || kernel == 0 {
                    return Err(Error::InvalidConfig(format!("conv kernel {kernel} must be odd")));
                }
                Ok([out_channels, h, w])
            }
            LayerSpec::BatchNorm { channels } => {
                if channels != c {
                    return Err(mismatch(format!("{channels} batchnorm channels"), c));
                }
                Ok([c, h, w])
            }
            LayerSpec::Relu => Ok([c, h, w]),
            LayerSpec::MaxPool2 => {
                if h < 2 || w < 2 {
                    return Err(Error::InvalidConfig(format!("cannot pool a {h}x{w} map")));
                }
                Ok([c, h / 2, w / 2])
            }
            LayerSpec::Dense { inputs, outputs } => {
                if inputs != c * h * w {
                    return Err(mismatch(format!("{inputs} dense inputs"), c * h * w));
                }
                Ok([outputs, 1, 1])
            }
            LayerSpec::Softmax => {
                if h != 1 || w != 1 {
                    return Err(Error::InvalidConfig("softmax needs a flat input".into()));
                }
                Ok([c, 1, 1])
            }
        }
    }
}

/// Four conv/batchnorm/relu/pool stages, a 1024-unit dense layer and a
/// two-way softmax, for `channels`-deep 21×21 patches.
pub fn densee_architecture(channels: usize) -> Vec<LayerSpec> {
    reduced_architecture(channels, [32, 32, 64, 64], 1024)
}

/// The same layout with custom stage widths and hidden size.
pub fn reduced_architecture(channels: usize, widths: [usize; 4], hidden: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut c = channels;
    for w in widths {
        specs.push(LayerSpec::Conv {
            in_channels: c,
            out_channels: w,
            kernel: 3,
        });
        specs.push(LayerSpec::BatchNorm { channels: w });
        specs.push(LayerSpec::Relu);
        specs.push(LayerSpec::MaxPool2);
        c = w;
    }
    specs.push(LayerSpec::Dense {
        inputs: c,
        outputs: hidden,
    });
    specs.push(LayerSpec::Relu);
    specs.push(LayerSpec::Dense {
        inputs: hidden,
        outputs: 2,
    });
    specs.push(LayerSpec::Softmax);
    specs
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batchnorm normalizes with batch statistics.
    Train,
    /// Batchnorm uses running statistics.
    Inference,
}

#[derive(Clone, Debug, PartialEq)]
struct Layer<T> {
    spec: LayerSpec,
    input: [usize; 3],
    output: [usize; 3],
    params: Vec<Vec<T>>,
    /// Batchnorm running mean and variance.
    running: Option<(Vec<T>, Vec<T>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    input: [usize; 3],
    layers: Vec<Layer<T>>,
}

/// Parameter gradients plus the batchnorm batch statistics they were computed with.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub params: Vec<Vec<Vec<T>>>,
    /// Per layer: batch mean and unbiased batch variance, batchnorm only.
    pub batch_stats: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Float> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Self {
            params: net
                .layers
                .iter()
                .map(|l| l.params.iter().map(|p| vec![T::ZERO; p.len()]).collect())
                .collect(),
            batch_stats: vec![None; net.layers.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().flatten().flatten().all(|v| v.is_finite())
            && self
                .batch_stats
                .iter()
                .flatten()
                .all(|(m, v)| m.iter().chain(v).all(|x| x.is_finite()))
    }
}

/// Activation tensor `[C, B, H, W]`.
struct Act<T> {
    c: usize,
    b: usize,
    h: usize,
    w: usize,
    data: Vec<T>,
}

enum Cache<T> {
    None,
    Conv { input: Vec<T> },
    BatchNorm {
        xhat: Vec<T>,
        inv_std: Vec<T>,
        mean: Vec<T>,
        var: Vec<T>,
    },
    Relu { mask: Vec<bool> },
    Pool { argmax: Vec<usize>, in_len: usize },
    Dense { x: Vec<T> },
    Softmax,
}

impl<T: Float> Network<T> {
    /// Build with fan-in scaled uniform initialization.
    pub fn new(input: [usize; 3], specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input;
        let mut layers = Vec::with_capacity(specs.len());
        let last = specs.len().saturating_sub(1);
        for (idx, spec) in specs.into_iter().enumerate() {
            if spec == LayerSpec::Softmax && idx != last {
                return Err(Error::InvalidConfig("softmax must be the last layer".into()));
            }
            let output = spec.output_shape(shape)?;
            let params = match spec {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    let fan_in = in_channels * kernel * kernel;
                    vec![
                        uniform(&mut rng, out_channels * fan_in, fan_in),
                        uniform(&mut rng, out_channels, fan_in),
                    ]
                }
                LayerSpec::Dense { inputs, outputs } => vec![
                    uniform(&mut rng, outputs * inputs, inputs),
                    uniform(&mut rng, outputs, inputs),
                ],
                LayerSpec::BatchNorm { channels } => {
                    vec![vec![T::ONE; channels], vec![T::ZERO; channels]]
                }
                _ => vec![],
            };
            let running = match spec {
                LayerSpec::BatchNorm { channels } => {
                    Some((vec![T::ZERO; channels], vec![T::ONE; channels]))
                }
                _ => None,
            };
            layers.push(Layer {
                spec,
                input: shape,
                output,
                params,
                running,
            });
            shape = output;
        }
        if layers.is_empty() {
            return Err(Error::Empty("network has no layers"));
        }
        Ok(Self { input, layers })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map(|l| l.output.iter().product()).unwrap_or(0)
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.params).map(Vec::len).sum()
    }

    pub fn param(&self, layer: usize, tensor: usize) -> &[T] {
        &self.layers[layer].params[tensor]
    }

    pub fn param_mut(&mut self, layer: usize, tensor: usize) -> &mut [T] {
        &mut self.layers[layer].params[tensor]
    }

    pub fn param_tensor_count(&self, layer: usize) -> usize {
        self.layers[layer].params.len()
    }

    pub fn running_stats(&self, layer: usize) -> Option<(&[T], &[T])> {
        self.layers[layer]
            .running
            .as_ref()
            .map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// Trainable tensors followed by running statistics, layer by layer.
    pub fn export_tensors(&self) -> Vec<Vec<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.params.iter().cloned());
            if let Some((m, v)) = &l.running {
                out.push(m.clone());
                out.push(v.clone());
            }
        }
        out
    }

    /// Inverse of [`export_tensors`](Self::export_tensors).
    pub fn import_tensors(&mut self, tensors: Vec<Vec<T>>) -> Result<()> {
        let mut it = tensors.into_iter();
        let mut take = |len: usize| -> Result<Vec<T>> {
            let t = it.next().ok_or(Error::Format("too few parameter tensors".into()))?;
            if t.len() != len {
                return Err(mismatch(len, t.len()));
            }
            if !t.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("imported parameters".into()));
            }
            Ok(t)
        };
        for l in &mut self.layers {
            for p in &mut l.params {
                *p = take(p.len())?;
            }
            if let Some((m, v)) = &mut l.running {
                *m = take(m.len())?;
                *v = take(v.len())?;
            }
        }
        if it.next().is_some() {
            return Err(Error::Format("too many parameter tensors".into()));
        }
        Ok(())
    }

    /// Same network in another precision.
    pub fn cast<U: Float>(&self) -> Network<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::from_f64(x.to_f64())).collect::<Vec<U>>();
        Network {
            input: self.input,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec.clone(),
                    input: l.input,
                    output: l.output,
                    params: l.params.iter().map(conv).collect(),
                    running: l.running.as_ref().map(|(m, v)| (conv(m), conv(v))),
                })
                .collect(),
        }
    }

    fn check_input(&self, input: &[T], batch: usize) -> Result<()> {
        if batch == 0 {
            return Err(Error::Empty("batch"));
        }
        if input.len() != batch * self.input_len() {
            return Err(mismatch(batch * self.input_len(), input.len()));
        }
        if !input.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    /// Outputs for a sample-major batch `[B, C, H, W]`, as `[B, K]`.
    pub fn forward(&self, input: &[T], batch: usize, mode: Mode) -> Result<Vec<T>> {
        self.check_input(input, batch)?;
        let mut act = to_channel_major(input, batch, self.input);
        for layer in &self.layers {
            act = layer.forward(act, mode, None);
        }
        Ok(from_channel_major(&act))
    }

    /// Mean cross-entropy of the softmax output against class labels.
    pub fn loss(&self, input: &[T], batch: usize, labels: &[usize], mode: Mode) -> Result<f64> {
        let probs = self.forward(input, batch, mode)?;
        self.check_labels(labels, batch)?;
        let k = self.output_len();
        Ok(labels
            .iter()
            .enumerate()
            .map(|(b, &y)| -probs[b * k + y].to_f64().max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / batch as f64)
    }

    fn check_labels(&self, labels: &[usize], batch: usize) -> Result<()> {
        if labels.len() != batch {
            return Err(mismatch(batch, labels.len()));
        }
        let k = self.output_len();
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::InvalidConfig(format!("label {bad} out of range for {k} classes")));
        }
        Ok(())
    }

    /// Mean cross-entropy and its gradients in training mode.
    pub fn loss_and_gradients(&self, input: &[T], batch: usize, labels: &[usize]) -> Result<(f64, Gradients<T>)> {
        let (loss, grads, _) = self.backprop(input, batch, labels, false)?;
        Ok((loss, grads))
    }

    /// Loss and gradient with respect to the sample-major input.
    pub fn loss_and_input_gradient(&self, input: &[T], batch: usize, labels: &[usize]) -> Result<(f64, Vec<T>)> {
        let (loss, _, dx) = self.backprop(input, batch, labels, true)?;
        Ok((loss, dx.expect("requested")))
    }

    fn backprop(
        &self,
        input: &[T],
        batch: usize,
        labels: &[usize],
        want_input: bool,
    ) -> Result<(f64, Gradients<T>, Option<Vec<T>>)> {
        self.check_input(input, batch)?;
        self.check_labels(labels, batch)?;
        if self.layers.last().map(|l| &l.spec) != Some(&LayerSpec::Softmax) {
            return Err(Error::InvalidConfig("loss needs a softmax output".into()));
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut grads = Gradients::zeros_like(self);
        let mut act = to_channel_major(input, batch, self.input);
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut cache = Cache::None;
            act = layer.forward(act, Mode::Train, Some(&mut cache));
            if let Cache::BatchNorm { .. } = cache {
                let n = batch * layer.input[1] * layer.input[2];
                grads.batch_stats[idx] = Some(layer.batch_stats(&cache, n));
            }
            caches.push(cache);
        }
        // `act` holds probabilities [K, B, 1, 1]; the softmax and
        // cross-entropy gradients combine to (p - onehot) / B.
        let k = act.c;
        let mut loss = 0.0;
        let inv_b = T::from_f64(1.0 / batch as f64);
        let mut delta = act.data.clone();
        for (b, &y) in labels.iter().enumerate() {
            loss -= act.data[y * batch + b].to_f64().max(f64::MIN_POSITIVE).ln();
            delta[y * batch + b] -= T::ONE;
        }
        for v in &mut delta {
            *v *= inv_b;
        }
        let mut d = Act {
            c: k,
            b: batch,
            h: 1,
            w: 1,
            data: delta,
        };
        for idx in (0..self.layers.len()).rev() {
            if self.layers[idx].spec == LayerSpec::Softmax {
                continue;
            }
            if idx == 0 && !want_input {
                self.layers[0].backward_params_only(&d, &caches[0], &mut grads.params[0]);
                break;
            }
            d = self.layers[idx].backward(d, &caches[idx], &mut grads.params[idx]);
        }
        let dx = want_input.then(|| from_channel_major(&d));
        Ok((loss / batch as f64, grads, dx))
    }

    /// `θ ← θ − lr·∇θ`; batchnorm running statistics move toward the batch
    /// statistics carried in `grads` with momentum 0.9.
    ///
    /// Non-finite gradients leave the network untouched.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: f64) -> Result<()> {
        if grads.params.len() != self.layers.len() {
            return Err(mismatch(self.layers.len(), grads.params.len()));
        }
        for (l, g) in self.layers.iter().zip(&grads.params) {
            if l.params.len() != g.len() || l.params.iter().zip(g).any(|(p, q)| p.len() != q.len()) {
                return Err(mismatch("gradient shapes matching the network", "other shapes"));
            }
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients".into()));
        }
        let lr = T::from_f64(lr);
        let keep = T::from_f64(BN_MOMENTUM);
        let take = T::from_f64(1.0 - BN_MOMENTUM);
        for ((l, g), stats) in self.layers.iter_mut().zip(&grads.params).zip(&grads.batch_stats) {
            for (p, q) in l.params.iter_mut().zip(g) {
                for (x, &dx) in p.iter_mut().zip(q) {
                    *x -= lr * dx;
                }
            }
            if let (Some((rm, rv)), Some((bm, bv))) = (&mut l.running, stats) {
                for (r, &b) in rm.iter_mut().zip(bm) {
                    *r = keep * *r + take * b;
                }
                for (r, &b) in rv.iter_mut().zip(bv) {
                    *r = keep * *r + take * b;
                }
            }
        }
        Ok(())
    }
}

fn uniform<T: Float>(rng: &mut ChaCha8Rng, len: usize, fan_in: usize) -> Vec<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect()
}

fn to_channel_major<T: Float>(input: &[T], batch: usize, [c, h, w]: [usize; 3]) -> Act<T> {
    let plane = h * w;
    let mut data = vec![T::ZERO; input.len()];
    for b in 0..batch {
        for ch in 0..c {
            let src = &input[(b * c + ch) * plane..(b * c + ch + 1) * plane];
            data[(ch * batch + b) * plane..(ch * batch + b + 1) * plane].copy_from_slice(src);
        }
    }
    Act { c, b: batch, h, w, data }
}

fn from_channel_major<T: Float>(act: &Act<T>) -> Vec<T> {
    let plane = act.h * act.w;
    let mut out = vec![T::ZERO; act.data.len()];
    for ch in 0..act.c {
        for b in 0..act.b {
            let src = &act.data[(ch * act.b + b) * plane..(ch * act.b + b + 1) * plane];
            out[(b * act.c + ch) * plane..(b * act.c + ch + 1) * plane].copy_from_slice(src);
        }
    }
    out
}

impl<T: Float> Layer<T> {
    fn forward(&self, x: Act<T>, mode: Mode, cache: Option<&mut Cache<T>>) -> Act<T> {
        let [oc, oh, ow] = self.output;
        let batch = x.b;
        match self.spec {
            LayerSpec::Conv { kernel, .. } => {
                let hw = x.h * x.w;
                let n = batch * hw;
                let rows = x.c * kernel * kernel;
                let mut out = vec![T::ZERO; oc * n];
                let mut col = Vec::new();
                for (b0, b1) in chunks(batch, rows * hw) {
                    im2col(&x, kernel, b0, b1, &mut col);
                    let cols = (b1 - b0) * hw;
                    matmul_ld(
                        oc,
                        rows,
                        cols,
                        (&self.params[0], rows, false),
                        (&col, cols, false),
                        T::ZERO,
                        &mut out[b0 * hw..],
                        n,
                    );
                }
                for (co, chunk) in out.chunks_exact_mut(n).enumerate() {
                    let bias = self.params[1][co];
                    for v in chunk {
                        *v += bias;
                    }
                }
                if let Some(c) = cache {
                    *c = Cache::Conv { input: x.data };
                }
                Act {
                    c: oc,
                    b: batch,
                    h: oh,
                    w: ow,
                    data: out,
                }
            }
            LayerSpec::BatchNorm { channels } => {
                let n = batch * x.h * x.w;
                let eps = T::from_f64(BN_EPSILON);
                let mut out = x.data;
                let mut xhat_all = if cache.is_some() { vec![T::ZERO; out.len()] } else { Vec::new() };
                let mut inv_stds = vec![T::ZERO; channels];
                let mut means = vec![T::ZERO; channels];
                let mut vars = vec![T::ZERO; channels];
                for ch in 0..channels {
                    let slice = &mut out[ch * n..(ch + 1) * n];
                    let (mean, var) = match mode {
                        Mode::Train => mean_var(slice),
                        Mode::Inference => {
                            let (m, v) = self.running.as_ref().expect("batchnorm stats");
                            (m[ch], v[ch])
                        }
                    };
                    let inv_std = T::ONE / (var + eps).sqrt();
                    inv_stds[ch] = inv_std;
                    means[ch] = mean;
                    vars[ch] = var;
                    let (g, beta) = (self.params[0][ch], self.params[1][ch]);
                    for (k, v) in slice.iter_mut().enumerate() {
                        let xh = (*v - mean) * inv_std;
                        if !xhat_all.is_empty() {
                            xhat_all[ch * n + k] = xh;
                        }
                        *v = g * xh + beta;
                    }
                }
                if let Some(c) = cache {
                    *c = Cache::BatchNorm {
                        xhat: xhat_all,
                        inv_std: inv_stds,
                        mean: means,
                        var: vars,
                    };
                }
                Act { data: out, ..x }
            }
            LayerSpec::Relu => {
                let mut data = x.data;
                let mask: Vec<bool> = data.iter().map(|&v| v > T::ZERO).collect();
                for (v, &m) in data.iter_mut().zip(&mask) {
                    if !m {
                        *v = T::ZERO;
                    }
                }
                if let Some(c) = cache {
                    *c = Cache::Relu { mask };
                }
                Act { data, ..x }
            }
            LayerSpec::MaxPool2 => {
                let planes = x.c * batch;
                let mut out = vec![T::ZERO; planes * oh * ow];
                let mut argmax = vec![0usize; out.len()];
                for p in 0..planes {
                    let base = p * x.h * x.w;
                    for y in 0..oh {
                        for z in 0..ow {
                            let mut best = base + 2 * y * x.w + 2 * z;
                            for (dy, dz) in [(0, 1), (1, 0), (1, 1)] {
                                let k = base + (2 * y + dy) * x.w + 2 * z + dz;
                                if x.data[k] > x.data[best] {
                                    best = k;
                                }
                            }
                            let o = (p * oh + y) * ow + z;
                            out[o] = x.data[best];
                            argmax[o] = best;
                        }
                    }
                }
                if let Some(c) = cache {
                    *c = Cache::Pool {
                        argmax,
                        in_len: x.data.len(),
                    };
                }
                Act {
                    c: x.c,
                    b: batch,
                    h: oh,
                    w: ow,
                    data: out,
                }
            }
            LayerSpec::Dense { inputs, outputs } => {
                let flat = flatten(&x);
                let mut out = vec![T::ZERO; outputs * batch];
                matmul(outputs, inputs, batch, &self.params[0], false, &flat, false, T::ZERO, &mut out);
                for (o, chunk) in out.chunks_exact_mut(batch).enumerate() {
                    let bias = self.params[1][o];
                    for v in chunk {
                        *v += bias;
                    }
                }
                if let Some(c) = cache {
                    *c = Cache::Dense { x: flat };
                }
                Act {
                    c: outputs,
                    b: batch,
                    h: 1,
                    w: 1,
                    data: out,
                }
            }
            LayerSpec::Softmax => {
                let k = x.c;
                let mut data = x.data;
                for b in 0..batch {
                    let mut max = data[b];
                    for c in 1..k {
                        if data[c * batch + b] > max {
                            max = data[c * batch + b];
                        }
                    }
                    let mut total = T::ZERO;
                    for c in 0..k {
                        let e = (data[c * batch + b] - max).exp();
                        data[c * batch + b] = e;
                        total += e;
                    }
                    for c in 0..k {
                        data[c * batch + b] = data[c * batch + b] / total;
                    }
                }
                if let Some(c) = cache {
                    *c = Cache::Softmax;
                }
                Act { data, ..x }
            }
        }
    }

    /// Batch mean and unbiased variance recorded by a training forward pass.
    fn batch_stats(&self, cache: &Cache<T>, n: usize) -> (Vec<T>, Vec<T>) {
        match cache {
            Cache::BatchNorm { mean, var, .. } => {
                let correction = T::from_f64(if n > 1 { n as f64 / (n as f64 - 1.0) } else { 1.0 });
                (mean.clone(), var.iter().map(|&v| v * correction).collect())
            }
            _ => unreachable!("batch statistics requested from a non-batchnorm layer"),
        }
    }

    fn backward_params_only(&self, d: &Act<T>, cache: &Cache<T>, grads: &mut [Vec<T>]) {
        match (&self.spec, cache) {
            (LayerSpec::Conv { kernel, .. }, Cache::Conv { input }) => {
                self.conv_backward(d, input, *kernel, grads, false);
            }
            (LayerSpec::Dense { inputs, outputs }, Cache::Dense { x }) => {
                dense_param_grads(d, x, *inputs, *outputs, grads)
            }
            _ => {
                let _ = self.backward(
                    Act {
                        c: d.c,
                        b: d.b,
                        h: d.h,
                        w: d.w,
                        data: d.data.clone(),
                    },
                    cache,
                    grads,
                );
            }
        }
    }

    /// Parameter gradients of a convolution, plus the input gradient when
    /// `want_input`; im2col is recomputed chunk by chunk.
    fn conv_backward(&self, d: &Act<T>, input: &[T], kernel: usize, grads: &mut [Vec<T>], want_input: bool) -> Option<Vec<T>> {
        let [ic, ih, iw] = self.input;
        let batch = d.b;
        let hw = ih * iw;
        let n = batch * hw;
        let oc = d.c;
        let rows = ic * kernel * kernel;
        let x = Act {
            c: ic,
            b: batch,
            h: ih,
            w: iw,
            data: input.to_vec(),
        };
        grads[0].fill(T::ZERO);
        let mut dx = want_input.then(|| vec![T::ZERO; ic * n]);
        let mut col = Vec::new();
        let mut dcol = Vec::new();
        for (b0, b1) in chunks(batch, rows * hw) {
            let cols = (b1 - b0) * hw;
            im2col(&x, kernel, b0, b1, &mut col);
            matmul_ld(
                oc,
                cols,
                rows,
                (&d.data[b0 * hw..], n, false),
                (&col, cols, true),
                T::ONE,
                &mut grads[0],
                rows,
            );
            if let Some(dx) = dx.as_mut() {
                dcol.clear();
                dcol.resize(rows * cols, T::ZERO);
                matmul_ld(
                    rows,
                    oc,
                    cols,
                    (&self.params[0], rows, true),
                    (&d.data[b0 * hw..], n, false),
                    T::ZERO,
                    &mut dcol,
                    cols,
                );
                col2im(&dcol, dx, ic, batch, ih, iw, kernel, b0, b1);
            }
        }
        for (co, chunk) in d.data.chunks_exact(n).enumerate() {
            grads[1][co] = chunk.iter().copied().sum();
        }
        dx
    }

    fn backward(&self, d: Act<T>, cache: &Cache<T>, grads: &mut [Vec<T>]) -> Act<T> {
        let [ic, ih, iw] = self.input;
        let batch = d.b;
        match (&self.spec, cache) {
            (LayerSpec::Conv { kernel, .. }, Cache::Conv { input }) => {
                let data = self.conv_backward(&d, input, *kernel, grads, true).expect("requested");
                Act {
                    c: ic,
                    b: batch,
                    h: ih,
                    w: iw,
                    data,
                }
            }
            (LayerSpec::BatchNorm { channels }, Cache::BatchNorm { xhat, inv_std, .. }) => {
                let n = batch * ih * iw;
                let nf = T::from_f64(n as f64);
                let mut dx = d.data;
                for ch in 0..*channels {
                    let dy = &mut dx[ch * n..(ch + 1) * n];
                    let xh = &xhat[ch * n..(ch + 1) * n];
                    let sum_dy: T = dy.iter().copied().sum();
                    let sum_dy_xh: T = dy.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                    grads[0][ch] = sum_dy_xh;
                    grads[1][ch] = sum_dy;
                    let g = self.params[0][ch];
                    let scale = g * inv_std[ch] / nf;
                    for (v, &x) in dy.iter_mut().zip(xh) {
                        *v = scale * (nf * *v - sum_dy - x * sum_dy_xh);
                    }
                }
                Act {
                    c: ic,
                    b: batch,
                    h: ih,
                    w: iw,
                    data: dx,
                }
            }
            (LayerSpec::Relu, Cache::Relu { mask }) => {
                let mut data = d.data;
                for (v, &m) in data.iter_mut().zip(mask) {
                    if !m {
                        *v = T::ZERO;
                    }
                }
                Act { data, ..d }
            }
            (LayerSpec::MaxPool2, Cache::Pool { argmax, in_len }) => {
                let mut data = vec![T::ZERO; *in_len];
                for (&k, &g) in argmax.iter().zip(&d.data) {
                    data[k] += g;
                }
                Act {
                    c: ic,
                    b: batch,
                    h: ih,
                    w: iw,
                    data,
                }
            }
            (LayerSpec::Dense { inputs, outputs }, Cache::Dense { x }) => {
                dense_param_grads(&d, x, *inputs, *outputs, grads);
                let mut dflat = vec![T::ZERO; inputs * batch];
                matmul(*inputs, *outputs, batch, &self.params[0], true, &d.data, false, T::ZERO, &mut dflat);
                unflatten(&dflat, ic, batch, ih, iw)
            }
            _ => unreachable!("cache does not match layer"),
        }
    }
}

fn dense_param_grads<T: Float>(d: &Act<T>, x: &[T], inputs: usize, outputs: usize, grads: &mut [Vec<T>]) {
    let batch = d.b;
    matmul(outputs, batch, inputs, &d.data, false, x, true, T::ZERO, &mut grads[0]);
    for (o, chunk) in d.data.chunks_exact(batch).enumerate() {
        grads[1][o] = chunk.iter().copied().sum();
    }
}

/// Biased mean and variance of a slice.
fn mean_var<T: Float>(v: &[T]) -> (T, T) {
    let n = T::from_f64(v.len() as f64);
    let mean = v.iter().copied().sum::<T>() / n;
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    (mean, var)
}

/// Sample ranges whose im2col buffers stay within [`COL_BUDGET`].
fn chunks(batch: usize, per_sample: usize) -> Vec<(usize, usize)> {
    let step = (COL_BUDGET / per_sample.max(1)).clamp(1, batch.max(1));
    (0..batch).step_by(step).map(|b0| (b0, (b0 + step).min(batch))).collect()
}

/// Samples `b0..b1` of `[C, B, H, W]` → `[C·k·k, (b1-b0)·H·W]`, zero padding `k / 2`.
fn im2col<T: Float>(x: &Act<T>, k: usize, b0: usize, b1: usize, col: &mut Vec<T>) {
    let (h, w, b) = (x.h, x.w, x.b);
    let pad = (k / 2) as isize;
    let n = (b1 - b0) * h * w;
    col.clear();
    col.resize(x.c * k * k * n, T::ZERO);
    for c in 0..x.c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                let dx = kx as isize - pad;
                let lo = (-dx).max(0) as usize;
                let hi = (w as isize - dx).min(w as isize) as usize;
                for bb in b0..b1 {
                    let plane = &x.data[(c * b + bb) * h * w..(c * b + bb + 1) * h * w];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        let out = &mut dst[((bb - b0) * h + y) * w..((bb - b0) * h + y + 1) * w];
                        out[lo..hi].copy_from_slice(&src[(lo as isize + dx) as usize..(hi as isize + dx) as usize]);
                    }
                }
            }
        }
    }
}

/// Accumulate the im2col gradient of samples `b0..b1` into `out` (`[C, B, H, W]`).
#[allow(clippy::too_many_arguments)]
fn col2im<T: Float>(dcol: &[T], out: &mut [T], c: usize, b: usize, h: usize, w: usize, k: usize, b0: usize, b1: usize) {
    let pad = (k / 2) as isize;
    let n = (b1 - b0) * h * w;
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &dcol[row * n..(row + 1) * n];
                let dx = kx as isize - pad;
                let lo = (-dx).max(0) as usize;
                let hi = (w as isize - dx).min(w as isize) as usize;
                for bb in b0..b1 {
                    let plane = &mut out[(ch * b + bb) * h * w..(ch * b + bb + 1) * h * w];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let s_row = &src[((bb - b0) * h + y) * w..((bb - b0) * h + y + 1) * w];
                        let d_row = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                        for z in lo..hi {
                            d_row[(z as isize + dx) as usize] += s_row[z];
                        }
                    }
                }
            }
        }
    }
}

/// `[C, B, H, W]` → `[C·H·W, B]` with feature index `(c, y, x)`.
fn flatten<T: Float>(x: &Act<T>) -> Vec<T> {
    let plane = x.h * x.w;
    if plane == 1 {
        return x.data.clone();
    }
    let f = x.c * plane;
    let mut out = vec![T::ZERO; f * x.b];
    for c in 0..x.c {
        for b in 0..x.b {
            for p in 0..plane {
                out[(c * plane + p) * x.b + b] = x.data[(c * x.b + b) * plane + p];
            }
        }
    }
    out
}

fn unflatten<T: Float>(flat: &[T], c: usize, b: usize, h: usize, w: usize) -> Act<T> {
    let plane = h * w;
    let data = if plane == 1 {
        flat.to_vec()
    } else {
        let mut data = vec![T::ZERO; flat.len()];
        for ch in 0..c {
            for bb in 0..b {
                for p in 0..plane {
                    data[(ch * b + bb) * plane + p] = flat[(ch * plane + p) * b + bb];
                }
            }
        }
        data
    };
    Act { c, b, h, w, data }
}

/// `|a - b| / max(|a| + |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

/// Largest [`relative_error`] between analytic and central-difference
/// gradients (step `eps`), over every parameter and every input entry.
pub fn max_gradient_error(net: &mut Network<f64>, input: &[f64], batch: usize, labels: &[usize], eps: f64) -> Result<f64> {
    let (_, grads) = net.loss_and_gradients(input, batch, labels)?;
    let mut worst: f64 = 0.0;
    for l in 0..net.layer_count() {
        for t in 0..net.param_tensor_count(l) {
            for k in 0..net.param(l, t).len() {
                let orig = net.param(l, t)[k];
                net.param_mut(l, t)[k] = orig + eps;
                let up = net.loss(input, batch, labels, Mode::Train)?;
                net.param_mut(l, t)[k] = orig - eps;
                let down = net.loss(input, batch, labels, Mode::Train)?;
                net.param_mut(l, t)[k] = orig;
                worst = worst.max(relative_error(grads.params[l][t][k], (up - down) / (2.0 * eps)));
            }
        }
    }
    let (_, dx) = net.loss_and_input_gradient(input, batch, labels)?;
    let mut xp = input.to_vec();
    for k in 0..input.len() {
        xp[k] = input[k] + eps;
        let up = net.loss(&xp, batch, labels, Mode::Train)?;
        xp[k] = input[k] - eps;
        let down = net.loss(&xp, batch, labels, Mode::Train)?;
        xp[k] = input[k];
        worst = worst.max(relative_error(dx[k], (up - down) / (2.0 * eps)));
    }
    Ok(worst)
}

/// Move batchnorm scales and shifts off their initial values so that
/// gradient checks exercise them.
pub fn perturb_batchnorm<T: Float>(net: &mut Network<T>) {
    for l in 0..net.layer_count() {
        if let LayerSpec::BatchNorm { .. } = net.layers[l].spec {
            for (k, g) in net.param_mut(l, 0).iter_mut().enumerate() {
                *g = T::from_f64(0.5 + 0.25 * k as f64);
            }
            for (k, b) in net.param_mut(l, 1).iter_mut().enumerate() {
                *b = T::from_f64(0.1 * k as f64 - 0.2);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn gradient_check(input: [usize; 3], specs: Vec<LayerSpec>, batch: usize, seed: u64) -> f64 {
        let mut net = Network::<f64>::new(input, specs, seed).unwrap();
        perturb_batchnorm(&mut net);
        let x = random_input(batch * net.input_len(), seed + 1);
        let labels: Vec<usize> = (0..batch).map(|b| b % 2).collect();
        max_gradient_error(&mut net, &x, batch, &labels, 1e-5).unwrap()
    }

    fn conv(i: usize, o: usize) -> LayerSpec {
        LayerSpec::Conv {
            in_channels: i,
            out_channels: o,
            kernel: 3,
        }
    }

    fn dense(i: usize, o: usize) -> LayerSpec {
        LayerSpec::Dense { inputs: i, outputs: o }
    }

    #[test]
    fn gradient_check_dense_and_softmax() {
        let e = gradient_check([4, 1, 1], vec![dense(4, 2), LayerSpec::Softmax], 3, 1);
        assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn gradient_check_conv() {
        let e = gradient_check([2, 5, 5], vec![conv(2, 3), dense(75, 2), LayerSpec::Softmax], 2, 2);
        assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn gradient_check_batchnorm() {
        let specs = vec![
            LayerSpec::BatchNorm { channels: 2 },
            dense(18, 2),
            LayerSpec::Softmax,
        ];
        let e = gradient_check([2, 3, 3], specs, 4, 3);
        assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn gradient_check_relu() {
        let specs = vec![dense(8, 6), LayerSpec::Relu, dense(6, 2), LayerSpec::Softmax];
        let e = gradient_check([8, 1, 1], specs, 3, 4);
        assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn gradient_check_maxpool() {
        let specs = vec![conv(2, 2), LayerSpec::MaxPool2, dense(8, 2), LayerSpec::Softmax];
        let e = gradient_check([2, 5, 5], specs, 2, 5);
        assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn gradient_check_reduced_full_architecture() {
        let e = gradient_check([3, 21, 21], reduced_architecture(3, [4, 4, 6, 6], 8), 3, 6);
        assert!(e < 1e-4, "{e}");
    }

    #[test]
    fn full_architecture_shapes() {
        let net = Network::<f32>::new([49, 21, 21], densee_architecture(49), 0).unwrap();
        let shapes: Vec<[usize; 3]> = net.layers.iter().map(|l| l.output).collect();
        assert!(shapes.contains(&[32, 10, 10]));
        assert!(shapes.contains(&[32, 5, 5]));
        assert!(shapes.contains(&[64, 2, 2]));
        assert!(shapes.contains(&[64, 1, 1]));
        assert_eq!(net.output_len(), 2);
        assert!(Network::<f32>::new([49, 21, 21], densee_architecture(48), 0).is_err());
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let mut net = Network::<f64>::new([3, 21, 21], reduced_architecture(3, [4, 4, 4, 4], 8), 0).unwrap();
        for l in 0..net.layer_count() {
            for t in 0..net.param_tensor_count(l) {
                if !matches!(net.layers[l].spec, LayerSpec::BatchNorm { .. }) {
                    net.param_mut(l, t).fill(0.0);
                }
            }
        }
        let out = net.forward(&vec![0.0; 2 * 3 * 441], 2, Mode::Inference).unwrap();
        assert_eq!(out, vec![0.5; 4]);
        let loss = net.loss(&vec![0.0; 2 * 3 * 441], 2, &[0, 1], Mode::Inference).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn identity_kernel_copies_channel() {
        let mut net = Network::<f64>::new([2, 4, 4], vec![conv(2, 1)], 0).unwrap();
        let w = net.param_mut(0, 0);
        w.fill(0.0);
        w[9 + 4] = 1.0; // channel 1, kernel center
        net.param_mut(0, 1).fill(0.0);
        let x = random_input(32, 9);
        let out = net.forward(&x, 1, Mode::Inference).unwrap();
        assert_eq!(out, x[16..].to_vec());
    }

    #[test]
    fn maxpool_picks_block_maximum() {
        let net = Network::<f64>::new([1, 2, 2], vec![LayerSpec::MaxPool2], 0).unwrap();
        assert_eq!(net.forward(&[1.0, 2.0, 3.0, 4.0], 1, Mode::Train).unwrap(), vec![4.0]);
        let odd = Network::<f64>::new([1, 5, 5], vec![LayerSpec::MaxPool2], 0).unwrap();
        let x: Vec<f64> = (0..25).map(|v| v as f64).collect();
        assert_eq!(odd.forward(&x, 1, Mode::Train).unwrap(), vec![6.0, 8.0, 16.0, 18.0]);
    }

    #[test]
    fn confident_correct_prediction_has_tiny_loss() {
        let mut net = Network::<f64>::new([1, 1, 1], vec![dense(1, 2), LayerSpec::Softmax], 0).unwrap();
        net.param_mut(0, 0).copy_from_slice(&[10.0, -10.0]);
        net.param_mut(0, 1).fill(0.0);
        assert!(net.loss(&[1.0], 1, &[0], Mode::Train).unwrap() <= 1e-6);
    }

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts() {
        let mut net = Network::<f64>::new([5, 1, 1], vec![LayerSpec::Softmax], 0).unwrap();
        let x = random_input(20, 3).iter().map(|v| 30.0 * v).collect::<Vec<_>>();
        let p = net.forward(&x, 4, Mode::Train).unwrap();
        for row in p.chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let shifted: Vec<f64> = x.iter().map(|v| v + 123.0).collect();
        let q = net.forward(&shifted, 4, Mode::Train).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
        net.layers.clear();
        assert!(Network::<f64>::new([5, 1, 1], vec![LayerSpec::Softmax, LayerSpec::Relu], 0).is_err());
    }

    #[test]
    fn quadratic_toy_problem_converges() {
        let mut net = Network::<f64>::new([1, 1, 1], vec![dense(1, 1)], 0).unwrap();
        net.param_mut(0, 0)[0] = 0.0;
        net.param_mut(0, 1)[0] = 0.0;
        let (x, y) = (1.5, 2.0);
        let loss = |w: f64| 0.5 * (w * x - y) * (w * x - y);
        let mut prev = loss(0.0);
        for _ in 0..100 {
            let w = net.param(0, 0)[0];
            let mut g = Gradients::zeros_like(&net);
            g.params[0][0][0] = (w * x - y) * x;
            net.sgd_step(&g, 0.1).unwrap();
            let now = loss(net.param(0, 0)[0]);
            assert!(now <= prev);
            prev = now;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn sgd_step_contracts() {
        let specs = reduced_architecture(2, [2, 2, 2, 2], 4);
        let mut net = Network::<f64>::new([2, 21, 21], specs, 1).unwrap();
        let x = random_input(2 * 2 * 441, 2);
        let (_, grads) = net.loss_and_gradients(&x, 2, &[0, 1]).unwrap();

        let mut frozen = net.clone();
        let mut no_stats = grads.clone();
        no_stats.batch_stats.iter_mut().for_each(|s| *s = None);
        frozen.sgd_step(&no_stats, 0.0).unwrap();
        assert_eq!(frozen, net);

        let mut bad = grads.clone();
        bad.params[0][0][3] = f64::NAN;
        let before = net.clone();
        assert!(matches!(net.sgd_step(&bad, 0.1), Err(Error::NonFinite(_))));
        assert_eq!(net, before);

        net.sgd_step(&grads, 0.1).unwrap();
        let (mean, var) = grads.batch_stats[1].as_ref().unwrap();
        let (rm, rv) = net.running_stats(1).unwrap();
        for c in 0..2 {
            assert!((rm[c] - 0.1 * mean[c]).abs() < 1e-12);
            assert!((rv[c] - (0.9 + 0.1 * var[c])).abs() < 1e-12);
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let run = || {
            let specs = reduced_architecture(2, [4, 4, 4, 4], 8);
            let mut net = Network::<f32>::new([2, 21, 21], specs, 7).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let batch = 8;
            // Class 1 patches carry a bright vertical bar.
            let make = |rng: &mut ChaCha8Rng| {
                let mut x = vec![0f32; batch * 2 * 441];
                let labels: Vec<usize> = (0..batch).map(|b| b % 2).collect();
                for (b, &y) in labels.iter().enumerate() {
                    for k in 0..2 * 441 {
                        let col = k % 21;
                        let bar = if y == 1 && (9..12).contains(&col) { 1.0 } else { 0.0 };
                        x[b * 2 * 441 + k] = bar + rng.gen_range(-0.3..0.3);
                    }
                }
                (x, labels)
            };
            let (x0, l0) = make(&mut rng);
            let start = net.loss(&x0, batch, &l0, Mode::Train).unwrap();
            for _ in 0..60 {
                let (x, labels) = make(&mut rng);
                let (_, g) = net.loss_and_gradients(&x, batch, &labels).unwrap();
                net.sgd_step(&g, 0.05).unwrap();
            }
            let end = net.loss(&x0, batch, &l0, Mode::Inference).unwrap();
            (net, start, end)
        };
        let (a, start, end) = run();
        let (b, _, _) = run();
        assert_eq!(a, b);
        assert!(end < 0.5 * start, "{start} -> {end}");
    }

    #[test]
    fn export_import_round_trip() {
        let specs = reduced_architecture(2, [2, 2, 2, 2], 4);
        let a = Network::<f32>::new([2, 21, 21], specs.clone(), 1).unwrap();
        let mut b = Network::<f32>::new([2, 21, 21], specs, 2).unwrap();
        assert_ne!(a, b);
        b.import_tensors(a.export_tensors()).unwrap();
        assert_eq!(a, b);
        let mut short = a.export_tensors();
        short.pop();
        assert!(b.import_tensors(short).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = Network::<f64>::new([4, 1, 1], vec![dense(4, 2), LayerSpec::Softmax], 0).unwrap();
        assert!(net.forward(&[0.0; 3], 1, Mode::Train).is_err());
        assert!(net.forward(&[0.0, f64::NAN, 0.0, 0.0], 1, Mode::Train).is_err());
        assert!(net.loss_and_gradients(&[0.0; 4], 1, &[2]).is_err());
    }
}
