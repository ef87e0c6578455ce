//! U-Net with an optional bias-free mode.
//!
//! Topology for `depth = D` and `base_channels = b` (channels `c_l = b·2^l`):
//! two convolutions per encoder level, 2×2 max pooling between levels, two
//! convolutions at the bottleneck (level D), and per decoder level a
//! nearest-neighbour upsampling followed by a convolution that halves the
//! channels, a skip concatenation, and two more convolutions. A 1×1
//! convolution produces the single-channel linear output; with `residual`
//! the input is added to it. All hidden convolutions use ReLU and zero
//! "same" padding.
//!
//! Without biases every layer is positively homogeneous, so
//! `f(a·x) = a·f(x)` for `a > 0`.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::layers::{
    concat, conv_backward, conv_forward, maxpool2, maxpool2_backward, relu_backward, relu_inplace, split,
    upsample2, upsample2_backward, Conv2d, ConvGrad,
};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalActivation {
    #[default]
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    /// Number of 2× downsamplings.
    pub depth: usize,
    pub base_channels: usize,
    pub kernel_size: usize,
    /// Drop every additive offset parameter.
    pub bias_free: bool,
    /// Add the input to the network output.
    pub residual: bool,
    pub final_activation: FinalActivation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelSpec {
    /// Full-size model: depth 5, 32 initial channels.
    pub fn paper() -> Self {
        Self {
            depth: 5,
            base_channels: 32,
            kernel_size: 3,
            bias_free: true,
            residual: true,
            final_activation: FinalActivation::Linear,
        }
    }

    /// CPU-sized model: depth 3, 16 initial channels.
    pub fn desk() -> Self {
        Self {
            depth: 3,
            base_channels: 16,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.base_channels < 1 {
            return Err(NetError::InvalidSpec(format!(
                "depth and base_channels must be >= 1, got {} and {}",
                self.depth, self.base_channels
            )));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(NetError::InvalidSpec(format!("kernel_size must be odd, got {}", self.kernel_size)));
        }
        if self.depth > 12 {
            return Err(NetError::InvalidSpec(format!("depth {} is unreasonably large", self.depth)));
        }
        Ok(())
    }

    /// Spatial sides must be multiples of this (2^depth).
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// `(in, out, kernel)` of every convolution in parameter order: encoder
    /// levels, bottleneck, decoder levels from deep to shallow (upsampling
    /// conv, then the two block convs), output head.
    pub fn conv_shapes(&self) -> Vec<(usize, usize, usize)> {
        let k = self.kernel_size;
        let d = self.depth;
        let mut v = Vec::new();
        for l in 0..d {
            let cin = if l == 0 { 1 } else { self.channels(l - 1) };
            v.push((cin, self.channels(l), k));
            v.push((self.channels(l), self.channels(l), k));
        }
        v.push((self.channels(d - 1), self.channels(d), k));
        v.push((self.channels(d), self.channels(d), k));
        for l in (0..d).rev() {
            v.push((self.channels(l + 1), self.channels(l), k));
            v.push((2 * self.channels(l), self.channels(l), k));
            v.push((self.channels(l), self.channels(l), k));
        }
        v.push((self.channels(0), 1, 1));
        v
    }

    /// Closed-form parameter count.
    ///
    /// Summing `in·out` over the k×k convolutions gives
    /// `b + b² + (11/3)·b²·(4^D − 1)`; the 1×1 head adds `b` weights. With
    /// biases, each convolution adds one offset per output channel:
    /// `5·b·(2^D − 1) + 2·b·2^D + 1`.
    pub fn analytic_param_count(&self) -> usize {
        let b = self.base_channels;
        let d = self.depth as u32;
        let k2 = self.kernel_size * self.kernel_size;
        let pairs = b + b * b + 11 * b * b * (4usize.pow(d) - 1) / 3;
        let weights = k2 * pairs + b;
        let biases = if self.bias_free {
            0
        } else {
            5 * b * ((1 << d) - 1) + 2 * b * (1 << d) + 1
        };
        weights + biases
    }

    /// Radius (in input pixels) of the region any output pixel depends on.
    ///
    /// Each k×k conv at level `l` adds `(k−1)/2·2^l`; each pooling and each
    /// upsampling step at level `l` adds at most `2^l`. Per level that is
    /// two encoder convs, one pooling, one upsampling, one upsampling conv,
    /// and two decoder convs, plus two bottleneck convs.
    pub fn receptive_radius(&self) -> usize {
        let r = self.kernel_size / 2;
        let per_level: usize = (0..self.depth).map(|l| (5 * r + 2) << l).sum();
        per_level + ((2 * r) << self.depth)
    }
}

/// Per-forward record needed for backpropagation.
pub struct ForwardCache<F> {
    conv_inputs: Vec<Tensor<F>>,
    /// Post-activation outputs of hidden convolutions (head excluded).
    conv_outputs: Vec<Tensor<F>>,
    pool_args: Vec<(Vec<u32>, [usize; 4])>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Unet<F> {
    spec: ModelSpec,
    convs: Vec<Conv2d<F>>,
}

/// Gradients of every convolution, in parameter order.
pub type Gradients<F> = Vec<ConvGrad<F>>;

impl<F: Real> Unet<F> {
    /// Builds a model with He-normal weights (`σ = √(2/fan_in)`) and zero
    /// biases when biases exist.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let convs = spec
            .conv_shapes()
            .into_iter()
            .map(|(cin, cout, k)| {
                let fan_in = (cin * k * k) as f64;
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
                Conv2d {
                    in_channels: cin,
                    out_channels: cout,
                    kernel: k,
                    weight: (0..cout * cin * k * k).map(|_| F::of(normal.sample(&mut rng))).collect(),
                    bias: (!spec.bias_free).then(|| vec![F::zero(); cout]),
                }
            })
            .collect();
        Ok(Self { spec, convs })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn convs(&self) -> &[Conv2d<F>] {
        &self.convs
    }

    /// Total trainable scalars.
    pub fn param_count(&self) -> usize {
        self.convs
            .iter()
            .map(|c| c.weight.len() + c.bias.as_ref().map_or(0, Vec::len))
            .sum()
    }

    /// Trainable additive offsets (biases).
    pub fn offset_param_count(&self) -> usize {
        self.convs.iter().map(|c| c.bias.as_ref().map_or(0, Vec::len)).sum()
    }

    /// Parameters flattened as weights then bias of each conv in order.
    pub fn flat_params(&self) -> Vec<F> {
        let mut v = Vec::with_capacity(self.param_count());
        for c in &self.convs {
            v.extend_from_slice(&c.weight);
            if let Some(b) = &c.bias {
                v.extend_from_slice(b);
            }
        }
        v
    }

    pub fn set_flat_params(&mut self, params: &[F]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(NetError::InvalidSpec(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut off = 0;
        for c in &mut self.convs {
            let n = c.weight.len();
            c.weight.copy_from_slice(&params[off..off + n]);
            off += n;
            if let Some(b) = &mut c.bias {
                let n = b.len();
                b.copy_from_slice(&params[off..off + n]);
                off += n;
            }
        }
        Ok(())
    }

    /// Visits every (parameter, gradient) pair in flat order.
    pub fn for_each_param_mut(&mut self, grads: &Gradients<F>, mut f: impl FnMut(usize, &mut F, F)) {
        let mut idx = 0;
        for (c, g) in self.convs.iter_mut().zip(grads) {
            for (p, &d) in c.weight.iter_mut().zip(&g.weight) {
                f(idx, p, d);
                idx += 1;
            }
            if let (Some(b), Some(gb)) = (&mut c.bias, &g.bias) {
                for (p, &d) in b.iter_mut().zip(gb) {
                    f(idx, p, d);
                    idx += 1;
                }
            }
        }
    }

    /// Same weights in another precision.
    pub fn cast<G: Real>(&self) -> Unet<G> {
        let conv = |v: &Vec<F>| v.iter().map(|x| G::of(x.to_f64().unwrap())).collect::<Vec<G>>();
        Unet {
            spec: self.spec.clone(),
            convs: self
                .convs
                .iter()
                .map(|c| Conv2d {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel: c.kernel,
                    weight: conv(&c.weight),
                    bias: c.bias.as_ref().map(conv),
                })
                .collect(),
        }
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = self.spec.size_multiple();
        if h == 0 || w == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
            return Err(NetError::Divisibility { got: (h, w), multiple: m });
        }
        Ok(())
    }

    fn up_index(&self, level: usize) -> usize {
        2 * self.spec.depth + 2 + 3 * (self.spec.depth - 1 - level)
    }

    /// Runs the network, recording what backpropagation needs.
    pub fn forward_train(&self, x: &Tensor<F>) -> Result<(Tensor<F>, ForwardCache<F>)> {
        if x.c != 1 {
            return Err(NetError::InvalidSpec(format!("expected 1 input channel, got {}", x.c)));
        }
        self.check_input(x.h, x.w)?;
        let d = self.spec.depth;
        let n_convs = self.convs.len();
        let mut cache = ForwardCache {
            conv_inputs: Vec::with_capacity(n_convs),
            conv_outputs: Vec::with_capacity(n_convs - 1),
            pool_args: Vec::with_capacity(d),
        };

        let conv_relu = |idx: usize, input: Tensor<F>, cache: &mut ForwardCache<F>| -> Tensor<F> {
            debug_assert_eq!(cache.conv_inputs.len(), idx);
            let mut y = conv_forward(&self.convs[idx], &input);
            relu_inplace(&mut y);
            cache.conv_inputs.push(input);
            cache.conv_outputs.push(y.clone());
            y
        };

        let mut h = x.clone();
        let mut skips = Vec::with_capacity(d);
        for l in 0..d {
            let a = conv_relu(2 * l, h, &mut cache);
            let b = conv_relu(2 * l + 1, a, &mut cache);
            let (pooled, arg) = maxpool2(&b);
            cache.pool_args.push((arg, b.shape()));
            skips.push(b);
            h = pooled;
        }
        let a = conv_relu(2 * d, h, &mut cache);
        h = conv_relu(2 * d + 1, a, &mut cache);
        for l in (0..d).rev() {
            let idx = self.up_index(l);
            let up = conv_relu(idx, upsample2(&h), &mut cache);
            let cat = concat(&skips[l], &up);
            let a = conv_relu(idx + 1, cat, &mut cache);
            h = conv_relu(idx + 2, a, &mut cache);
        }
        let head = n_convs - 1;
        let mut out = conv_forward(&self.convs[head], &h);
        cache.conv_inputs.push(h);
        if self.spec.residual {
            out.data.iter_mut().zip(&x.data).for_each(|(o, &v)| *o = *o + v);
        }
        Ok((out, cache))
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.forward_train(x)?.0)
    }

    /// Parameter gradients for an output gradient `dout`.
    pub fn backward(&self, cache: &ForwardCache<F>, dout: &Tensor<F>) -> Gradients<F> {
        let d = self.spec.depth;
        let mut grads: Gradients<F> = self.convs.iter().map(Conv2d::zero_grad).collect();
        let head = self.convs.len() - 1;

        let back = |idx: usize, mut dy: Tensor<F>, need_dx: bool, grads: &mut Gradients<F>| {
            relu_backward(&mut dy, &cache.conv_outputs[idx]);
            conv_backward(&self.convs[idx], &cache.conv_inputs[idx], &dy, &mut grads[idx], need_dx)
        };

        let mut dh = conv_backward(&self.convs[head], &cache.conv_inputs[head], dout, &mut grads[head], true)
            .expect("input gradient requested");
        let mut dskips: Vec<Option<Tensor<F>>> = vec![None; d];
        for l in 0..d {
            let idx = self.up_index(l);
            dh = back(idx + 2, dh, true, &mut grads).unwrap();
            let dcat = back(idx + 1, dh, true, &mut grads).unwrap();
            let (dskip, dup) = split(&dcat, self.spec.channels(l));
            dskips[l] = Some(dskip);
            let du = back(idx, dup, true, &mut grads).unwrap();
            dh = upsample2_backward(&du);
        }
        dh = back(2 * d + 1, dh, true, &mut grads).unwrap();
        dh = back(2 * d, dh, true, &mut grads).unwrap();
        for l in (0..d).rev() {
            let (arg, shape) = &cache.pool_args[l];
            let mut db = maxpool2_backward(&dh, arg, *shape);
            let skip = dskips[l].take().unwrap();
            db.data.iter_mut().zip(&skip.data).for_each(|(a, &b)| *a = *a + b);
            let da = back(2 * l + 1, db, true, &mut grads).unwrap();
            match back(2 * l, da, l > 0, &mut grads) {
                Some(next) => dh = next,
                None => break,
            }
        }
        grads
    }

    /// Mean absolute error and its parameter gradients.
    pub fn mae_loss_and_grad(&self, x: &Tensor<F>, target: &Tensor<F>) -> Result<(f64, Gradients<F>)> {
        let (y, cache) = self.forward_train(x)?;
        let (loss, dout) = mae_loss(&y, target);
        Ok((loss, self.backward(&cache, &dout)))
    }

    /// Every piecewise-linear switch taken by a forward pass plus the sign
    /// of each residual against `target`: ReLU on/off states, max-pool
    /// winners, and `sign(pred − target)`. Identical signatures mean the
    /// loss is smooth between the two parameter settings.
    pub fn kink_signature(&self, x: &Tensor<F>, target: &Tensor<F>) -> Result<Vec<u32>> {
        let (y, cache) = self.forward_train(x)?;
        let mut sig = Vec::new();
        for out in &cache.conv_outputs {
            sig.extend(out.data.iter().map(|&v| (v > F::zero()) as u32));
        }
        for (arg, _) in &cache.pool_args {
            sig.extend_from_slice(arg);
        }
        sig.extend(y.data.iter().zip(&target.data).map(|(&p, &t)| {
            if p > t {
                2
            } else if p < t {
                0
            } else {
                1
            }
        }));
        Ok(sig)
    }
}

/// MAE over all elements and its gradient w.r.t. the prediction
/// (`sign(pred − target)/count`, with sign(0) = 0).
pub fn mae_loss<F: Real>(pred: &Tensor<F>, target: &Tensor<F>) -> (f64, Tensor<F>) {
    assert_eq!(pred.shape(), target.shape(), "loss shapes");
    let count = pred.data.len() as f64;
    let scale = F::of(1.0 / count);
    let mut grad = Tensor::zeros(pred.n, pred.c, pred.h, pred.w);
    let mut total = 0.0f64;
    for ((g, &p), &t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let r = p - t;
        total += r.abs().to_f64().unwrap();
        *g = if r > F::zero() {
            scale
        } else if r < F::zero() {
            -scale
        } else {
            F::zero()
        };
    }
    (total / count, grad)
}
