//! Forward and backward kernels for the few layer types the U-Net uses.
//! Convolutions are "same"-padded with zeros and lowered to GEMM via im2col.

use crate::real::Real;
use crate::tensor::Tensor;

/// Square 2D convolution with an optional additive bias per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<F> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    /// Row-major `out_channels × (in_channels·kernel²)`.
    pub weight: Vec<F>,
    pub bias: Option<Vec<F>>,
}

/// Gradients matching a [`Conv2d`]'s parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrad<F> {
    pub weight: Vec<F>,
    pub bias: Option<Vec<F>>,
}

impl<F: Real> Conv2d<F> {
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn zero_grad(&self) -> ConvGrad<F> {
        ConvGrad {
            weight: vec![F::zero(); self.weight.len()],
            bias: self.bias.as_ref().map(|b| vec![F::zero(); b.len()]),
        }
    }
}

/// Unfolds one sample (`c × h × w`) into a `(c·k²) × (h·w)` matrix.
fn im2col<F: Real>(x: &[F], c: usize, h: usize, w: usize, k: usize, col: &mut [F]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut col[((ci * k + ki) * k + kj) * hw..][..hw];
                let di = ki as isize - pad;
                let dj = kj as isize - pad;
                for i in 0..h {
                    let si = i as isize + di;
                    let out = &mut row[i * w..(i + 1) * w];
                    if si < 0 || si >= h as isize {
                        out.fill(F::zero());
                        continue;
                    }
                    let src = &plane[si as usize * w..(si as usize + 1) * w];
                    for (j, o) in out.iter_mut().enumerate() {
                        let sj = j as isize + dj;
                        *o = if sj < 0 || sj >= w as isize { F::zero() } else { src[sj as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `dx`.
fn col2im<F: Real>(col: &[F], c: usize, h: usize, w: usize, k: usize, dx: &mut [F]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = &col[((ci * k + ki) * k + kj) * hw..][..hw];
                let di = ki as isize - pad;
                let dj = kj as isize - pad;
                for i in 0..h {
                    let si = i as isize + di;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[si as usize * w..(si as usize + 1) * w];
                    for (j, &v) in row[i * w..(i + 1) * w].iter().enumerate() {
                        let sj = j as isize + dj;
                        if sj >= 0 && sj < w as isize {
                            dst[sj as usize] = dst[sj as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv_forward<F: Real>(conv: &Conv2d<F>, x: &Tensor<F>) -> Tensor<F> {
    assert_eq!(x.c, conv.in_channels, "conv input channels");
    let (h, w, k) = (x.h, x.w, conv.kernel);
    let hw = h * w;
    let kk = conv.patch_len();
    let mut out = Tensor::zeros(x.n, conv.out_channels, h, w);
    let mut col = if k == 1 { Vec::new() } else { vec![F::zero(); kk * hw] };
    for s in 0..x.n {
        let input = x.sample(s);
        let cols: &[F] = if k == 1 {
            input
        } else {
            im2col(input, x.c, h, w, k, &mut col);
            &col
        };
        let y = out.sample_mut(s);
        F::gemm(conv.out_channels, kk, hw, F::one(), &conv.weight, false, cols, false, F::zero(), y);
        if let Some(bias) = &conv.bias {
            for (co, &b) in bias.iter().enumerate() {
                y[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v = *v + b);
            }
        }
    }
    out
}

/// Accumulates parameter gradients into `grad` and returns the input
/// gradient when `need_input_grad`.
pub fn conv_backward<F: Real>(
    conv: &Conv2d<F>,
    x: &Tensor<F>,
    dy: &Tensor<F>,
    grad: &mut ConvGrad<F>,
    need_input_grad: bool,
) -> Option<Tensor<F>> {
    let (h, w, k) = (x.h, x.w, conv.kernel);
    let hw = h * w;
    let kk = conv.patch_len();
    let mut dx = need_input_grad.then(|| Tensor::zeros(x.n, x.c, h, w));
    let mut col = if k == 1 { Vec::new() } else { vec![F::zero(); kk * hw] };
    let mut dcol = if need_input_grad && k != 1 { vec![F::zero(); kk * hw] } else { Vec::new() };
    for s in 0..x.n {
        let g = dy.sample(s);
        let cols: &[F] = if k == 1 {
            x.sample(s)
        } else {
            im2col(x.sample(s), x.c, h, w, k, &mut col);
            &col
        };
        // dW += dY · colsᵀ
        F::gemm(conv.out_channels, hw, kk, F::one(), g, false, cols, true, F::one(), &mut grad.weight);
        if let Some(db) = &mut grad.bias {
            for (co, b) in db.iter_mut().enumerate() {
                *b = g[co * hw..(co + 1) * hw].iter().fold(*b, |acc, &v| acc + v);
            }
        }
        if let Some(dx) = &mut dx {
            // dcols = Wᵀ · dY
            if k == 1 {
                F::gemm(kk, conv.out_channels, hw, F::one(), &conv.weight, true, g, false, F::zero(), dx.sample_mut(s));
            } else {
                F::gemm(kk, conv.out_channels, hw, F::one(), &conv.weight, true, g, false, F::zero(), &mut dcol);
                col2im(&dcol, x.c, h, w, k, dx.sample_mut(s));
            }
        }
    }
    dx
}

pub fn relu_inplace<F: Real>(x: &mut Tensor<F>) {
    x.data.iter_mut().for_each(|v| {
        if *v < F::zero() {
            *v = F::zero()
        }
    });
}

/// Masks `dy` where the (post-activation) output was not positive.
pub fn relu_backward<F: Real>(dy: &mut Tensor<F>, out: &Tensor<F>) {
    dy.data.iter_mut().zip(&out.data).for_each(|(g, &o)| {
        if o <= F::zero() {
            *g = F::zero()
        }
    });
}

/// 2×2 max pooling; also returns the flat input index of each maximum.
pub fn maxpool2<F: Real>(x: &Tensor<F>) -> (Tensor<F>, Vec<u32>) {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.n, x.c, oh, ow);
    let mut arg = vec![0u32; out.data.len()];
    let mut o = 0;
    for s in 0..x.n {
        for c in 0..x.c {
            let base = (s * x.c + c) * x.h * x.w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * x.w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * x.w + 2 * j + dj;
                        if x.data[idx] > x.data[best] {
                            best = idx;
                        }
                    }
                    out.data[o] = x.data[best];
                    arg[o] = best as u32;
                    o += 1;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward<F: Real>(dy: &Tensor<F>, arg: &[u32], input_shape: [usize; 4]) -> Tensor<F> {
    let [n, c, h, w] = input_shape;
    let mut dx = Tensor::zeros(n, c, h, w);
    for (&g, &a) in dy.data.iter().zip(arg) {
        dx.data[a as usize] = dx.data[a as usize] + g;
    }
    dx
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let (oh, ow) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.n, x.c, oh, ow);
    for sc in 0..x.n * x.c {
        let src = &x.data[sc * x.h * x.w..(sc + 1) * x.h * x.w];
        let dst = &mut out.data[sc * oh * ow..(sc + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                dst[i * ow + j] = src[(i / 2) * x.w + j / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<F: Real>(dy: &Tensor<F>) -> Tensor<F> {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Tensor::zeros(dy.n, dy.c, h, w);
    for sc in 0..dy.n * dy.c {
        let src = &dy.data[sc * dy.h * dy.w..(sc + 1) * dy.h * dy.w];
        let dst = &mut dx.data[sc * h * w..(sc + 1) * h * w];
        for i in 0..dy.h {
            for j in 0..dy.w {
                let d = &mut dst[(i / 2) * w + j / 2];
                *d = *d + src[i * dy.w + j];
            }
        }
    }
    dx
}

/// Channel concatenation `[a, b]`.
pub fn concat<F: Real>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    assert_eq!((a.n, a.h, a.w), (b.n, b.h, b.w), "concat shapes");
    let mut out = Tensor::zeros(a.n, a.c + b.c, a.h, a.w);
    let (la, lb) = (a.sample_len(), b.sample_len());
    for s in 0..a.n {
        let dst = out.sample_mut(s);
        dst[..la].copy_from_slice(a.sample(s));
        dst[la..la + lb].copy_from_slice(b.sample(s));
    }
    out
}

/// Splits a concatenated gradient back into its `a` and `b` parts.
pub fn split<F: Real>(dy: &Tensor<F>, a_channels: usize) -> (Tensor<F>, Tensor<F>) {
    let b_channels = dy.c - a_channels;
    let mut da = Tensor::zeros(dy.n, a_channels, dy.h, dy.w);
    let mut db = Tensor::zeros(dy.n, b_channels, dy.h, dy.w);
    let la = da.sample_len();
    for s in 0..dy.n {
        let src = dy.sample(s);
        da.sample_mut(s).copy_from_slice(&src[..la]);
        db.sample_mut(s).copy_from_slice(&src[la..]);
    }
    (da, db)
}
