//! Minimal dense/conv neural-network layers with hand-written backprop.
//!
//! Layers are generic over the scalar type: models run in `f32`, while
//! gradient tests drive the identical code in `f64` against central finite
//! differences. Weight initialization always draws in `f64` from a seeded
//! ChaCha stream (He-scaled normals, zero biases), so the initial weights
//! are bit-identical across scalar types.
//!
//! Each layer owns its parameters, gradient accumulators, and SGD momentum
//! buffers; `backward*` accumulates into the gradients until `zero_grad`.

use ndarray::{Array1, Array2, Array3, Axis, NdFloat};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub trait Scalar: NdFloat + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Score used as the additive mask surrogate for -inf.
pub const MASK_LOGIT: f64 = -1e9;

fn he_draws<F: Scalar>(rng: &mut ChaCha8Rng, n: usize, fan_in: usize, scale: f64) -> Vec<F> {
    let std = (2.0 / fan_in as f64).sqrt() * scale;
    let normal = Normal::new(0.0, std).expect("std is finite");
    (0..n).map(|_| F::from_f64(normal.sample(rng))).collect()
}

#[derive(Debug, Clone)]
pub struct Linear<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
    pub gw: Array2<F>,
    pub gb: Array1<F>,
    vw: Array2<F>,
    vb: Array1<F>,
}

impl<F: Scalar> Linear<F> {
    /// `scale` multiplies the He std; near-zero output layers use 0.01.
    pub fn new(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, scale: f64) -> Self {
        let w = Array2::from_shape_vec(
            (fan_out, fan_in),
            he_draws(rng, fan_out * fan_in, fan_in, scale),
        )
        .expect("shape matches draw count");
        Linear {
            gw: Array2::zeros(w.dim()),
            vw: Array2::zeros(w.dim()),
            w,
            b: Array1::zeros(fan_out),
            gb: Array1::zeros(fan_out),
            vb: Array1::zeros(fan_out),
        }
    }

    pub fn forward(&self, x: &Array1<F>) -> Array1<F> {
        self.w.dot(x) + &self.b
    }

    /// Rows of `x` are independent samples.
    pub fn forward_batch(&self, x: &Array2<F>) -> Array2<F> {
        x.dot(&self.w.t()) + &self.b
    }

    pub fn backward(&mut self, x: &Array1<F>, dy: &Array1<F>) -> Array1<F> {
        self.gw += &dy
            .view()
            .insert_axis(Axis(1))
            .dot(&x.view().insert_axis(Axis(0)));
        self.gb += dy;
        self.w.t().dot(dy)
    }

    pub fn backward_batch(&mut self, x: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
        self.gw += &dy.t().dot(x);
        self.gb += &dy.sum_axis(Axis(0));
        dy.dot(&self.w)
    }

    pub fn zero_grad(&mut self) {
        self.gw.fill(F::zero());
        self.gb.fill(F::zero());
    }

    pub fn sgd_step(&mut self, lr: F, momentum: F) {
        self.vw
            .zip_mut_with(&self.gw, |v, &g| *v = momentum * *v - lr * g);
        self.vb
            .zip_mut_with(&self.gb, |v, &g| *v = momentum * *v - lr * g);
        self.w += &self.vw;
        self.b += &self.vb;
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn write_weights(&self, out: &mut Vec<f32>) {
        out.extend(self.w.iter().map(|&v| v.to_f64() as f32));
        out.extend(self.b.iter().map(|&v| v.to_f64() as f32));
    }

    pub fn read_weights(&mut self, src: &mut impl Iterator<Item = f32>) -> Option<()> {
        for slot in self.w.iter_mut().chain(self.b.iter_mut()) {
            *slot = F::from_f64(src.next()? as f64);
        }
        Some(())
    }
}

/// Valid-padding 2D convolution over CHW tensors, implemented as im2col +
/// GEMM. Weights are stored pre-flattened as (out_c, in_c * k * k).
#[derive(Debug, Clone)]
pub struct Conv2d<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
    pub gw: Array2<F>,
    pub gb: Array1<F>,
    vw: Array2<F>,
    vb: Array1<F>,
    pub in_c: usize,
    pub k: usize,
    pub stride: usize,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(
        rng: &mut ChaCha8Rng,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        scale: f64,
    ) -> Self {
        let fan_in = in_c * k * k;
        let w = Array2::from_shape_vec(
            (out_c, fan_in),
            he_draws(rng, out_c * fan_in, fan_in, scale),
        )
        .expect("shape matches draw count");
        Conv2d {
            gw: Array2::zeros(w.dim()),
            vw: Array2::zeros(w.dim()),
            w,
            b: Array1::zeros(out_c),
            gb: Array1::zeros(out_c),
            vb: Array1::zeros(out_c),
            in_c,
            k,
            stride,
        }
    }

    pub fn out_size(&self, input: usize) -> usize {
        (input - self.k) / self.stride + 1
    }

    fn im2col(&self, x: &Array3<F>) -> Array2<F> {
        let (c, h, w) = x.dim();
        debug_assert_eq!(c, self.in_c);
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let mut patches = Array2::zeros((c * self.k * self.k, oh * ow));
        for ch in 0..c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ch * self.k + ky) * self.k + kx;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            patches[(row, oy * ow + ox)] =
                                x[(ch, oy * self.stride + ky, ox * self.stride + kx)];
                        }
                    }
                }
            }
        }
        patches
    }

    /// Returns the output tensor and the im2col patch matrix for backward.
    pub fn forward(&self, x: &Array3<F>) -> (Array3<F>, Array2<F>) {
        let (_, h, w) = x.dim();
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let patches = self.im2col(x);
        let mut out_mat = self.w.dot(&patches);
        for (mut row, &bias) in out_mat.axis_iter_mut(Axis(0)).zip(self.b.iter()) {
            row.mapv_inplace(|v| v + bias);
        }
        let out_c = self.w.dim().0;
        let out = out_mat
            .into_shape_with_order((out_c, oh, ow))
            .expect("conv output shape");
        (out, patches)
    }

    pub fn backward(
        &mut self,
        patches: &Array2<F>,
        in_hw: (usize, usize),
        dy: &Array3<F>,
    ) -> Array3<F> {
        let (out_c, oh, ow) = dy.dim();
        let dy_mat = dy
            .view()
            .into_shape_with_order((out_c, oh * ow))
            .expect("contiguous dy");
        self.gw += &dy_mat.dot(&patches.t());
        self.gb += &dy_mat.sum_axis(Axis(1));
        let dpatches = self.w.t().dot(&dy_mat);

        let (h, w) = in_hw;
        let mut dx = Array3::zeros((self.in_c, h, w));
        for ch in 0..self.in_c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ch * self.k + ky) * self.k + kx;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            dx[(ch, oy * self.stride + ky, ox * self.stride + kx)] +=
                                dpatches[(row, oy * ow + ox)];
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn zero_grad(&mut self) {
        self.gw.fill(F::zero());
        self.gb.fill(F::zero());
    }

    pub fn sgd_step(&mut self, lr: F, momentum: F) {
        self.vw
            .zip_mut_with(&self.gw, |v, &g| *v = momentum * *v - lr * g);
        self.vb
            .zip_mut_with(&self.gb, |v, &g| *v = momentum * *v - lr * g);
        self.w += &self.vw;
        self.b += &self.vb;
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn write_weights(&self, out: &mut Vec<f32>) {
        out.extend(self.w.iter().map(|&v| v.to_f64() as f32));
        out.extend(self.b.iter().map(|&v| v.to_f64() as f32));
    }

    pub fn read_weights(&mut self, src: &mut impl Iterator<Item = f32>) -> Option<()> {
        for slot in self.w.iter_mut().chain(self.b.iter_mut()) {
            *slot = F::from_f64(src.next()? as f64);
        }
        Some(())
    }
}

/// ReLU applied out-of-place; the output doubles as the backward mask.
pub fn relu<D: ndarray::Dimension, F: Scalar>(x: &ndarray::Array<F, D>) -> ndarray::Array<F, D> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

/// dL/dx given the forward output `y` and upstream `dy`.
pub fn relu_backward<D: ndarray::Dimension, F: Scalar>(
    y: &ndarray::Array<F, D>,
    dy: &ndarray::Array<F, D>,
) -> ndarray::Array<F, D> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &out| {
        if out <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

/// Numerically stable softmax.
pub fn softmax<F: Scalar>(logits: &Array1<F>) -> Array1<F> {
    let max = logits
        .iter()
        .cloned()
        .fold(F::from_f64(f64::NEG_INFINITY), F::max);
    let exps = logits.mapv(|v| (v - max).exp());
    // Summing in value order keeps the result independent of entry order.
    let mut terms: Vec<F> = exps.iter().cloned().collect();
    terms.sort_by(|a, b| {
        a.partial_cmp(b)
            .expect("exp of a shifted logit is never NaN")
    });
    let sum = terms.into_iter().fold(F::zero(), |acc, t| acc + t);
    exps.mapv(|v| v / sum)
}

/// Softmax with an additive large-negative surrogate on masked entries;
/// `keep[i] = false` masks candidate i.
pub fn masked_softmax<F: Scalar>(logits: &Array1<F>, keep: &[bool]) -> Array1<F> {
    debug_assert_eq!(logits.len(), keep.len());
    let mut shifted = logits.clone();
    for (v, &k) in shifted.iter_mut().zip(keep) {
        if !k {
            *v = *v + F::from_f64(MASK_LOGIT);
        }
    }
    softmax(&shifted)
}

/// d(softmax cross-entropy)/d(logits) for a one-hot target.
pub fn softmax_ce_backward<F: Scalar>(probs: &Array1<F>, target: usize) -> Array1<F> {
    let mut d = probs.clone();
    d[target] = d[target] - F::one();
    d
}

/// Normalized x/y coordinate planes appended by coordconv layers.
pub fn coord_planes<F: Scalar>(h: usize, w: usize) -> (Array2<F>, Array2<F>) {
    let norm = |i: usize, n: usize| {
        if n > 1 {
            F::from_f64(i as f64 / (n - 1) as f64)
        } else {
            F::zero()
        }
    };
    let mut xs = Array2::zeros((h, w));
    let mut ys = Array2::zeros((h, w));
    for row in 0..h {
        for col in 0..w {
            xs[(row, col)] = norm(col, w);
            ys[(row, col)] = norm(row, h);
        }
    }
    (xs, ys)
}

/// Stacks an HWC or CHW image plus coordinate planes into a CHW tensor.
pub fn with_coord_channels<F: Scalar>(image: &Array3<F>) -> Array3<F> {
    let (c, h, w) = image.dim();
    let mut out = Array3::zeros((c + 2, h, w));
    out.slice_mut(ndarray::s![..c, .., ..]).assign(image);
    let (xs, ys) = coord_planes::<F>(h, w);
    out.index_axis_mut(Axis(0), c).assign(&xs);
    out.index_axis_mut(Axis(0), c + 1).assign(&ys);
    out
}
