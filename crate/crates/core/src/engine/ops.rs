//! Batched layer kernels with their reverse-mode adjoints.
//!
//! Tensors are dense NCHW buffers. Convolution lowers each image to a
//! column matrix (`C·kh·kw × OH·OW`) and multiplies by the kernel matrix
//! (`K × C·kh·kw`).

use super::scalar::Scalar;
use crate::netspec::Spatial;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    /// `[n, c, h, w]`
    pub shape: [usize; 4],
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![T::ZERO; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Elements per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    /// The `(c, h, w)` element of sample `n`.
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let [_, cs, hs, ws] = self.shape;
        self.data[((n * cs + c) * hs + h) * ws + w]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

pub fn conv_output_hw(h: usize, w: usize, s: &Spatial) -> (usize, usize) {
    (
        (h + 2 * s.padding - s.kernel_h) / s.stride + 1,
        (w + 2 * s.padding - s.kernel_w) / s.stride + 1,
    )
}

fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, s: &Spatial, cols: &mut [T]) {
    let (oh, ow) = conv_output_hw(h, w, s);
    let p = oh * ow;
    for ch in 0..c {
        for ki in 0..s.kernel_h {
            for kj in 0..s.kernel_w {
                let row = (ch * s.kernel_h + ki) * s.kernel_w + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * s.stride + ki) as isize - s.padding as isize;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out_row.fill(T::ZERO);
                        continue;
                    }
                    let src = &x[(ch * h + iy as usize) * w..(ch * h + iy as usize + 1) * w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * s.stride + kj) as isize - s.padding as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            T::ZERO
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, s: &Spatial, dx: &mut [T]) {
    let (oh, ow) = conv_output_hw(h, w, s);
    let p = oh * ow;
    for ch in 0..c {
        for ki in 0..s.kernel_h {
            for kj in 0..s.kernel_w {
                let row = (ch * s.kernel_h + ki) * s.kernel_w + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * s.stride + ki) as isize - s.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ch * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * s.stride + kj) as isize - s.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution `x[n, c, h, w] → y[n, k, oh, ow]`; `weight` is `[k][c][kh][kw]`.
pub fn conv_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    bias: &[T],
    kernels: usize,
    s: &Spatial,
) -> Tensor<T> {
    let [n, c, h, w] = x.shape;
    let (oh, ow) = conv_output_hw(h, w, s);
    let p = oh * ow;
    let ckk = c * s.kernel_h * s.kernel_w;
    debug_assert_eq!(weight.len(), kernels * ckk);
    let mut y = Tensor::zeros([n, kernels, oh, ow]);
    let mut cols = vec![T::ZERO; ckk * p];
    for i in 0..n {
        im2col(x.sample(i), c, h, w, s, &mut cols);
        let out = &mut y.data[i * kernels * p..(i + 1) * kernels * p];
        for (k, row) in out.chunks_mut(p).enumerate() {
            row.fill(bias[k]);
        }
        T::gemm(
            kernels, ckk, p, T::ONE, weight, ckk, 1, &cols, p, 1, T::ONE, out, p, 1,
        );
    }
    y
}

/// Adjoint of [`conv_forward`]. Accumulates into `grad_weight` and
/// `grad_bias`; returns the input gradient when `want_input` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    kernels: usize,
    s: &Spatial,
    grad_out: &Tensor<T>,
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    want_input: bool,
) -> Option<Tensor<T>> {
    let [n, c, h, w] = x.shape;
    let (oh, ow) = conv_output_hw(h, w, s);
    let p = oh * ow;
    let ckk = c * s.kernel_h * s.kernel_w;
    let mut cols = vec![T::ZERO; ckk * p];
    let mut dcols = vec![T::ZERO; ckk * p];
    let mut dx = want_input.then(|| Tensor::zeros(x.shape));
    for i in 0..n {
        let dy = &grad_out.data[i * kernels * p..(i + 1) * kernels * p];
        for (k, row) in dy.chunks(p).enumerate() {
            let mut acc = T::ZERO;
            for v in row {
                acc += *v;
            }
            grad_bias[k] += acc;
        }
        im2col(x.sample(i), c, h, w, s, &mut cols);
        // dW[K, CKK] += dY[K, P] · cols^T
        T::gemm(
            kernels, p, ckk, T::ONE, dy, p, 1, &cols, 1, p, T::ONE, grad_weight, ckk, 1,
        );
        if let Some(dx) = dx.as_mut() {
            // dcols[CKK, P] = W^T · dY
            T::gemm(
                ckk, kernels, p, T::ONE, weight, 1, ckk, dy, p, 1, T::ZERO, &mut dcols, p, 1,
            );
            let len = c * h * w;
            col2im(&dcols, c, h, w, s, &mut dx.data[i * len..(i + 1) * len]);
        }
    }
    dx
}

pub fn relu_in_place<T: Scalar>(x: &mut Tensor<T>) {
    for v in x.data.iter_mut() {
        if *v < T::ZERO {
            *v = T::ZERO;
        }
    }
}

/// Masks `grad` where the activation output was not positive.
pub fn relu_backward_in_place<T: Scalar>(output: &Tensor<T>, grad: &mut Tensor<T>) {
    for (g, y) in grad.data.iter_mut().zip(&output.data) {
        if *y <= T::ZERO {
            *g = T::ZERO;
        }
    }
}

/// 2×2 max pool, stride 2. Returns the output and the flat argmax of each
/// output cell within the input buffer.
pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let [n, c, h, w] = x.shape;
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let mut arg = vec![0u32; n * c * oh * ow];
    for plane in 0..n * c {
        let src = plane * h * w;
        let dst = plane * oh * ow;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = src + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = src + (2 * oy + dy) * w + 2 * ox + dx;
                    if x.data[idx] > x.data[best] {
                        best = idx;
                    }
                }
                y.data[dst + oy * ow + ox] = x.data[best];
                arg[dst + oy * ow + ox] = best as u32;
            }
        }
    }
    (y, arg)
}

pub fn maxpool_backward<T: Scalar>(
    input_shape: [usize; 4],
    argmax: &[u32],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    for (g, &a) in grad_out.data.iter().zip(argmax) {
        dx.data[a as usize] += *g;
    }
    dx
}

pub fn global_avg_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape;
    let area = h * w;
    let scale = T::from_f64(1.0 / area as f64);
    let data = x
        .data
        .chunks(area)
        .map(|plane| {
            let mut acc = T::ZERO;
            for v in plane {
                acc += *v;
            }
            acc * scale
        })
        .collect();
    Tensor::from_vec([n, c, 1, 1], data)
}

pub fn global_avg_backward<T: Scalar>(input_shape: [usize; 4], grad_out: &Tensor<T>) -> Tensor<T> {
    let [_, _, h, w] = input_shape;
    let area = h * w;
    let scale = T::from_f64(1.0 / area as f64);
    let mut dx = Tensor::zeros(input_shape);
    for (plane, g) in dx.data.chunks_mut(area).zip(&grad_out.data) {
        plane.fill(*g * scale);
    }
    dx
}

/// `y[n, o] = x[n, i] · W[o, i]ᵀ + b[o]`; the input is flattened per sample.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, weight: &[T], bias: &[T], outputs: usize) -> Tensor<T> {
    let n = x.batch();
    let inputs = x.sample_len();
    let mut y = Tensor::zeros([n, outputs, 1, 1]);
    for row in y.data.chunks_mut(outputs) {
        row.copy_from_slice(bias);
    }
    T::gemm(
        n, inputs, outputs, T::ONE, &x.data, inputs, 1, weight, 1, inputs, T::ONE, &mut y.data,
        outputs, 1,
    );
    y
}

pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    outputs: usize,
    grad_out: &Tensor<T>,
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) -> Tensor<T> {
    let n = x.batch();
    let inputs = x.sample_len();
    for row in grad_out.data.chunks(outputs) {
        for (gb, g) in grad_bias.iter_mut().zip(row) {
            *gb += *g;
        }
    }
    // dW[O, I] += dYᵀ[O, N] · X[N, I]
    T::gemm(
        outputs, n, inputs, T::ONE, &grad_out.data, 1, outputs, &x.data, inputs, 1, T::ONE,
        grad_weight, inputs, 1,
    );
    let mut dx = Tensor::zeros(x.shape);
    // dX[N, I] = dY[N, O] · W[O, I]
    T::gemm(
        n, outputs, inputs, T::ONE, &grad_out.data, outputs, 1, weight, inputs, 1, T::ZERO,
        &mut dx.data, inputs, 1,
    );
    dx
}

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the
/// logits. The loss is accumulated in f64.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> (f64, Tensor<T>) {
    let n = logits.batch();
    let classes = logits.sample_len();
    let mut grad = Tensor::zeros(logits.shape);
    let mut loss = 0.0f64;
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let row = &logits.data[i * classes..(i + 1) * classes];
        let max = row.iter().map(|v| v.to_f64()).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        loss += -((exps[labels[i]] / sum).ln());
        let g = &mut grad.data[i * classes..(i + 1) * classes];
        for (j, e) in exps.iter().enumerate() {
            let target = if j == labels[i] { 1.0 } else { 0.0 };
            g[j] = T::from_f64((e / sum - target) * inv_n);
        }
    }
    (loss * inv_n, grad)
}

/// Argmax per row; ties resolve to the lowest class index.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let classes = logits.sample_len();
    logits
        .data
        .chunks(classes)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
