//! Forward/backward kernels for the layers of both architectures.
//!
//! Layers hold their parameters as tensors. Gradients are accumulated into a
//! value of the same layer type, so a model-shaped struct doubles as its own
//! gradient container.

use rand::Rng;

use super::scalar::{gemm, Mat};
use super::{Mode, ParamVisitor, ParamVisitorMut, Scalar, Tensor};
use crate::error::{Error, Result};

/// Glorot/Xavier uniform initialization, limit √(6/(fan_in+fan_out)).
pub fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| T::from_f64(rng.random_range(-limit..limit)))
        .collect();
    Tensor::from_vec(shape, data).expect("glorot shape")
}

/// 2-D cross-correlation with 'same' zero padding and stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T: Scalar = f32> {
    /// `[filters, channels, k, k]`
    pub weight: Tensor<T>,
    /// `[filters]`
    pub bias: Tensor<T>,
}

/// Unfolded input patches kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    in_shape: [usize; 3],
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, filters: usize, kernel: usize, rng: &mut R) -> Self {
        let area = kernel * kernel;
        Self {
            weight: glorot_uniform(
                &[filters, in_channels, kernel, kernel],
                in_channels * area,
                filters * area,
                rng,
            ),
            bias: Tensor::zeros(&[filters]),
        }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let s = weight.shape();
        if s.len() != 4 || s[2] != s[3] || s[2] % 2 == 0 {
            return Err(Error::shape(format!(
                "conv weight must be [F, C, k, k] with odd k, got {s:?}"
            )));
        }
        bias.expect_shape(&[s[0]], "conv bias")?;
        Ok(Self { weight, bias })
    }

    pub fn filters(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let s = input.shape();
        if s.len() != 3 || s[0] != self.in_channels() {
            return Err(Error::shape(format!(
                "conv input {s:?} does not match weights {:?}",
                self.weight.shape()
            )));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let k = self.kernel();
        let f = self.filters();
        let cols = im2col(input.data(), c, h, w, k);
        let mut out = vec![T::ZERO; f * h * w];
        for (fi, row) in out.chunks_mut(h * w).enumerate() {
            row.fill(self.bias.data()[fi]);
        }
        gemm(
            Mat::new(self.weight.data(), f, c * k * k),
            Mat::new(&cols, c * k * k, h * w),
            &mut out,
            true,
        );
        let out = Tensor::from_vec(&[f, h, w], out)?;
        Ok((out, ConvCache { cols, in_shape: [c, h, w] }))
    }

    /// Accumulates parameter gradients into `grad`; returns the input gradient when asked.
    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        dout: &Tensor<T>,
        grad: &mut Conv2d<T>,
        want_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let [c, h, w] = cache.in_shape;
        let k = self.kernel();
        let f = self.filters();
        let ckk = c * k * k;
        let hw = h * w;
        debug_assert_eq!(dout.len(), f * hw);
        let d = dout.data();
        gemm(
            Mat::new(d, f, hw),
            Mat::t(&cache.cols, hw, ckk),
            grad.weight.data_mut(),
            true,
        );
        for (fi, row) in d.chunks(hw).enumerate() {
            grad.bias.data_mut()[fi] += row.iter().copied().sum::<T>();
        }
        if !want_input_grad {
            return None;
        }
        let mut dcols = vec![T::ZERO; ckk * hw];
        gemm(Mat::t(self.weight.data(), ckk, f), Mat::new(d, f, hw), &mut dcols, false);
        let dx = col2im(&dcols, c, h, w, k);
        Some(Tensor::from_vec(&[c, h, w], dx).expect("conv input grad shape"))
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: ParamVisitor<'_, 'a, T>) {
        f(&format!("{prefix}.weight"), &self.weight);
        f(&format!("{prefix}.bias"), &self.bias);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: ParamVisitorMut<'_, T>) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![T::ZERO; c * k * k * hw];
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ki as isize - pad;
                let dx = kj as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst_row = &mut dst[y * w..(y + 1) * w];
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    for xx in x0..x1 {
                        dst_row[xx] = src_row[(xx as isize + dx) as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut x = vec![T::ZERO; c * hw];
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ki as isize - pad;
                let dx = kj as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &src[y * w..(y + 1) * w];
                    let dst_row = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    for xx in x0..x1 {
                        dst_row[(xx as isize + dx) as usize] += src_row[xx];
                    }
                }
            }
        }
    }
    x
}

/// 2×2 max pooling with stride 2; `argmax` holds flat input indices.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = input.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!("maxpool expects [C, H, W], got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("maxpool needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        let base = ci * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(&[c, oh, ow], out)?, argmax))
}

pub fn maxpool2d_backward<T: Scalar>(in_shape: &[usize], argmax: &[usize], dout: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(dout.data()) {
        d[idx] += g;
    }
    dx
}

/// Affine map `y = xᵀW + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: glorot_uniform(&[inputs, outputs], inputs, outputs, rng),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let s = weight.shape();
        if s.len() != 2 {
            return Err(Error::shape(format!("dense weight must be [in, out], got {s:?}")));
        }
        bias.expect_shape(&[s[1]], "dense bias")?;
        Ok(Self { weight, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Any input shape is accepted as long as it flattens to `inputs()` values.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        if input.len() != self.inputs() {
            return Err(Error::shape(format!(
                "dense input has {} values ({:?}), weights expect {}",
                input.len(),
                input.shape(),
                self.inputs()
            )));
        }
        let m = self.outputs();
        let mut out = self.bias.data().to_vec();
        gemm(
            Mat::new(input.data(), 1, self.inputs()),
            Mat::new(self.weight.data(), self.inputs(), m),
            &mut out,
            true,
        );
        Tensor::from_vec(&[m], out)
    }

    pub fn backward(
        &self,
        input: &Tensor<T>,
        dout: &Tensor<T>,
        grad: &mut Dense<T>,
        want_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let (k, m) = (self.inputs(), self.outputs());
        gemm(
            Mat::new(input.data(), k, 1),
            Mat::new(dout.data(), 1, m),
            grad.weight.data_mut(),
            true,
        );
        grad.bias.add_assign(dout);
        if !want_input_grad {
            return None;
        }
        let mut dx = vec![T::ZERO; k];
        gemm(
            Mat::new(self.weight.data(), k, m),
            Mat::new(dout.data(), m, 1),
            &mut dx,
            false,
        );
        Some(Tensor::from_vec(input.shape(), dx).expect("dense input grad shape"))
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: ParamVisitor<'_, 'a, T>) {
        f(&format!("{prefix}.weight"), &self.weight);
        f(&format!("{prefix}.bias"), &self.bias);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: ParamVisitorMut<'_, T>) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().map(|&v| v.max(T::ZERO)).collect();
    Tensor::from_vec(input.shape(), data).expect("relu shape")
}

/// Gradient through ReLU given its *output*.
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&y, &g)| if y > T::ZERO { g } else { T::ZERO })
        .collect();
    Tensor::from_vec(output.shape(), data).expect("relu grad shape")
}

/// Numerically stable softmax (max-shifted).
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(logits[0], T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Vector-Jacobian product of softmax: `dz = y ⊙ (dy − ⟨dy, y⟩)`.
pub fn softmax_backward<T: Scalar>(probs: &[T], dprobs: &[T]) -> Vec<T> {
    let dot: T = probs.iter().zip(dprobs).map(|(&y, &g)| y * g).sum();
    probs.iter().zip(dprobs).map(|(&y, &g)| y * (g - dot)).collect()
}

pub(crate) fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidParameter(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Inverted dropout. Returns the output and, in train mode, the per-element scale mask.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    check_dropout_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.random::<f64>() < rate { T::ZERO } else { keep })
        .collect();
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Ok((Tensor::from_vec(input.shape(), data)?, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(mask: Option<&[T]>, dout: Tensor<T>) -> Tensor<T> {
    match mask {
        None => dout,
        Some(mask) => {
            let shape = dout.shape().to_vec();
            let data = dout.into_vec().into_iter().zip(mask).map(|(g, &m)| g * m).collect();
            Tensor::from_vec(&shape, data).expect("dropout grad shape")
        }
    }
}
