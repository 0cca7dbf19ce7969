use rand::Rng;

use super::layers::glorot_uniform;
use super::scalar::{gemm, Mat};
use super::{ParamVisitor, ParamVisitorMut, Scalar, Tensor};
use crate::error::{Error, Result};

/// LSTM cell. Gate blocks are stacked in the order input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell<T: Scalar = f32> {
    /// `[4H, inputs]`
    pub w_input: Tensor<T>,
    /// `[4H, H]`
    pub w_hidden: Tensor<T>,
    /// `[4H]`
    pub bias: Tensor<T>,
}

/// Everything a single step needs for its backward pass.
#[derive(Debug, Clone)]
pub struct LstmStepCache<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    c_prev: Vec<T>,
    i: Vec<T>,
    f: Vec<T>,
    g: Vec<T>,
    o: Vec<T>,
    tanh_c: Vec<T>,
}

pub struct LstmGrads<T> {
    pub dx: Vec<T>,
    pub dh_prev: Vec<T>,
    pub dc_prev: Vec<T>,
}

impl<T: Scalar> LstmCell<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(T::ONE);
        Self {
            w_input: glorot_uniform(&[4 * hidden, inputs], inputs, hidden, rng),
            w_hidden: glorot_uniform(&[4 * hidden, hidden], hidden, hidden, rng),
            bias,
        }
    }

    pub fn from_parts(w_input: Tensor<T>, w_hidden: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let wi = w_input.shape().to_vec();
        if wi.len() != 2 || wi[0] % 4 != 0 {
            return Err(Error::Shape(format!("lstm input weights must be [4H, in], got {wi:?}")));
        }
        let h = wi[0] / 4;
        w_hidden.expect_shape(&[4 * h, h], "lstm hidden weights")?;
        bias.expect_shape(&[4 * h], "lstm bias")?;
        Ok(Self {
            w_input,
            w_hidden,
            bias,
        })
    }

    pub fn inputs(&self) -> usize {
        self.w_input.shape()[1]
    }

    pub fn hidden(&self) -> usize {
        self.w_input.shape()[0] / 4
    }

    pub fn step(&self, x: &[T], h_prev: &[T], c_prev: &[T]) -> Result<(Vec<T>, Vec<T>, LstmStepCache<T>)> {
        let (n_in, h) = (self.inputs(), self.hidden());
        if x.len() != n_in || h_prev.len() != h || c_prev.len() != h {
            return Err(Error::Shape(format!(
                "lstm step: x {} / h {} / c {} vs cell in {n_in} hidden {h}",
                x.len(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        let mut pre = self.bias.data().to_vec();
        gemm(Mat::new(self.w_input.data(), 4 * h, n_in), Mat::new(x, n_in, 1), &mut pre, true);
        gemm(Mat::new(self.w_hidden.data(), 4 * h, h), Mat::new(h_prev, h, 1), &mut pre, true);

        let i: Vec<T> = pre[..h].iter().map(|v| v.sigmoid()).collect();
        let f: Vec<T> = pre[h..2 * h].iter().map(|v| v.sigmoid()).collect();
        let g: Vec<T> = pre[2 * h..3 * h].iter().map(|v| v.tanh()).collect();
        let o: Vec<T> = pre[3 * h..].iter().map(|v| v.sigmoid()).collect();
        let c: Vec<T> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<T> = c.iter().map(|v| v.tanh()).collect();
        let h_out: Vec<T> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
        let cache = LstmStepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            i,
            f,
            g,
            o,
            tanh_c,
        };
        Ok((h_out, c, cache))
    }

    /// Backpropagates `dh`/`dc` (gradients w.r.t. this step's outputs) through one step.
    pub fn step_backward(&self, cache: &LstmStepCache<T>, dh: &[T], dc: &[T], grad: &mut LstmCell<T>) -> LstmGrads<T> {
        let (n_in, h) = (self.inputs(), self.hidden());
        let one = T::ONE;
        let mut da = vec![T::ZERO; 4 * h];
        let mut dc_prev = vec![T::ZERO; h];
        for k in 0..h {
            let (i, f, g, o, tc) = (cache.i[k], cache.f[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
            let dct = dc[k] + dh[k] * o * (one - tc * tc);
            da[k] = dct * g * i * (one - i);
            da[h + k] = dct * cache.c_prev[k] * f * (one - f);
            da[2 * h + k] = dct * i * (one - g * g);
            da[3 * h + k] = dh[k] * tc * o * (one - o);
            dc_prev[k] = dct * f;
        }
        gemm(Mat::new(&da, 4 * h, 1), Mat::new(&cache.x, 1, n_in), grad.w_input.data_mut(), true);
        gemm(Mat::new(&da, 4 * h, 1), Mat::new(&cache.h_prev, 1, h), grad.w_hidden.data_mut(), true);
        for (b, &d) in grad.bias.data_mut().iter_mut().zip(&da) {
            *b += d;
        }
        let mut dx = vec![T::ZERO; n_in];
        gemm(Mat::t(self.w_input.data(), n_in, 4 * h), Mat::new(&da, 4 * h, 1), &mut dx, false);
        let mut dh_prev = vec![T::ZERO; h];
        gemm(Mat::t(self.w_hidden.data(), h, 4 * h), Mat::new(&da, 4 * h, 1), &mut dh_prev, false);
        LstmGrads { dx, dh_prev, dc_prev }
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: ParamVisitor<'_, 'a, T>) {
        f(&format!("{prefix}.w_input"), &self.w_input);
        f(&format!("{prefix}.w_hidden"), &self.w_hidden);
        f(&format!("{prefix}.bias"), &self.bias);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: ParamVisitorMut<'_, T>) {
        f(&format!("{prefix}.w_input"), &mut self.w_input);
        f(&format!("{prefix}.w_hidden"), &mut self.w_hidden);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

/// One recurrence step on tensors: returns `(h, c)`.
pub fn lstm_step<T: Scalar>(
    cell: &LstmCell<T>,
    x: &Tensor<T>,
    h_prev: &Tensor<T>,
    c_prev: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (h, c, _) = cell.step(x.data(), h_prev.data(), c_prev.data())?;
    let n = cell.hidden();
    Ok((Tensor::from_vec(&[n], h)?, Tensor::from_vec(&[n], c)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_cell_zero_state() {
        let cell = LstmCell::<f64>::from_parts(Tensor::zeros(&[8, 3]), Tensor::zeros(&[8, 2]), Tensor::zeros(&[8])).unwrap();
        let (h, c) = lstm_step(&cell, &Tensor::full(&[3], 0.7), &Tensor::zeros(&[2]), &Tensor::zeros(&[2])).unwrap();
        assert!(h.data().iter().chain(c.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_keeps_cell() {
        let h = 2;
        let mut bias = vec![0.0; 4 * h];
        bias[..h].fill(-1e3); // input gate → 0
        bias[h..2 * h].fill(1e3); // forget gate → 1
        let cell = LstmCell::<f64>::from_parts(
            Tensor::zeros(&[8, 3]),
            Tensor::zeros(&[8, 2]),
            Tensor::from_vec(&[8], bias).unwrap(),
        )
        .unwrap();
        let c_prev = Tensor::from_vec(&[2], vec![0.3, -1.7]).unwrap();
        let (_, c) = lstm_step(&cell, &Tensor::full(&[3], 0.5), &Tensor::full(&[2], 0.1), &c_prev).unwrap();
        assert_eq!(c, c_prev);
    }

    #[test]
    fn new_cell_has_unit_forget_bias() {
        let cell = LstmCell::<f32>::new(70, 4, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(&cell.bias.data()[4..8], &[1.0; 4]);
        assert!(cell.bias.data()[..4].iter().chain(&cell.bias.data()[8..]).all(|&v| v == 0.0));
    }

    #[test]
    fn matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (n_in, h) = (3, 2);
        let cell = LstmCell::<f64>::new(n_in, h, &mut rng);
        let mut cell = cell;
        cell.bias.data_mut().iter_mut().for_each(|b| *b += rng.random_range(-0.5..0.5));
        let x: Vec<f64> = (0..n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let hp: Vec<f64> = (0..h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cp: Vec<f64> = (0..h).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (h_out, c_out, _) = cell.step(&x, &hp, &cp).unwrap();

        // Scalar re-implementation, one unit and one gate at a time.
        let wi = cell.w_input.data();
        let wh = cell.w_hidden.data();
        let b = cell.bias.data();
        let pre = |gate: usize, k: usize| {
            let row = gate * h + k;
            let mut s = b[row];
            for j in 0..n_in {
                s += wi[row * n_in + j] * x[j];
            }
            for j in 0..h {
                s += wh[row * h + j] * hp[j];
            }
            s
        };
        for k in 0..h {
            let i = sig(pre(0, k));
            let f = sig(pre(1, k));
            let g = pre(2, k).tanh();
            let o = sig(pre(3, k));
            let c = f * cp[k] + i * g;
            assert!((c_out[k] - c).abs() < 1e-12);
            assert!((h_out[k] - o * c.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cell = LstmCell::<f64>::new(3, 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(cell.step(&[0.0; 4], &[0.0; 2], &[0.0; 2]), Err(Error::Shape(_))));
    }
}
