use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    dropout, dropout_backward, maxpool2d, maxpool2d_backward, relu, relu_backward, softmax, Conv2d, ConvCache, Dense,
};
use super::{Fingerprint, Mode, ParamVisitor, ParamVisitorMut, Params, Scalar, Tensor};
use crate::encoding::LabelVector;
use crate::error::{Error, Result};

const BLOCK_DROPOUT: f64 = 0.25;
const DENSE_DROPOUT: f64 = 0.5;
const KERNEL: usize = 3;

/// Architecture hyperparameters of the classifier.
///
/// [`CnnSpec::new`] gives the reference stack: two 32-filter and two 64-filter
/// 3×3 convolutions, a 512-wide hidden dense layer and a 70-way output. Narrow
/// variants exist for gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnSpec {
    pub input_size: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub filters: [usize; 2],
    pub dense_width: usize,
}

impl CnnSpec {
    pub fn new(input_size: usize) -> Self {
        Self {
            input_size,
            channels: 3,
            num_classes: 70,
            filters: [32, 64],
            dense_width: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.input_size % 4 != 0 {
            return Err(Error::InvalidParameter(format!(
                "input size must be a positive multiple of 4, got {}",
                self.input_size
            )));
        }
        if self.channels == 0 || self.num_classes < 2 || self.filters.contains(&0) || self.dense_width == 0 {
            return Err(Error::InvalidParameter(format!("degenerate CNN spec {self:?}")));
        }
        Ok(())
    }

    /// Width of the flattened feature map entering the first dense layer.
    pub fn flatten_width(&self) -> usize {
        let s = self.input_size / 4;
        self.filters[1] * s * s
    }

    /// Trainable parameter count, computed from the architecture alone.
    pub fn param_count(&self) -> usize {
        let conv = |cin: usize, cout: usize| cin * cout * KERNEL * KERNEL + cout;
        let [f1, f2] = self.filters;
        conv(self.channels, f1)
            + conv(f1, f1)
            + conv(f1, f2)
            + conv(f2, f2)
            + self.flatten_width() * self.dense_width
            + self.dense_width
            + self.dense_width * self.num_classes
            + self.num_classes
    }
}

/// Conv(32)→Conv(32)→Pool→Drop→Conv(64)→Conv(64)→Pool→Drop→Dense(512)→Drop→Dense(70).
///
/// ReLU follows every layer except the last; softmax is applied by
/// [`cnn_forward`], while [`cnn_features`] exposes the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<T: Scalar = f32> {
    pub spec: CnnSpec,
    pub conv1: Conv2d<T>,
    pub conv2: Conv2d<T>,
    pub conv3: Conv2d<T>,
    pub conv4: Conv2d<T>,
    pub dense1: Dense<T>,
    pub dense2: Dense<T>,
}

/// Activations saved by [`CnnModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct CnnCache<T> {
    conv1: ConvCache<T>,
    act1: Tensor<T>,
    conv2: ConvCache<T>,
    act2: Tensor<T>,
    pool1: Vec<usize>,
    drop1: Option<Vec<T>>,
    conv3: ConvCache<T>,
    act3: Tensor<T>,
    conv4: ConvCache<T>,
    act4: Tensor<T>,
    pool2: Vec<usize>,
    drop2: Option<Vec<T>>,
    flat: Tensor<T>,
    hidden: Tensor<T>,
    drop3: Option<Vec<T>>,
    dense2_in: Tensor<T>,
}

impl<T: Scalar> CnnCache<T> {
    /// Fingerprint of the piecewise-linear regime (ReLU signs and pooling winners).
    pub fn activation_signature(&self) -> u64 {
        let mut fp = Fingerprint::new();
        for act in [&self.act1, &self.act2, &self.act3, &self.act4, &self.hidden] {
            for chunk in act.data().chunks(64) {
                let mut bits = 0u64;
                for (k, &v) in chunk.iter().enumerate() {
                    if v > T::ZERO {
                        bits |= 1 << k;
                    }
                }
                fp.mix(bits);
            }
        }
        for &i in self.pool1.iter().chain(&self.pool2) {
            fp.mix(i as u64);
        }
        fp.finish()
    }
}

impl<T: Scalar> CnnModel<T> {
    pub fn new<R: Rng + ?Sized>(spec: CnnSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let [f1, f2] = spec.filters;
        Ok(Self {
            spec,
            conv1: Conv2d::new(spec.channels, f1, KERNEL, rng),
            conv2: Conv2d::new(f1, f1, KERNEL, rng),
            conv3: Conv2d::new(f1, f2, KERNEL, rng),
            conv4: Conv2d::new(f2, f2, KERNEL, rng),
            dense1: Dense::new(spec.flatten_width(), spec.dense_width, rng),
            dense2: Dense::new(spec.dense_width, spec.num_classes, rng),
        })
    }

    pub fn seeded(spec: CnnSpec, seed: u64) -> Result<Self> {
        Self::new(spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn cast<U: Scalar>(&self) -> CnnModel<U> {
        let conv = |c: &Conv2d<T>| Conv2d {
            weight: c.weight.cast(),
            bias: c.bias.cast(),
        };
        let dense = |d: &Dense<T>| Dense {
            weight: d.weight.cast(),
            bias: d.bias.cast(),
        };
        CnnModel {
            spec: self.spec,
            conv1: conv(&self.conv1),
            conv2: conv(&self.conv2),
            conv3: conv(&self.conv3),
            conv4: conv(&self.conv4),
            dense1: dense(&self.dense1),
            dense2: dense(&self.dense2),
        }
    }

    pub fn check_input(&self, image: &Tensor<T>) -> Result<()> {
        let s = self.spec.input_size;
        image.expect_shape(&[self.spec.channels, s, s], "CNN input image")
    }

    /// Logits of the stack plus the activations needed by [`CnnModel::backward`].
    pub fn forward<R: Rng + ?Sized>(&self, image: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<(Tensor<T>, CnnCache<T>)> {
        self.check_input(image)?;
        let (z, conv1) = self.conv1.forward(image)?;
        let act1 = relu(&z);
        let (z, conv2) = self.conv2.forward(&act1)?;
        let act2 = relu(&z);
        let (pooled, pool1) = maxpool2d(&act2)?;
        let (x, drop1) = dropout(&pooled, BLOCK_DROPOUT, mode, rng)?;

        let (z, conv3) = self.conv3.forward(&x)?;
        let act3 = relu(&z);
        let (z, conv4) = self.conv4.forward(&act3)?;
        let act4 = relu(&z);
        let (pooled, pool2) = maxpool2d(&act4)?;
        let (flat, drop2) = dropout(&pooled, BLOCK_DROPOUT, mode, rng)?;

        let hidden = relu(&self.dense1.forward(&flat)?);
        let (dense2_in, drop3) = dropout(&hidden, DENSE_DROPOUT, mode, rng)?;
        let logits = self.dense2.forward(&dense2_in)?;
        let cache = CnnCache {
            conv1,
            act1,
            conv2,
            act2,
            pool1,
            drop1,
            conv3,
            act3,
            conv4,
            act4,
            pool2,
            drop2,
            flat,
            hidden,
            drop3,
            dense2_in,
        };
        Ok((logits, cache))
    }

    /// Eval-mode class probabilities.
    pub fn predict(&self, image: &Tensor<T>) -> Result<Vec<T>> {
        let (logits, _) = self.forward(image, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(softmax(logits.data()))
    }

    /// Accumulates parameter gradients for `dlogits` into `grads`.
    /// Returns the gradient with respect to the input image when requested.
    pub fn backward(
        &self,
        cache: &CnnCache<T>,
        dlogits: &Tensor<T>,
        grads: &mut CnnModel<T>,
        want_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let d = self.dense2.backward(&cache.dense2_in, dlogits, &mut grads.dense2, true)?;
        let d = dropout_backward(cache.drop3.as_deref(), d);
        let d = relu_backward(&cache.hidden, &d);
        let d = self.dense1.backward(&cache.flat, &d, &mut grads.dense1, true)?;

        let d = dropout_backward(cache.drop2.as_deref(), d);
        let d = maxpool2d_backward(cache.act4.shape(), &cache.pool2, &d);
        let d = relu_backward(&cache.act4, &d);
        let d = self.conv4.backward(&cache.conv4, &d, &mut grads.conv4, true)?;
        let d = relu_backward(&cache.act3, &d);
        let d = self.conv3.backward(&cache.conv3, &d, &mut grads.conv3, true)?;

        let d = dropout_backward(cache.drop1.as_deref(), d);
        let d = maxpool2d_backward(cache.act2.shape(), &cache.pool1, &d);
        let d = relu_backward(&cache.act2, &d);
        let d = self.conv2.backward(&cache.conv2, &d, &mut grads.conv2, true)?;
        let d = relu_backward(&cache.act1, &d);
        self.conv1.backward(&cache.conv1, &d, &mut grads.conv1, want_input_grad)
    }
}

impl<T: Scalar> Params<T> for CnnModel<T> {
    fn visit_params<'a>(&'a self, f: ParamVisitor<'_, 'a, T>) {
        self.conv1.visit("conv1", f);
        self.conv2.visit("conv2", f);
        self.conv3.visit("conv3", f);
        self.conv4.visit("conv4", f);
        self.dense1.visit("dense1", f);
        self.dense2.visit("dense2", f);
    }

    fn visit_params_mut(&mut self, f: ParamVisitorMut<'_, T>) {
        self.conv1.visit_mut("conv1", f);
        self.conv2.visit_mut("conv2", f);
        self.conv3.visit_mut("conv3", f);
        self.conv4.visit_mut("conv4", f);
        self.dense1.visit_mut("dense1", f);
        self.dense2.visit_mut("dense2", f);
    }
}

fn to_label<T: Scalar>(probs: &[T]) -> Result<LabelVector> {
    LabelVector::new(probs.iter().map(|v| v.to_f64()).collect())
}

/// Class probabilities for one image.
pub fn cnn_forward<T: Scalar, R: Rng + ?Sized>(
    model: &CnnModel<T>,
    image: &Tensor<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<LabelVector> {
    let (logits, _) = model.forward(image, mode, rng)?;
    to_label(&softmax(logits.data()))
}

/// Pre-softmax logits for one image.
pub fn cnn_features<T: Scalar, R: Rng + ?Sized>(
    model: &CnnModel<T>,
    image: &Tensor<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<Tensor<T>> {
    Ok(model.forward(image, mode, rng)?.0)
}
