//! Minimal tensor math with hand-written forward and backward passes for the
//! CNN classifier, the CNN→LSTM forecaster, their losses and Adam.

mod adam;
mod cnn;
pub mod gradcheck;
pub mod layers;
pub mod loss;
mod lstm;
mod scalar;
mod sequence;
mod tensor;

use std::fmt;
use std::str::FromStr;

pub use adam::{AdamConfig, AdamState};
pub use cnn::{cnn_features, cnn_forward, CnnCache, CnnModel, CnnSpec};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{cross_entropy_loss, sequence_mse_loss};
pub use lstm::{lstm_step, LstmCell, LstmStepCache};
pub use scalar::Scalar;
pub use sequence::{sequence_forward, Direction, SequenceCache, SequenceModel};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Whether stochastic layers (dropout) are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

pub type ParamVisitor<'f, 'a, T> = &'f mut dyn FnMut(&str, &'a Tensor<T>);
pub type ParamVisitorMut<'f, T> = &'f mut dyn FnMut(&str, &mut Tensor<T>);

/// Named, ordered access to every trainable tensor of a model.
///
/// A model value of the same type is used to hold gradients.
pub trait Params<T: Scalar> {
    fn visit_params<'a>(&'a self, f: ParamVisitor<'_, 'a, T>);
    fn visit_params_mut(&mut self, f: ParamVisitorMut<'_, T>);

    fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        self.visit_params(&mut |_, t| out.push(t));
        out
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, t| out.push((name.to_string(), t)));
        out
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.visit_params_mut(&mut |_, t| t.fill(T::ZERO));
        z
    }

    fn add_params(&mut self, other: &Self) {
        let theirs = other.tensors();
        let mut i = 0;
        self.visit_params_mut(&mut |_, t| {
            t.add_assign(theirs[i]);
            i += 1;
        });
    }

    fn scale_params(&mut self, factor: T) {
        self.visit_params_mut(&mut |_, t| t.scale(factor));
    }

    fn flat_f64(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit_params(&mut |_, t| out.extend(t.data().iter().map(|v| v.to_f64())));
        out
    }

    fn set_flat_f64(&mut self, values: &[f64]) -> Result<()> {
        let total = self.param_count();
        if total != values.len() {
            return Err(Error::shape(format!(
                "model has {total} parameters, got {} values",
                values.len()
            )));
        }
        let mut offset = 0;
        self.visit_params_mut(&mut |_, t| {
            let n = t.len();
            for (dst, &src) in t.data_mut().iter_mut().zip(&values[offset..offset + n]) {
                *dst = T::from_f64(src);
            }
            offset += n;
        });
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uni" => Ok(Direction::Uni),
            "bi" => Ok(Direction::Bi),
            other => Err(Error::InvalidParameter(format!("unknown direction '{other}'"))),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Uni => "uni",
            Direction::Bi => "bi",
        })
    }
}

/// Cheap order-sensitive hash used to fingerprint activation patterns.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Fingerprint(u64);

impl Fingerprint {
    pub fn new() -> Self {
        Fingerprint(0xcbf2_9ce4_8422_2325)
    }

    pub fn mix(&mut self, v: u64) {
        self.0 ^= v;
        self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}

