use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cnn::{CnnCache, CnnModel, CnnSpec};
use super::layers::{softmax, softmax_backward, Dense};
use super::lstm::{LstmCell, LstmStepCache};
use super::{Fingerprint, Mode, ParamVisitor, ParamVisitorMut, Params, Scalar, Tensor};
use crate::encoding::LabelVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Uni,
    Bi,
}

/// CNN feature extractor (logits, shared across steps) → LSTM → Dense + softmax head.
///
/// The bi-directional variant runs a second cell from the last image to the
/// first and feeds `[h_fwd; h_bwd]` to a head twice as wide.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel<T: Scalar = f32> {
    pub cnn: CnnModel<T>,
    pub forward_cell: LstmCell<T>,
    pub backward_cell: Option<LstmCell<T>>,
    pub head: Dense<T>,
}

#[derive(Debug, Clone)]
pub struct SequenceCache<T> {
    cnn: Vec<CnnCache<T>>,
    fwd: Vec<LstmStepCache<T>>,
    /// Indexed by time step, not processing order.
    bwd: Vec<LstmStepCache<T>>,
    head_inputs: Vec<Tensor<T>>,
    probs: Vec<Vec<T>>,
}

impl<T: Scalar> SequenceCache<T> {
    pub fn probabilities(&self) -> &[Vec<T>] {
        &self.probs
    }

    pub fn activation_signature(&self) -> u64 {
        let mut fp = Fingerprint::new();
        for c in &self.cnn {
            fp.mix(c.activation_signature());
        }
        fp.finish()
    }
}

impl<T: Scalar> SequenceModel<T> {
    pub fn new<R: Rng + ?Sized>(spec: CnnSpec, hidden: usize, direction: Direction, rng: &mut R) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::InvalidParameter("LSTM hidden width must be positive".into()));
        }
        let cnn = CnnModel::new(spec, rng)?;
        let features = spec.num_classes;
        let forward_cell = LstmCell::new(features, hidden, rng);
        let backward_cell = match direction {
            Direction::Uni => None,
            Direction::Bi => Some(LstmCell::new(features, hidden, rng)),
        };
        let head_in = if backward_cell.is_some() { 2 * hidden } else { hidden };
        let head = Dense::new(head_in, spec.num_classes, rng);
        Ok(Self {
            cnn,
            forward_cell,
            backward_cell,
            head,
        })
    }

    pub fn seeded(spec: CnnSpec, hidden: usize, direction: Direction, seed: u64) -> Result<Self> {
        Self::new(spec, hidden, direction, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn direction(&self) -> Direction {
        if self.backward_cell.is_some() {
            Direction::Bi
        } else {
            Direction::Uni
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward_cell.hidden()
    }

    pub fn spec(&self) -> CnnSpec {
        self.cnn.spec
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        images: &[Tensor<T>],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<Vec<T>>, SequenceCache<T>)> {
        let n = images.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!("a sequence needs at least 2 images, got {n}")));
        }
        let mut cnn = Vec::with_capacity(n);
        let mut feats = Vec::with_capacity(n);
        for img in images {
            let (logits, cache) = self.cnn.forward(img, mode, rng)?;
            feats.push(logits.into_vec());
            cnn.push(cache);
        }

        let h = self.hidden();
        let mut fwd = Vec::with_capacity(n);
        let mut fwd_h = Vec::with_capacity(n);
        let (mut hs, mut cs) = (vec![T::ZERO; h], vec![T::ZERO; h]);
        for x in &feats {
            let (h_new, c_new, cache) = self.forward_cell.step(x, &hs, &cs)?;
            fwd.push(cache);
            fwd_h.push(h_new.clone());
            hs = h_new;
            cs = c_new;
        }

        let mut bwd_h: Vec<Vec<T>> = Vec::new();
        let mut bwd: Vec<LstmStepCache<T>> = Vec::new();
        if let Some(cell) = &self.backward_cell {
            let (mut hs, mut cs) = (vec![T::ZERO; h], vec![T::ZERO; h]);
            let mut steps = Vec::with_capacity(n);
            for x in feats.iter().rev() {
                let (h_new, c_new, cache) = cell.step(x, &hs, &cs)?;
                steps.push((h_new.clone(), cache));
                hs = h_new;
                cs = c_new;
            }
            steps.reverse();
            for (hv, cache) in steps {
                bwd_h.push(hv);
                bwd.push(cache);
            }
        }

        let mut head_inputs = Vec::with_capacity(n);
        let mut probs = Vec::with_capacity(n);
        for i in 0..n {
            let mut z = fwd_h[i].clone();
            if let Some(b) = bwd_h.get(i) {
                z.extend_from_slice(b);
            }
            let z = Tensor::from_vec(&[z.len()], z)?;
            let logits = self.head.forward(&z)?;
            probs.push(softmax(logits.data()));
            head_inputs.push(z);
        }
        let cache = SequenceCache {
            cnn,
            fwd,
            bwd,
            head_inputs,
            probs: probs.clone(),
        };
        Ok((probs, cache))
    }

    /// Backpropagation through time given gradients w.r.t. every step's probabilities.
    pub fn backward(
        &self,
        cache: &SequenceCache<T>,
        dprobs: &[Vec<T>],
        grads: &mut SequenceModel<T>,
        want_input_grads: bool,
    ) -> Result<Option<Vec<Tensor<T>>>> {
        let n = cache.probs.len();
        if dprobs.len() != n {
            return Err(Error::Shape(format!("{} step gradients for {n} steps", dprobs.len())));
        }
        let h = self.hidden();
        let mut dh_fwd = Vec::with_capacity(n);
        let mut dh_bwd = Vec::with_capacity(n);
        for i in 0..n {
            let dlogits = softmax_backward(&cache.probs[i], &dprobs[i]);
            let dlogits = Tensor::from_vec(&[dlogits.len()], dlogits)?;
            let dz = self
                .head
                .backward(&cache.head_inputs[i], &dlogits, &mut grads.head, true)
                .expect("head input grad");
            let dz = dz.into_vec();
            dh_fwd.push(dz[..h].to_vec());
            if self.backward_cell.is_some() {
                dh_bwd.push(dz[h..].to_vec());
            }
        }

        let feat_width = self.forward_cell.inputs();
        let mut dfeat = vec![vec![T::ZERO; feat_width]; n];

        let (mut dh_next, mut dc_next) = (vec![T::ZERO; h], vec![T::ZERO; h]);
        for i in (0..n).rev() {
            let dh: Vec<T> = dh_fwd[i].iter().zip(&dh_next).map(|(&a, &b)| a + b).collect();
            let g = self
                .forward_cell
                .step_backward(&cache.fwd[i], &dh, &dc_next, &mut grads.forward_cell);
            add_into(&mut dfeat[i], &g.dx);
            dh_next = g.dh_prev;
            dc_next = g.dc_prev;
        }

        if let (Some(cell), Some(gcell)) = (&self.backward_cell, grads.backward_cell.as_mut()) {
            // The reverse cell processed step n−1 first, so its gradient flows from step 0 upward.
            let (mut dh_next, mut dc_next) = (vec![T::ZERO; h], vec![T::ZERO; h]);
            for i in 0..n {
                let dh: Vec<T> = dh_bwd[i].iter().zip(&dh_next).map(|(&a, &b)| a + b).collect();
                let g = cell.step_backward(&cache.bwd[i], &dh, &dc_next, gcell);
                add_into(&mut dfeat[i], &g.dx);
                dh_next = g.dh_prev;
                dc_next = g.dc_prev;
            }
        }

        let mut dimages = Vec::with_capacity(if want_input_grads { n } else { 0 });
        for (i, d) in dfeat.into_iter().enumerate() {
            let d = Tensor::from_vec(&[feat_width], d)?;
            let dx = self.cnn.backward(&cache.cnn[i], &d, &mut grads.cnn, want_input_grads);
            if let Some(dx) = dx {
                dimages.push(dx);
            }
        }
        Ok(want_input_grads.then_some(dimages))
    }

    /// Eval-mode probabilities for every step.
    pub fn predict(&self, images: &[Tensor<T>]) -> Result<Vec<Vec<T>>> {
        Ok(self.forward(images, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))?.0)
    }

    pub fn cast<U: Scalar>(&self) -> SequenceModel<U> {
        let cell = |c: &LstmCell<T>| LstmCell {
            w_input: c.w_input.cast(),
            w_hidden: c.w_hidden.cast(),
            bias: c.bias.cast(),
        };
        SequenceModel {
            cnn: self.cnn.cast(),
            forward_cell: cell(&self.forward_cell),
            backward_cell: self.backward_cell.as_ref().map(cell),
            head: Dense {
                weight: self.head.weight.cast(),
                bias: self.head.bias.cast(),
            },
        }
    }
}

fn add_into<T: Scalar>(acc: &mut [T], v: &[T]) {
    for (a, &b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

impl<T: Scalar> Params<T> for SequenceModel<T> {
    fn visit_params<'a>(&'a self, f: ParamVisitor<'_, 'a, T>) {
        self.cnn.visit_params(f);
        self.forward_cell.visit("lstm_fwd", f);
        if let Some(cell) = &self.backward_cell {
            cell.visit("lstm_bwd", f);
        }
        self.head.visit("head", f);
    }

    fn visit_params_mut(&mut self, f: ParamVisitorMut<'_, T>) {
        self.cnn.visit_params_mut(f);
        self.forward_cell.visit_mut("lstm_fwd", f);
        if let Some(cell) = &mut self.backward_cell {
            cell.visit_mut("lstm_bwd", f);
        }
        self.head.visit_mut("head", f);
    }
}

/// Per-step temperature distributions `y_1 … y_n` for an image sequence.
pub fn sequence_forward<T: Scalar, R: Rng + ?Sized>(
    model: &SequenceModel<T>,
    images: &[Tensor<T>],
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<LabelVector>> {
    let (probs, _) = model.forward(images, mode, rng)?;
    probs
        .into_iter()
        .map(|p| LabelVector::new(p.into_iter().map(|v| v.to_f64()).collect()))
        .collect()
}
