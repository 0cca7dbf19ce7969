//! Single-image and sequence training loops, configuration and checkpoints.

mod checkpoint;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Model, CHECKPOINT_VERSION};

use crate::dataset::{ImageLoader, ImageRecord, Region, SequenceSample};
use crate::encoding::{Encoding, TemperatureScale};
use crate::error::{Error, Result};
use crate::nn::layers::softmax;
use crate::nn::loss::{cross_entropy, sequence_mse, sequence_mse_grad, softmax_cross_entropy_grad};
use crate::nn::{AdamConfig, AdamState, CnnSpec, Direction, Mode, Params, Tensor};

/// Samples whose gradients are accumulated together before the ordered
/// reduction; fixed so results do not depend on the thread count.
const GROUP_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Single,
    Sequence,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Task::Single),
            "sequence" => Ok(Task::Sequence),
            other => Err(Error::InvalidParameter(format!("unknown task '{other}'"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Single => "single",
            Task::Sequence => "sequence",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub encoding: Encoding,
    pub sigma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub sequence_length: usize,
    pub direction: Direction,
    pub seed: u64,
    pub input_size: usize,
    pub lstm_hidden: usize,
    /// Convolution widths of the two blocks.
    pub filters: [usize; 2],
    pub dense_width: usize,
    /// Image region the model is trained on.
    pub region: Region,
    pub scale: TemperatureScale,
}

impl TrainConfig {
    pub fn single() -> Self {
        Self {
            task: Task::Single,
            encoding: Encoding::Lde,
            sigma: 3.5,
            learning_rate: 1e-3,
            epochs: 90,
            batch_size: 32,
            sequence_length: 3,
            direction: Direction::Uni,
            seed: 0,
            input_size: 64,
            lstm_hidden: 128,
            filters: [32, 64],
            dense_width: 512,
            region: Region::Entire,
            scale: TemperatureScale::default(),
        }
    }

    pub fn sequence() -> Self {
        Self {
            task: Task::Sequence,
            sigma: 4.0,
            batch_size: 8,
            ..Self::single()
        }
    }

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Single => Self::single(),
            Task::Sequence => Self::sequence(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.sequence_length < 2 {
            return bad(format!("sequence length must be at least 2, got {}", self.sequence_length));
        }
        if self.encoding == Encoding::Lde && !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("LDE needs a positive sigma, got {}", self.sigma));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} is invalid", self.learning_rate));
        }
        if self.lstm_hidden == 0 || self.dense_width == 0 || self.filters.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        self.cnn_spec().validate()
    }

    pub fn cnn_spec(&self) -> CnnSpec {
        CnnSpec {
            input_size: self.input_size,
            channels: 3,
            num_classes: self.scale.num_classes(),
            filters: self.filters,
            dense_width: self.dense_width,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.learning_rate)
    }
}

/// One epoch's progress record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based, counted over the whole training history.
    pub epoch: usize,
    pub mean_loss: f64,
    pub elapsed_s: f64,
}

impl EpochStats {
    pub const CSV_HEADER: &'static str = "epoch,mean_loss,elapsed_s";

    pub fn csv_line(&self) -> String {
        format!("{},{},{:.3}", self.epoch, self.mean_loss, self.elapsed_s)
    }
}

pub type ProgressSink<'a> = &'a mut dyn FnMut(&EpochStats);

/// Sink that discards progress.
pub fn no_progress(_: &EpochStats) {}

/// SplitMix64 finalizer over a tuple of words; keeps rng streams for
/// different purposes, epochs and samples independent.
pub(crate) fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_SAMPLE: u64 = 3;

pub(crate) fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(&[seed, STREAM_INIT]))
}

/// A decoded single-image training example.
#[derive(Debug, Clone)]
pub struct ImageSample {
    pub image: Arc<Tensor<f32>>,
    pub target: Vec<f32>,
    pub temperature_c: f64,
}

#[derive(Debug, Clone)]
pub struct SequenceExample {
    pub images: Vec<Arc<Tensor<f32>>>,
    pub targets: Vec<Vec<f32>>,
    pub temperatures: Vec<f64>,
}

fn encode_target(config: &TrainConfig, temp: f64) -> Result<Vec<f32>> {
    Ok(config
        .scale
        .encode(temp, config.encoding, config.sigma)?
        .as_slice()
        .iter()
        .map(|&v| v as f32)
        .collect())
}

/// Decodes every record; undecodable images are skipped with a warning.
pub fn prepare_images(config: &TrainConfig, records: &[ImageRecord], loader: &ImageLoader) -> Result<Vec<ImageSample>> {
    let refs: Vec<&ImageRecord> = records.iter().collect();
    let mut out = Vec::with_capacity(records.len());
    for (r, img) in records.iter().zip(loader.load_many(&refs)) {
        match img {
            Ok(image) => out.push(ImageSample {
                image,
                target: encode_target(config, r.temperature_c)?,
                temperature_c: r.temperature_c,
            }),
            Err(e @ (Error::Image { .. } | Error::Io(_))) => warn!("skipping {}: {e}", r.image_path.display()),
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(Error::Data(if records.is_empty() {
            "no training images".into()
        } else {
            format!("none of the {} training images could be decoded", records.len())
        }));
    }
    Ok(out)
}

pub(crate) fn describe(s: &SequenceSample) -> String {
    match s.days.first() {
        Some(d) => format!("camera '{}' slot {} starting {d}", s.camera_id, s.hour),
        None => format!("camera '{}' slot {} (empty)", s.camera_id, s.hour),
    }
}

/// Decodes every sequence; sequences with an undecodable frame are skipped.
pub fn prepare_sequences(
    config: &TrainConfig,
    sequences: &[SequenceSample],
    loader: &ImageLoader,
) -> Result<Vec<SequenceExample>> {
    if let Some(s) = sequences.iter().find(|s| s.len() != config.sequence_length) {
        return Err(Error::Data(format!(
            "sequence {} has {} images, expected {}",
            describe(s),
            s.len(),
            config.sequence_length
        )));
    }
    let refs: Vec<&ImageRecord> = sequences.iter().flat_map(|s| s.records.iter()).collect();
    let mut images = loader.load_many(&refs).into_iter();
    let mut out = Vec::with_capacity(sequences.len());
    for s in sequences {
        let loaded: Vec<_> = images.by_ref().take(s.len()).collect();
        match loaded.into_iter().collect::<Result<Vec<_>>>() {
            Ok(imgs) => out.push(SequenceExample {
                images: imgs,
                targets: s
                    .records
                    .iter()
                    .map(|r| encode_target(config, r.temperature_c))
                    .collect::<Result<_>>()?,
                temperatures: s.temperatures(),
            }),
            Err(e @ (Error::Image { .. } | Error::Io(_))) => warn!("skipping sequence {}: {e}", describe(s)),
            Err(e) => return Err(e),
        }
    }
    if out.is_empty() {
        return Err(Error::Data(if sequences.is_empty() {
            "no training sequences".into()
        } else {
            format!("none of the {} training sequences could be decoded", sequences.len())
        }));
    }
    Ok(out)
}

fn single_sample_grad(
    model: &crate::nn::CnnModel<f32>,
    s: &ImageSample,
    grads: &mut crate::nn::CnnModel<f32>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let (logits, cache) = model.forward(&s.image, Mode::Train, rng)?;
    let probs = softmax(logits.data());
    let loss = cross_entropy(&probs, &s.target)?;
    let dlogits = Tensor::from_vec(&[probs.len()], softmax_cross_entropy_grad(&probs, &s.target))?;
    model.backward(&cache, &dlogits, grads, false);
    Ok(loss as f64)
}

fn sequence_sample_grad(
    model: &crate::nn::SequenceModel<f32>,
    s: &SequenceExample,
    grads: &mut crate::nn::SequenceModel<f32>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let images: Vec<Tensor<f32>> = s.images.iter().map(|i| (**i).clone()).collect();
    let (probs, cache) = model.forward(&images, Mode::Train, rng)?;
    let loss = sequence_mse(&probs, &s.targets)?;
    let dprobs = sequence_mse_grad(&probs, &s.targets)?;
    model.backward(&cache, &dprobs, grads, false)?;
    Ok(loss as f64)
}

/// Runs `epochs` more epochs of shuffled mini-batch Adam. Per-sample
/// gradients are averaged over each batch.
#[allow(clippy::too_many_arguments)]
fn run_epochs<M, S, F>(
    model: &mut M,
    adam: &mut AdamState<f32>,
    samples: &[S],
    config: &TrainConfig,
    first_epoch: usize,
    epochs: usize,
    losses: &mut Vec<f64>,
    sink: ProgressSink<'_>,
    sample_grad: F,
) -> Result<()>
where
    M: Params<f32> + Clone + Send + Sync,
    S: Sync,
    F: Fn(&M, &S, &mut M, &mut ChaCha8Rng) -> Result<f64> + Sync,
{
    let start = Instant::now();
    for epoch in first_epoch..first_epoch + epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[
            config.seed,
            STREAM_SHUFFLE,
            epoch as u64,
        ])));
        let mut total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let model_ref: &M = model;
            let parts: Vec<Result<(M, f64)>> = batch
                .par_chunks(GROUP_SIZE)
                .map(|group| {
                    let mut grads = model_ref.zeros_like();
                    let mut loss = 0.0;
                    for &i in group {
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
                            config.seed,
                            STREAM_SAMPLE,
                            epoch as u64,
                            i as u64,
                        ]));
                        loss += sample_grad(model_ref, &samples[i], &mut grads, &mut rng)?;
                    }
                    Ok((grads, loss))
                })
                .collect();
            let mut parts = parts.into_iter();
            let (mut grads, mut loss) = parts.next().expect("non-empty batch")?;
            for p in parts {
                let (g, l) = p?;
                grads.add_params(&g);
                loss += l;
            }
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss or gradient in epoch {}, batch {}",
                    epoch + 1,
                    b + 1
                )));
            }
            grads.scale_params(1.0 / batch.len() as f32);
            adam.step(model, &grads)?;
            if !model.all_finite() {
                return Err(Error::Numeric(format!(
                    "parameters became non-finite in epoch {}, batch {}",
                    epoch + 1,
                    b + 1
                )));
            }
            total += loss;
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            mean_loss: total / samples.len() as f64,
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        losses.push(stats.mean_loss);
        sink(&stats);
    }
    Ok(())
}

/// Trains a fresh classifier for `config.epochs` epochs.
pub fn train_single(
    config: &TrainConfig,
    records: &[ImageRecord],
    loader: &ImageLoader,
    sink: ProgressSink<'_>,
) -> Result<Checkpoint> {
    let ckpt = Checkpoint::init(config.clone(), Task::Single)?;
    let samples = prepare_images(config, records, loader)?;
    resume_single_prepared(ckpt, &samples, config.epochs, sink)
}

/// Continues training on already decoded samples.
pub fn resume_single_prepared(
    mut ckpt: Checkpoint,
    samples: &[ImageSample],
    epochs: usize,
    sink: ProgressSink<'_>,
) -> Result<Checkpoint> {
    let Model::Single(model) = &mut ckpt.model else {
        return Err(Error::InvalidInput("checkpoint holds a sequence model".into()));
    };
    if samples.is_empty() {
        return Err(Error::Data("no training images".into()));
    }
    let size = ckpt.config.input_size;
    if let Some(s) = samples.iter().find(|s| s.image.shape() != [3, size, size]) {
        return Err(Error::Shape(format!("image {:?} does not match input size {size}", s.image.shape())));
    }
    run_epochs(
        model,
        &mut ckpt.adam,
        samples,
        &ckpt.config,
        ckpt.epoch,
        epochs,
        &mut ckpt.losses,
        sink,
        single_sample_grad,
    )?;
    ckpt.epoch += epochs;
    Ok(ckpt)
}

/// Trains a fresh sequence forecaster on pooled sequences.
pub fn train_sequence(
    config: &TrainConfig,
    sequences: &[SequenceSample],
    loader: &ImageLoader,
    sink: ProgressSink<'_>,
) -> Result<Checkpoint> {
    let ckpt = Checkpoint::init(config.clone(), Task::Sequence)?;
    let samples = prepare_sequences(config, sequences, loader)?;
    resume_sequence_prepared(ckpt, &samples, config.epochs, sink)
}

pub fn resume_sequence_prepared(
    mut ckpt: Checkpoint,
    samples: &[SequenceExample],
    epochs: usize,
    sink: ProgressSink<'_>,
) -> Result<Checkpoint> {
    let Model::Sequence(model) = &mut ckpt.model else {
        return Err(Error::InvalidInput("checkpoint holds a single-image model".into()));
    };
    if samples.is_empty() {
        return Err(Error::Data("no training sequences".into()));
    }
    let n = ckpt.config.sequence_length;
    if let Some(i) = samples.iter().position(|s| s.images.len() != n) {
        return Err(Error::Data(format!(
            "training sequence {i} has {} images, expected {n}",
            samples[i].images.len()
        )));
    }
    run_epochs(
        model,
        &mut ckpt.adam,
        samples,
        &ckpt.config,
        ckpt.epoch,
        epochs,
        &mut ckpt.losses,
        sink,
        sequence_sample_grad,
    )?;
    ckpt.epoch += epochs;
    Ok(ckpt)
}
