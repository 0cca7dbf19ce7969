//! RMSE reports, trivial baselines and the experiment grid.

mod experiments;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use experiments::{
    compare_regions, export_curve, run_sequence_experiment, sequence_baselines, sequence_data, sweep_hours,
    sweep_sequence_length, write_curve_csv, write_sweep_csv, CurveRow, ExperimentOptions, SequenceData,
    SequenceExperiment, SweepRow,
};

use crate::dataset::{format_timestamp, ImageLoader, ImageRecord, SequenceSample};
use crate::encoding::DecodeMode;
use crate::error::{Error, Result};
use crate::training::{Checkpoint, Task, TrainConfig};

/// Root mean squared error.
pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::InvalidInput("RMSE of an empty set".into()));
    }
    if predictions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let sse: f64 = predictions.iter().zip(truths).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / predictions.len() as f64).sqrt())
}

/// One scored sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub camera_id: String,
    pub timestamp: String,
    pub image_path: String,
    pub truth_c: f64,
    pub prediction_c: f64,
}

impl Prediction {
    fn for_record(r: &ImageRecord, prediction_c: f64) -> Self {
        Self {
            camera_id: r.camera_id.clone(),
            timestamp: format_timestamp(&r.timestamp),
            image_path: r.image_path.to_string_lossy().into_owned(),
            truth_c: r.temperature_c,
            prediction_c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraScore {
    pub rmse: f64,
    pub samples: usize,
}

/// Per-camera RMSE table; the average is the unweighted mean over cameras.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `model`, `persistence` or `climatology`.
    pub method: String,
    pub config: Option<TrainConfig>,
    pub decode: Option<DecodeMode>,
    pub cameras: BTreeMap<String, CameraScore>,
    pub average_rmse: f64,
    pub samples: usize,
    pub duration_s: f64,
    #[serde(skip)]
    pub predictions: Vec<Prediction>,
}

impl EvalReport {
    pub fn empty(method: &str) -> Self {
        Self {
            method: method.to_string(),
            config: None,
            decode: None,
            cameras: BTreeMap::new(),
            average_rmse: f64::NAN,
            samples: 0,
            duration_s: 0.0,
            predictions: Vec::new(),
        }
    }

    /// Adds one camera's score; a camera may appear only once.
    pub fn add_camera(&mut self, camera_id: &str, score: CameraScore) -> Result<()> {
        if !(score.rmse >= 0.0) {
            return Err(Error::InvalidInput(format!("camera '{camera_id}' has RMSE {}", score.rmse)));
        }
        if self.cameras.contains_key(camera_id) {
            return Err(Error::InvalidInput(format!("camera '{camera_id}' is already in the report")));
        }
        self.cameras.insert(camera_id.to_string(), score);
        self.samples = self.cameras.values().map(|c| c.samples).sum();
        self.average_rmse = self.cameras.values().map(|c| c.rmse).sum::<f64>() / self.cameras.len() as f64;
        Ok(())
    }

    /// Groups predictions by camera and scores each group.
    pub fn from_predictions(method: &str, predictions: Vec<Prediction>) -> Result<Self> {
        if predictions.is_empty() {
            return Err(Error::InvalidInput(format!("{method}: nothing to evaluate")));
        }
        let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for p in &predictions {
            let g = groups.entry(&p.camera_id).or_default();
            g.0.push(p.prediction_c);
            g.1.push(p.truth_c);
        }
        let mut report = Self::empty(method);
        for (camera, (pred, truth)) in &groups {
            report.add_camera(
                camera,
                CameraScore {
                    rmse: rmse(pred, truth)?,
                    samples: pred.len(),
                },
            )?;
        }
        report.predictions = predictions;
        Ok(report)
    }

    /// Cameras in `expected` with no scored sample.
    pub fn missing_cameras<'a>(&self, expected: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        let mut missing: Vec<String> = expected
            .into_iter()
            .filter(|c| !self.cameras.contains_key(*c))
            .map(str::to_string)
            .collect();
        missing.sort();
        missing.dedup();
        missing
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn write_predictions_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
        for p in &self.predictions {
            w.serialize(p).map_err(|e| Error::Io(e.into()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// `camera_id,rmse,samples` rows followed by an `average` row.
    pub fn write_table_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = String::from("camera_id,rmse,samples\n");
        for (cam, s) in &self.cameras {
            text.push_str(&format!("{cam},{},{}\n", s.rmse, s.samples));
        }
        text.push_str(&format!("average,{},{}\n", self.average_rmse, self.samples));
        fs::write(path, text)?;
        Ok(())
    }
}

pub fn read_predictions_csv(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(e.into()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(e.to_string())))
        .collect()
}

fn check_loader(ckpt: &Checkpoint, loader: &ImageLoader) -> Result<()> {
    if loader.input_size() != ckpt.config.input_size {
        return Err(Error::InvalidInput(format!(
            "loader produces {0}x{0} images, model expects {1}x{1}",
            loader.input_size(),
            ckpt.config.input_size
        )));
    }
    if loader.region() != ckpt.config.region {
        warn!(
            "evaluating a {}-region model on {} crops",
            ckpt.config.region,
            loader.region()
        );
    }
    Ok(())
}

fn finish(method: &str, ckpt: &Checkpoint, decode: DecodeMode, preds: Vec<Prediction>, start: Instant, expected: Vec<&str>) -> Result<EvalReport> {
    if preds.is_empty() {
        return Err(Error::Data("no test sample could be evaluated".into()));
    }
    let mut report = EvalReport::from_predictions(method, preds)?;
    for cam in report.missing_cameras(expected) {
        warn!("camera '{cam}' has no evaluable test samples and is omitted");
    }
    report.config = Some(ckpt.config.clone());
    report.decode = Some(decode);
    report.duration_s = start.elapsed().as_secs_f64();
    Ok(report)
}

fn skip_or_fail<T>(r: Result<T>, what: impl FnOnce() -> String) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e @ (Error::Image { .. } | Error::Io(_))) => {
            warn!("skipping {}: {e}", what());
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Temperature decoded from one image.
pub fn predict_image(ckpt: &Checkpoint, image: &crate::nn::Tensor<f32>, decode: DecodeMode) -> Result<f64> {
    let probs = ckpt.single_model()?.predict(image)?;
    let probs: Vec<f64> = probs.iter().map(|&p| p as f64).collect();
    ckpt.config.scale.decode_slice(&probs, decode)
}

/// Temperature decoded from the last step of an image sequence.
pub fn predict_sequence(ckpt: &Checkpoint, images: &[crate::nn::Tensor<f32>], decode: DecodeMode) -> Result<f64> {
    let model = ckpt.sequence_model()?;
    if images.len() != ckpt.config.sequence_length {
        return Err(Error::InvalidInput(format!(
            "model was trained on {}-image sequences, got {}",
            ckpt.config.sequence_length,
            images.len()
        )));
    }
    let probs = model.predict(images)?;
    let last: Vec<f64> = probs.last().expect("n >= 2").iter().map(|&p| p as f64).collect();
    ckpt.config.scale.decode_slice(&last, decode)
}

/// Eval-mode prediction for every test image, scored per camera.
pub fn eval_single(ckpt: &Checkpoint, records: &[ImageRecord], loader: &ImageLoader, decode: DecodeMode) -> Result<EvalReport> {
    let start = Instant::now();
    if ckpt.task() != Task::Single {
        return Err(Error::InvalidInput("eval_single needs a single-image checkpoint".into()));
    }
    check_loader(ckpt, loader)?;
    let scored: Vec<Result<Option<Prediction>>> = records
        .par_iter()
        .map(|r| {
            let Some(img) = skip_or_fail(loader.load(r), || r.image_path.display().to_string())? else {
                return Ok(None);
            };
            Ok(Some(Prediction::for_record(r, predict_image(ckpt, &img, decode)?)))
        })
        .collect();
    let preds = scored.into_iter().filter_map(Result::transpose).collect::<Result<Vec<_>>>()?;
    finish("model", ckpt, decode, preds, start, records.iter().map(|r| r.camera_id.as_str()).collect())
}

/// Scores only the last step `y_n` of every test sequence.
pub fn eval_sequence(
    ckpt: &Checkpoint,
    sequences: &[SequenceSample],
    loader: &ImageLoader,
    decode: DecodeMode,
) -> Result<EvalReport> {
    let start = Instant::now();
    if ckpt.task() != Task::Sequence {
        return Err(Error::InvalidInput("eval_sequence needs a sequence checkpoint".into()));
    }
    check_loader(ckpt, loader)?;
    let n = ckpt.config.sequence_length;
    if let Some(s) = sequences.iter().find(|s| s.len() != n) {
        return Err(Error::InvalidInput(format!(
            "test sequence {} has {} images, model expects {n}",
            crate::training::describe(s),
            s.len()
        )));
    }
    let scored: Vec<Result<Option<Prediction>>> = sequences
        .par_iter()
        .map(|s| {
            let mut images = Vec::with_capacity(n);
            for r in &s.records {
                match skip_or_fail(loader.load(r), || r.image_path.display().to_string())? {
                    Some(img) => images.push((*img).clone()),
                    None => return Ok(None),
                }
            }
            Ok(Some(Prediction::for_record(s.last(), predict_sequence(ckpt, &images, decode)?)))
        })
        .collect();
    let preds = scored.into_iter().filter_map(Result::transpose).collect::<Result<Vec<_>>>()?;
    finish("model", ckpt, decode, preds, start, sequences.iter().map(|s| s.camera_id.as_str()).collect())
}

/// Predicts each sequence's last temperature as the one before it.
pub fn baseline_persistence(sequences: &[SequenceSample]) -> Result<EvalReport> {
    let start = Instant::now();
    let preds = sequences
        .iter()
        .map(|s| {
            if s.len() < 2 {
                return Err(Error::InvalidInput(format!("sequence {} is too short", crate::training::describe(s))));
            }
            Ok(Prediction::for_record(s.last(), s.records[s.len() - 2].temperature_c))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = EvalReport::from_predictions("persistence", preds)?;
    report.duration_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Predicts the per-camera mean training temperature. Cameras without
/// training data fall back to the overall training mean.
pub fn baseline_climatology(train: &[ImageRecord], test: &[ImageRecord]) -> Result<EvalReport> {
    let start = Instant::now();
    if train.is_empty() {
        return Err(Error::InvalidInput("climatology needs training records".into()));
    }
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in train {
        let e = sums.entry(&r.camera_id).or_default();
        e.0 += r.temperature_c;
        e.1 += 1;
    }
    let overall = train.iter().map(|r| r.temperature_c).sum::<f64>() / train.len() as f64;
    let preds = test
        .iter()
        .map(|r| {
            let mean = match sums.get(r.camera_id.as_str()) {
                Some(&(s, n)) => s / n as f64,
                None => {
                    warn!("camera '{}' has no training records; using the overall mean", r.camera_id);
                    overall
                }
            };
            Prediction::for_record(r, mean)
        })
        .collect();
    let mut report = EvalReport::from_predictions("climatology", preds)?;
    report.duration_s = start.elapsed().as_secs_f64();
    Ok(report)
}
