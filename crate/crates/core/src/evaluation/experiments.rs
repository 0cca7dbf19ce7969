use std::collections::HashSet;
use std::fs;
use std::path::Path;

use log::info;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{baseline_climatology, baseline_persistence, eval_sequence, rmse, EvalReport};
use crate::dataset::{
    select_slots, split_sequence, ImageLoader, ImageRecord, Region, SequenceSample, SkyMask, DEFAULT_MAX_DEVIATION_MIN,
    SLOT_HOURS, TEST_SLOT,
};
use crate::encoding::DecodeMode;
use crate::error::{Error, Result};
use crate::training::{train_sequence, Checkpoint, EpochStats, TrainConfig};

/// Data protocol shared by the sequence experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOptions {
    /// Slots picked from the manifest.
    pub hours: Vec<u32>,
    pub test_slot: u32,
    pub max_deviation_min: u32,
    /// Seeded subsample of the pooled training sequences.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub decode: DecodeMode,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            hours: SLOT_HOURS.collect(),
            test_slot: TEST_SLOT,
            max_deviation_min: DEFAULT_MAX_DEVIATION_MIN,
            train_limit: None,
            test_limit: None,
            decode: DecodeMode::Argmax,
        }
    }
}

/// A trained model scored next to both baselines on the same test set.
#[derive(Debug, Clone)]
pub struct SequenceExperiment {
    pub checkpoint: Checkpoint,
    pub model: EvalReport,
    pub persistence: EvalReport,
    pub climatology: EvalReport,
    pub train_sequences: usize,
    pub test_sequences: Vec<SequenceSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub setting: String,
    pub model_rmse: f64,
    pub persistence_rmse: f64,
    pub climatology_rmse: f64,
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub report: EvalReport,
}

impl SweepRow {
    fn new(setting: String, e: SequenceExperiment) -> Self {
        Self {
            setting,
            model_rmse: e.model.average_rmse,
            persistence_rmse: e.persistence.average_rmse,
            climatology_rmse: e.climatology.average_rmse,
            train_sequences: e.train_sequences,
            test_sequences: e.test_sequences.len(),
            report: e.model,
        }
    }
}

fn subsample<T: Clone>(items: Vec<T>, limit: Option<usize>, seed: u64) -> Vec<T> {
    match limit {
        Some(k) if k < items.len() => {
            let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), items.len(), k).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| items[i].clone()).collect()
        }
        _ => items,
    }
}

/// Leakage-safe sequence data for one held-out slot.
#[derive(Debug, Clone)]
pub struct SequenceData {
    pub train: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
    /// Slot-aligned training records for the climatology baseline.
    pub climate: Vec<ImageRecord>,
}

/// Slot alignment and split for sequences of length `n`. The test set is
/// slot `test_slot`; training pools every other slot of every camera. Both
/// sides are subsampled with `seed` when the options carry limits.
pub fn sequence_data(
    records: &[ImageRecord],
    n: usize,
    options: &ExperimentOptions,
    test_slot: u32,
    seed: u64,
) -> Result<SequenceData> {
    let mut hours = options.hours.clone();
    if !hours.contains(&test_slot) {
        hours.push(test_slot);
    }
    let picks = select_slots(records, &hours, options.max_deviation_min)?;
    let split = split_sequence(&picks, n, test_slot)?;
    if split.train.is_empty() {
        return Err(Error::Data(format!("no training sequences outside slot {test_slot}")));
    }
    if split.test.is_empty() {
        return Err(Error::Data(format!("no test sequences at slot {test_slot}")));
    }
    let held_out: HashSet<&Path> = picks
        .iter()
        .filter(|p| p.hour == test_slot)
        .map(|p| p.record.image_path.as_path())
        .collect();
    let climate = picks
        .iter()
        .filter(|p| p.hour != test_slot && !held_out.contains(p.record.image_path.as_path()))
        .map(|p| p.record.clone())
        .collect();
    Ok(SequenceData {
        train: subsample(split.train, options.train_limit, seed),
        test: subsample(split.test, options.test_limit, seed ^ 0x5eed),
        climate,
    })
}

/// Persistence and climatology scored on the same test sequences.
pub fn sequence_baselines(data: &SequenceData) -> Result<(EvalReport, EvalReport)> {
    let persistence = baseline_persistence(&data.test)?;
    let last: Vec<ImageRecord> = data.test.iter().map(|s| s.last().clone()).collect();
    let climatology = baseline_climatology(&data.climate, &last)?;
    Ok((persistence, climatology))
}

/// Split, training and scoring of one configuration.
pub fn run_sequence_experiment(
    config: &TrainConfig,
    records: &[ImageRecord],
    loader: &ImageLoader,
    options: &ExperimentOptions,
    test_slot: u32,
    sink: &mut dyn FnMut(&EpochStats),
) -> Result<SequenceExperiment> {
    let data = sequence_data(records, config.sequence_length, options, test_slot, config.seed)?;
    info!(
        "n={} slot {test_slot}: {} training and {} test sequences",
        config.sequence_length,
        data.train.len(),
        data.test.len()
    );
    let checkpoint = train_sequence(config, &data.train, loader, sink)?;
    let model = eval_sequence(&checkpoint, &data.test, loader, options.decode)?;
    let (persistence, climatology) = sequence_baselines(&data)?;
    Ok(SequenceExperiment {
        checkpoint,
        model,
        persistence,
        climatology,
        train_sequences: data.train.len(),
        test_sequences: data.test,
    })
}

fn log_epoch(label: String) -> impl FnMut(&EpochStats) {
    move |s| info!("[{label}] {}", s.csv_line())
}

/// One train+eval cycle per sequence length, seeds held fixed.
pub fn sweep_sequence_length(
    config: &TrainConfig,
    records: &[ImageRecord],
    loader: &ImageLoader,
    lengths: &[usize],
    options: &ExperimentOptions,
) -> Result<Vec<SweepRow>> {
    lengths
        .iter()
        .map(|&n| {
            let cfg = TrainConfig {
                sequence_length: n,
                ..config.clone()
            };
            let e = run_sequence_experiment(&cfg, records, loader, options, options.test_slot, &mut log_epoch(format!("n={n}")))?;
            Ok(SweepRow::new(n.to_string(), e))
        })
        .collect()
}

/// For each hour: test on that slot, train on all others.
pub fn sweep_hours(
    config: &TrainConfig,
    records: &[ImageRecord],
    loader: &ImageLoader,
    hours: &[u32],
    options: &ExperimentOptions,
) -> Result<Vec<SweepRow>> {
    hours
        .iter()
        .map(|&h| {
            let e = run_sequence_experiment(config, records, loader, options, h, &mut log_epoch(format!("hour={h}")))?;
            Ok(SweepRow::new(h.to_string(), e))
        })
        .collect()
}

/// Sky crop, ground crop and entire frame, each resized to the input size.
pub fn compare_regions(
    config: &TrainConfig,
    records: &[ImageRecord],
    masks: &[SkyMask],
    options: &ExperimentOptions,
) -> Result<Vec<SweepRow>> {
    let have: HashSet<&str> = masks.iter().map(|m| m.camera_id.as_str()).collect();
    if let Some(r) = records.iter().find(|r| !have.contains(r.camera_id.as_str())) {
        return Err(Error::Data(format!("no sky mask for camera '{}'", r.camera_id)));
    }
    Region::ALL
        .iter()
        .map(|&region| {
            let cfg = TrainConfig {
                region,
                ..config.clone()
            };
            let loader = ImageLoader::with_region(cfg.input_size, region, masks.to_vec());
            let e = run_sequence_experiment(&cfg, records, &loader, options, options.test_slot, &mut log_epoch(region.to_string()))?;
            Ok(SweepRow::new(region.to_string(), e))
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::from("setting,model_rmse,persistence_rmse,climatology_rmse,train_sequences,test_sequences\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.setting, r.model_rmse, r.persistence_rmse, r.climatology_rmse, r.train_sequences, r.test_sequences
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub date: String,
    pub truth_c: f64,
    pub prediction_c: f64,
}

/// Truth and forecast for one camera's sequences, one row per forecast day.
pub fn export_curve(
    ckpt: &Checkpoint,
    camera_id: &str,
    sequences: &[SequenceSample],
    loader: &ImageLoader,
    decode: DecodeMode,
) -> Result<(Vec<CurveRow>, EvalReport)> {
    let mine: Vec<SequenceSample> = sequences.iter().filter(|s| s.camera_id == camera_id).cloned().collect();
    if mine.is_empty() {
        return Err(Error::InvalidInput(format!("camera '{camera_id}' has no sequences")));
    }
    let report = eval_sequence(ckpt, &mine, loader, decode)?;
    let mut rows: Vec<CurveRow> = report
        .predictions
        .iter()
        .map(|p| CurveRow {
            // timestamps are written as %Y-%m-%dT..., the local date comes first
            date: p.timestamp[..10].to_string(),
            truth_c: p.truth_c,
            prediction_c: p.prediction_c,
        })
        .collect();
    rows.sort_by(|a, b| a.date.cmp(&b.date));
    let (pred, truth): (Vec<f64>, Vec<f64>) = rows.iter().map(|r| (r.prediction_c, r.truth_c)).unzip();
    debug_assert!((rmse(&pred, &truth)? - report.average_rmse).abs() < 1e-9);
    Ok((rows, report))
}

pub fn write_curve_csv(rows: &[CurveRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}
