use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use chrono::{NaiveDate, NaiveTime};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::ImageRecord;
use crate::encoding::{Encoding, LabelVector, TemperatureScale};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_DEVIATION_MIN: u32 = 90;
pub const SLOT_HOURS: std::ops::RangeInclusive<u32> = 8..=17;
pub const TEST_SLOT: u32 = 11;

/// The record chosen to represent one camera, day and hour slot.
#[derive(Debug, Clone, PartialEq)]
pub struct HourSlotPick {
    pub camera_id: String,
    /// Calendar day in the camera's local time.
    pub day: NaiveDate,
    pub hour: u32,
    pub record: ImageRecord,
    pub deviation_min: f64,
}

/// Local-time distance in minutes between a record and its day's slot time.
pub fn slot_deviation_min(record: &ImageRecord, hour: u32) -> f64 {
    let local = record.timestamp.naive_local();
    let slot = local.date().and_time(NaiveTime::from_hms_opt(hour, 0, 0).expect("hour < 24"));
    (local - slot).num_milliseconds().abs() as f64 / 60_000.0
}

/// Picks, for every camera and local calendar day, the record nearest to
/// `hour`:00. Days whose nearest record is more than `max_deviation_min`
/// away get no pick. Ties go to the earlier timestamp.
pub fn select_hour_slot(records: &[ImageRecord], hour: u32, max_deviation_min: u32) -> Result<Vec<HourSlotPick>> {
    if hour > 23 {
        return Err(Error::InvalidParameter(format!("slot hour {hour} is not a clock hour")));
    }
    if max_deviation_min == 0 {
        return Err(Error::InvalidParameter("max deviation must be positive".into()));
    }
    let mut best: BTreeMap<(&str, NaiveDate), (f64, &ImageRecord)> = BTreeMap::new();
    for r in records {
        let dev = slot_deviation_min(r, hour);
        if dev > max_deviation_min as f64 {
            continue;
        }
        let key = (r.camera_id.as_str(), r.timestamp.naive_local().date());
        let better = match best.get(&key) {
            None => true,
            Some(&(d, cur)) => (dev, r.timestamp, &r.image_path) < (d, cur.timestamp, &cur.image_path),
        };
        if better {
            best.insert(key, (dev, r));
        }
    }
    Ok(best
        .into_iter()
        .map(|((camera, day), (dev, r))| HourSlotPick {
            camera_id: camera.to_string(),
            day,
            hour,
            record: r.clone(),
            deviation_min: dev,
        })
        .collect())
}

/// Slot picks for several hours, concatenated in the order given.
pub fn select_slots(records: &[ImageRecord], hours: &[u32], max_deviation_min: u32) -> Result<Vec<HourSlotPick>> {
    let mut out = Vec::new();
    for &h in hours {
        out.extend(select_hour_slot(records, h, max_deviation_min)?);
    }
    Ok(out)
}

/// `n` records from one camera and slot on strictly consecutive days.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub camera_id: String,
    pub hour: u32,
    pub days: Vec<NaiveDate>,
    pub records: Vec<ImageRecord>,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn temperatures(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.temperature_c).collect()
    }

    /// The record whose temperature is forecast.
    pub fn last(&self) -> &ImageRecord {
        self.records.last().expect("sequences are never empty")
    }

    /// Encoded targets t_1..t_n.
    pub fn targets(&self, scale: &TemperatureScale, encoding: Encoding, sigma: f64) -> Result<Vec<LabelVector>> {
        self.records
            .iter()
            .map(|r| scale.encode(r.temperature_c, encoding, sigma))
            .collect()
    }
}

/// All stride-1 windows of `n` consecutive days, per camera and slot.
pub fn build_sequences(picks: &[HourSlotPick], n: usize) -> Result<Vec<SequenceSample>> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("sequence length must be at least 2, got {n}")));
    }
    let mut groups: BTreeMap<(&str, u32), Vec<&HourSlotPick>> = BTreeMap::new();
    for p in picks {
        groups.entry((p.camera_id.as_str(), p.hour)).or_default().push(p);
    }
    let mut out = Vec::new();
    for ((camera, hour), mut group) in groups {
        group.sort_by_key(|p| p.day);
        if let Some(w) = group.windows(2).find(|w| w[0].day == w[1].day) {
            return Err(Error::InvalidInput(format!(
                "camera '{camera}' has two picks for slot {hour} on {}",
                w[0].day
            )));
        }
        let mut run_start = 0;
        for i in 0..group.len() {
            let breaks = i + 1 == group.len() || group[i + 1].day.signed_duration_since(group[i].day).num_days() != 1;
            if !breaks {
                continue;
            }
            let run = &group[run_start..=i];
            for window in run.windows(n) {
                out.push(SequenceSample {
                    camera_id: camera.to_string(),
                    hour,
                    days: window.iter().map(|p| p.day).collect(),
                    records: window.iter().map(|p| p.record.clone()).collect(),
                });
            }
            run_start = i + 1;
        }
    }
    Ok(out)
}

/// Seeded k-fold split; fold `fold` is the test slice of the shuffled order.
/// Both halves keep the input order.
pub fn split_single_image(
    records: &[ImageRecord],
    k: usize,
    fold: usize,
    seed: u64,
) -> Result<(Vec<ImageRecord>, Vec<ImageRecord>)> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {k}")));
    }
    if fold >= k {
        return Err(Error::InvalidParameter(format!("fold {fold} out of range for {k} folds")));
    }
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_test = vec![false; n];
    for &i in &order[fold * n / k..(fold + 1) * n / k] {
        in_test[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, t) in records.iter().zip(in_test) {
        if t {
            test.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((train, test))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceSplit {
    pub train: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
}

/// Test sequences come from `test_slot`; training sequences are pooled from
/// every other slot and camera, minus any sequence reusing a test image.
pub fn split_sequence(picks: &[HourSlotPick], n: usize, test_slot: u32) -> Result<SequenceSplit> {
    let (test_picks, train_picks): (Vec<_>, Vec<_>) = picks.iter().cloned().partition(|p| p.hour == test_slot);
    let test = build_sequences(&test_picks, n)?;
    let held_out: HashSet<&Path> = test_picks.iter().map(|p| p.record.image_path.as_path()).collect();
    let train = build_sequences(&train_picks, n)?
        .into_iter()
        .filter(|s| s.records.iter().all(|r| !held_out.contains(r.image_path.as_path())))
        .collect();
    Ok(SequenceSplit { train, test })
}
