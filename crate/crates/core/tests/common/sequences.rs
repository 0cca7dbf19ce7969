//! Random capture logs and brute-force oracles for slot alignment and
//! sequence building.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::PathBuf;

use chrono::{Duration, FixedOffset, NaiveDate, TimeZone};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skytemp::dataset::{build_sequences, select_hour_slot, select_slots, split_sequence, HourSlotPick, ImageRecord};

pub const MAX_DEV: u32 = 90;
const OFFSETS_MIN: [i32; 3] = [0, -300, 120];

/// (camera, day, hour, minute, second) captures turned into records with
/// unique paths. Cameras sit in different time zones.
pub fn records_from(captures: &[(usize, i64, u32, u32, u32)]) -> Vec<ImageRecord> {
    let start = NaiveDate::from_ymd_opt(2020, 2, 20).unwrap();
    captures
        .iter()
        .enumerate()
        .map(|(i, &(cam, day, hour, minute, second))| {
            let tz = FixedOffset::east_opt(OFFSETS_MIN[cam] * 60).unwrap();
            let local = (start + Duration::days(day)).and_hms_opt(hour, minute, second).unwrap();
            let ts = tz.from_local_datetime(&local).unwrap();
            let path = PathBuf::from(format!("cam{cam}/{day}-{hour}{minute:02}{second:02}-{i}.png"));
            ImageRecord::new(format!("cam{cam}"), ts, path, (day % 17) as f64 - 3.0 + hour as f64 * 0.1).unwrap()
        })
        .collect()
}

pub fn captures() -> impl Strategy<Value = Vec<(usize, i64, u32, u32, u32)>> {
    prop::collection::vec((0usize..3, 0i64..14, 8u32..15, 0u32..60, prop_oneof![Just(0u32), 0u32..60]), 0..260)
}

fn deviation_min(r: &ImageRecord, hour: u32) -> (NaiveDate, f64) {
    let local = r.timestamp.naive_local();
    let slot = local.date().and_hms_opt(hour, 0, 0).unwrap();
    (local.date(), (local - slot).num_seconds().abs() as f64 / 60.0)
}

/// Nearest record per (camera, local day), ties to the earlier timestamp and
/// then the smaller path; records beyond `max_dev` never qualify.
pub fn brute_force_picks(records: &[ImageRecord], hour: u32, max_dev: u32) -> BTreeMap<(String, NaiveDate), PathBuf> {
    let mut best: BTreeMap<(String, NaiveDate), (f64, &ImageRecord)> = BTreeMap::new();
    for r in records {
        let (day, dev) = deviation_min(r, hour);
        if dev > f64::from(max_dev) {
            continue;
        }
        let key = (r.camera_id.clone(), day);
        let better = match best.get(&key) {
            None => true,
            Some(&(d, b)) => (dev, r.timestamp, &r.image_path) < (d, b.timestamp, &b.image_path),
        };
        if better {
            best.insert(key, (dev, r));
        }
    }
    best.into_iter().map(|(k, (_, r))| (k, r.image_path.clone())).collect()
}

fn as_map(picks: &[HourSlotPick]) -> BTreeMap<(String, NaiveDate), PathBuf> {
    picks
        .iter()
        .map(|p| ((p.camera_id.clone(), p.day), p.record.image_path.clone()))
        .collect()
}

pub fn check_hour_slot(records: &[ImageRecord], hour: u32) -> Result<(), TestCaseError> {
    let picks = select_hour_slot(records, hour, MAX_DEV).unwrap();
    prop_assert_eq!(picks.len(), as_map(&picks).len(), "one pick per camera-day");
    prop_assert_eq!(as_map(&picks), brute_force_picks(records, hour, MAX_DEV));
    for p in &picks {
        prop_assert_eq!(p.hour, hour);
        prop_assert!(p.deviation_min <= f64::from(MAX_DEV));
        prop_assert_eq!(deviation_min(&p.record, hour).1, p.deviation_min);
    }
    Ok(())
}

pub fn check_order_and_idempotence(records: &[ImageRecord], hour: u32, seed: u64) -> Result<(), TestCaseError> {
    let picks = select_hour_slot(records, hour, MAX_DEV).unwrap();
    let mut shuffled = records.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    prop_assert_eq!(&select_hour_slot(&shuffled, hour, MAX_DEV).unwrap(), &picks);
    let picked: Vec<ImageRecord> = picks.iter().map(|p| p.record.clone()).collect();
    prop_assert_eq!(&select_hour_slot(&picked, hour, MAX_DEV).unwrap(), &picks);
    Ok(())
}

/// Windows counted by checking every start day of every (camera, slot).
pub fn brute_force_window_count(picks: &[HourSlotPick], n: usize) -> usize {
    let mut days: BTreeMap<(&str, u32), BTreeSet<NaiveDate>> = BTreeMap::new();
    for p in picks {
        days.entry((&p.camera_id, p.hour)).or_default().insert(p.day);
    }
    days.values()
        .map(|set| {
            set.iter()
                .filter(|&&d| (1..n as i64).all(|k| set.contains(&(d + Duration::days(k)))))
                .count()
        })
        .sum()
}

pub fn check_windows(records: &[ImageRecord], hours: &[u32], n: usize) -> Result<(), TestCaseError> {
    let picks = select_slots(records, hours, MAX_DEV).unwrap();
    let seqs = build_sequences(&picks, n).unwrap();
    prop_assert_eq!(seqs.len(), brute_force_window_count(&picks, n));
    let mut seen = HashSet::new();
    for s in &seqs {
        prop_assert_eq!(s.records.len(), n);
        prop_assert_eq!(s.days.len(), n);
        prop_assert!(seen.insert((s.camera_id.clone(), s.hour, s.days[0])), "duplicate window");
        for (k, r) in s.records.iter().enumerate() {
            prop_assert_eq!(&r.camera_id, &s.camera_id, "cross-camera window");
            let (day, _) = deviation_min(r, s.hour);
            prop_assert_eq!(day, s.days[k]);
            if k > 0 {
                prop_assert_eq!(s.days[k] - s.days[k - 1], Duration::days(1), "gapped window");
            }
        }
        let pick = picks
            .iter()
            .find(|p| p.camera_id == s.camera_id && p.hour == s.hour && p.day == s.days[n - 1])
            .unwrap();
        prop_assert_eq!(&pick.record, s.last());
    }
    Ok(())
}

pub fn check_leakage(records: &[ImageRecord], hours: &[u32], n: usize, test_slot: u32) -> Result<(), TestCaseError> {
    let picks = select_slots(records, hours, MAX_DEV).unwrap();
    let split = split_sequence(&picks, n, test_slot).unwrap();
    let held_out: HashSet<&PathBuf> = picks
        .iter()
        .filter(|p| p.hour == test_slot)
        .map(|p| &p.record.image_path)
        .collect();
    for s in &split.train {
        prop_assert_ne!(s.hour, test_slot);
        for r in &s.records {
            prop_assert!(!held_out.contains(&r.image_path), "held-out image {:?} in training", r.image_path);
        }
    }
    let test_paths: HashSet<&PathBuf> = split.test.iter().flat_map(|s| &s.records).map(|r| &r.image_path).collect();
    let train_paths: HashSet<&PathBuf> = split.train.iter().flat_map(|s| &s.records).map(|r| &r.image_path).collect();
    prop_assert!(test_paths.is_disjoint(&train_paths));
    prop_assert!(split.test.iter().all(|s| s.hour == test_slot));
    // the exclusion removes only windows that touch a held-out image
    let others: Vec<HourSlotPick> = picks.iter().filter(|p| p.hour != test_slot).cloned().collect();
    let clean = build_sequences(&others, n)
        .unwrap()
        .into_iter()
        .filter(|s| s.records.iter().all(|r| !held_out.contains(&r.image_path)))
        .count();
    prop_assert_eq!(split.train.len(), clean);
    Ok(())
}
