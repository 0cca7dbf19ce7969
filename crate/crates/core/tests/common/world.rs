//! Small synthetic worlds written to temporary directories.

use std::path::Path;

use skytemp::dataset::{load_manifest, select_slots, split_sequence, synth_generate, ImageRecord, SequenceSample, SynthConfig};
use skytemp::training::{Task, TrainConfig};

/// Narrow network on 16×16 inputs, fast enough for many epochs.
pub fn tiny_config(task: Task) -> TrainConfig {
    TrainConfig {
        input_size: 16,
        filters: [4, 8],
        dense_width: 32,
        lstm_hidden: 16,
        epochs: 2,
        batch_size: 8,
        seed: 11,
        ..TrainConfig::for_task(task)
    }
}

pub fn generate(dir: &Path, config: SynthConfig) -> Vec<ImageRecord> {
    let out = synth_generate(&config, dir).unwrap();
    load_manifest(out.manifest_path).unwrap().records
}

/// One camera, one slot, `days` days of 16×16 frames.
pub fn small_world(dir: &Path, days: usize, seed: u64) -> Vec<ImageRecord> {
    generate(
        dir,
        SynthConfig {
            num_cameras: 1,
            days,
            slots: vec![11],
            image_size: 16,
            seed,
            ..SynthConfig::default()
        },
    )
}

/// Slots 10..=12 for `cameras` cameras; sequences split with slot 11 held out.
pub fn sequence_world(dir: &Path, cameras: usize, days: usize, n: usize) -> (Vec<ImageRecord>, Vec<SequenceSample>, Vec<SequenceSample>) {
    let records = generate(
        dir,
        SynthConfig {
            num_cameras: cameras,
            days,
            slots: vec![10, 11, 12],
            image_size: 16,
            seed: 5,
            ..SynthConfig::default()
        },
    );
    let picks = select_slots(&records, &[10, 11, 12], 90).unwrap();
    let split = split_sequence(&picks, n, 11).unwrap();
    (records, split.train, split.test)
}
