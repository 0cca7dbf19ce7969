//! Manifests, hour-slot alignment, consecutive-day sequences, leakage-safe
//! splits, sky/ground cropping and the synthetic scene generator.

mod image_io;
mod loader;
mod manifest;
mod region;
mod slots;
pub mod synth;

pub use image_io::{read_gray, read_image, resize_bilinear, rgb_to_tensor, tensor_to_rgb, write_gray, write_rgb};
pub use loader::{load_masks, ImageLoader};
pub use manifest::{format_timestamp, load_manifest, parse_timestamp, write_manifest, ImageRecord, Manifest, MANIFEST_COLUMNS};
pub use region::{crop, crop_region, mask_path, BoundingBox, Region, SkyMask};
pub use slots::{
    build_sequences, select_hour_slot, select_slots, slot_deviation_min, split_sequence, split_single_image,
    HourSlotPick, SequenceSample, SequenceSplit, DEFAULT_MAX_DEVIATION_MIN, SLOT_HOURS, TEST_SLOT,
};
pub use synth::{synth_generate, CueMode, SynthCamera, SynthConfig, SynthOutput};
