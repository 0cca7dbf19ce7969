//! Procedural webcam worlds with known temperatures.
//!
//! Each camera sees a fixed scene split into three horizontal bands:
//! sky above a wavy skyline, a mid band of camera-specific texture, and a
//! ground band. The ground colour drifts from green to red with temperature
//! at constant intensity and whitens below 0 °C. In [`CueMode::Full`] the sky
//! also brightens with insolation; in [`CueMode::GroundOnly`] it is random.

use std::f64::consts::PI;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use chrono::{Days, Duration, FixedOffset, NaiveDate, NaiveTime, TimeZone};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::manifest::{sort_records, write_manifest, ImageRecord};
use super::region::{mask_path, SkyMask};
use crate::error::{Error, Result};
use crate::nn::Tensor;

const DAYS_PER_YEAR: f64 = 365.0;
const DIURNAL_AMPLITUDE: f64 = 3.0;
const GROUND_BAND_START: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CueMode {
    #[default]
    Full,
    /// Only the ground band depends on temperature.
    GroundOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_cameras: usize,
    pub days: usize,
    pub slots: Vec<u32>,
    pub image_size: usize,
    /// Day-to-day weather noise (°C), shared by all slots of a day.
    pub noise_sd: f64,
    pub seed: u64,
    pub start_date: NaiveDate,
    pub utc_offset_minutes: i32,
    pub cues: CueMode,
    /// Per-pixel Gaussian noise added to every rendered frame.
    pub image_noise_sd: f64,
    /// Optional per-slot override of `image_noise_sd`, aligned with `slots`.
    pub slot_image_noise_sd: Option<Vec<f64>>,
    pub amplitude_range: (f64, f64),
    pub base_range: (f64, f64),
    /// Capture times are uniformly jittered by up to this many minutes.
    pub jitter_minutes: u32,
    /// Probability that a capture is missing.
    pub drop_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_cameras: 2,
            days: 730,
            slots: (8..=17).collect(),
            image_size: 32,
            noise_sd: 2.0,
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2013, 1, 1).expect("valid date"),
            utc_offset_minutes: 0,
            cues: CueMode::Full,
            image_noise_sd: 0.02,
            slot_image_noise_sd: None,
            amplitude_range: (8.0, 14.0),
            base_range: (5.0, 15.0),
            jitter_minutes: 20,
            drop_rate: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.num_cameras == 0 || self.days == 0 || self.slots.is_empty() {
            return bad("synthetic world needs cameras, days and slots".into());
        }
        if self.image_size < 8 {
            return bad(format!("image size {} is below 8", self.image_size));
        }
        if let Some(h) = self.slots.iter().find(|&&h| h > 23) {
            return bad(format!("slot hour {h} is not a clock hour"));
        }
        let mut sorted = self.slots.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.slots.len() {
            return bad("slots must be distinct".into());
        }
        if !(self.noise_sd >= 0.0) || !(self.image_noise_sd >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if let Some(v) = &self.slot_image_noise_sd {
            if v.len() != self.slots.len() || v.iter().any(|s| !(*s >= 0.0)) {
                return bad("per-slot image noise must give one non-negative value per slot".into());
            }
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return bad(format!("drop rate {} outside [0, 1)", self.drop_rate));
        }
        for (name, (lo, hi)) in [("amplitude", self.amplitude_range), ("base", self.base_range)] {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return bad(format!("{name} range ({lo}, {hi}) is empty"));
            }
        }
        if self.jitter_minutes >= 60 {
            return bad("jitter must stay below an hour".into());
        }
        FixedOffset::east_opt(self.utc_offset_minutes * 60)
            .ok_or_else(|| Error::InvalidParameter(format!("bad UTC offset {} min", self.utc_offset_minutes)))?;
        Ok(())
    }

    fn image_noise_for(&self, slot_index: usize) -> f64 {
        self.slot_image_noise_sd
            .as_ref()
            .map_or(self.image_noise_sd, |v| v[slot_index])
    }
}

/// Hidden parameters of one synthetic camera.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCamera {
    pub id: String,
    pub amplitude: f64,
    pub base: f64,
    /// Day index (from the start date) of the seasonal maximum.
    pub peak_day: u32,
    /// Skyline row per column, as a fraction of the image height.
    skyline: Vec<f64>,
    texture: Vec<[f64; 3]>,
    texture_size: usize,
    ground_tint: f64,
}

/// Ambient offset of slot `hour` relative to the daily mean (zero at 9:00).
pub fn diurnal_offset(hour: u32) -> f64 {
    DIURNAL_AMPLITUDE * (PI * (hour as f64 - 9.0) / 12.0).sin()
}

/// Rows of an image that belong to the ground band.
pub fn ground_band_rows(image_size: usize) -> Range<usize> {
    (GROUND_BAND_START * image_size as f64).round() as usize..image_size
}

impl SynthCamera {
    fn generate(index: usize, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| if lo == hi { lo } else { rng.random_range(lo..hi) };
        let amplitude = uniform(rng, cfg.amplitude_range);
        let base = uniform(rng, cfg.base_range);
        let peak_day = rng.random_range(0..DAYS_PER_YEAR as u32);
        let waves = rng.random_range(1.0..3.0);
        let phase = rng.random_range(0.0..2.0 * PI);
        let level = rng.random_range(0.3..0.4);
        let s = cfg.image_size;
        let skyline = (0..s)
            .map(|x| level + 0.07 * (2.0 * PI * waves * x as f64 / s as f64 + phase).sin())
            .collect();
        let tint = [rng.random_range(0.2..0.7), rng.random_range(0.2..0.7), rng.random_range(0.2..0.7)];
        let texture = (0..s * s)
            .map(|_| {
                let v: f64 = rng.random_range(-0.15..0.15);
                tint.map(|t| (t + v).clamp(0.0, 1.0))
            })
            .collect();
        Self {
            id: format!("cam{index:02}"),
            amplitude,
            base,
            peak_day,
            skyline,
            texture,
            texture_size: s,
            ground_tint: rng.random_range(0.15..0.3),
        }
    }

    /// Seasonal signal A·sin(2πd/365 + φ) + B with φ placing the peak on `peak_day`.
    pub fn seasonal(&self, day: f64) -> f64 {
        let phi = PI / 2.0 - 2.0 * PI * self.peak_day as f64 / DAYS_PER_YEAR;
        self.amplitude * (2.0 * PI * day / DAYS_PER_YEAR + phi).sin() + self.base
    }

    fn skyline_row(&self, col: usize, size: usize) -> usize {
        let x = col * self.texture_size / size;
        (self.skyline[x] * size as f64).round() as usize
    }

    pub fn sky_mask(&self, size: usize) -> SkyMask {
        SkyMask::from_fn(self.id.clone(), size, size, |r, c| r < self.skyline_row(c, size))
            .expect("non-empty mask")
    }

    /// Renders one frame as a `[3, S, S]` tensor in [0, 1].
    #[allow(clippy::too_many_arguments)]
    fn render(&self, size: usize, temp: f64, day: usize, hour: u32, cues: CueMode, noise_sd: f64, rng: &mut ChaCha8Rng) -> Tensor<f32> {
        let brightness = match cues {
            CueMode::Full => {
                let season = (self.seasonal(day as f64) - self.base) / self.amplitude.max(1e-9);
                let daylight = (PI * (hour as f64 - 5.0) / 14.0).sin().max(0.0);
                0.3 + 0.6 * daylight * (0.6 + 0.4 * season)
            }
            CueMode::GroundOnly => rng.random_range(0.3..0.9),
        };
        let sky = [0.45 * brightness, 0.65 * brightness, brightness];

        let u = ((temp + 20.0) / 70.0).clamp(0.0, 1.0);
        let snow = if temp < 0.0 { 0.5 + (-temp / 8.0).min(0.5) } else { 0.0 };
        let ground = [0.1 + 0.8 * u, 0.9 - 0.8 * u, self.ground_tint].map(|v| v * (1.0 - 0.4 * snow) + 0.55 * snow);

        let ground_rows = ground_band_rows(size);
        let noise = Normal::new(0.0, noise_sd.max(f64::MIN_POSITIVE)).expect("finite sd");
        let mut data = vec![0f32; 3 * size * size];
        for r in 0..size {
            for c in 0..size {
                let px = if r < self.skyline_row(c, size) {
                    sky
                } else if ground_rows.contains(&r) {
                    ground
                } else {
                    let t = self.texture_size;
                    self.texture[(r * t / size) * t + c * t / size]
                };
                for (ch, v) in px.iter().enumerate() {
                    let v = if noise_sd > 0.0 { v + noise.sample(rng) } else { *v };
                    data[ch * size * size + r * size + c] = v.clamp(0.0, 1.0) as f32;
                }
            }
        }
        Tensor::from_vec(&[3, size, size], data).expect("consistent shape")
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest_path: PathBuf,
    pub mask_dir: PathBuf,
    pub records: Vec<ImageRecord>,
    pub cameras: Vec<SynthCamera>,
}

/// Writes `cameras/<id>/<yyyy-mm-dd>T<hh>.png`, `masks/<id>.mask.png` and
/// `manifest.csv` under `out_dir`. Output depends only on the config.
pub fn synth_generate(config: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<SynthOutput> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    let mask_dir = out_dir.join("masks");
    fs::create_dir_all(&mask_dir)?;
    let offset = FixedOffset::east_opt(config.utc_offset_minutes * 60).expect("validated");

    let per_camera: Vec<Result<(SynthCamera, Vec<ImageRecord>)>> = (0..config.num_cameras)
        .into_par_iter()
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(index as u64);
            let camera = SynthCamera::generate(index, config, &mut rng);
            camera.sky_mask(config.image_size).save(mask_path(&mask_dir, &camera.id))?;
            let cam_dir = out_dir.join("cameras").join(&camera.id);
            fs::create_dir_all(&cam_dir)?;
            let weather = Normal::new(0.0, config.noise_sd.max(f64::MIN_POSITIVE)).expect("finite sd");
            let mut records = Vec::with_capacity(config.days * config.slots.len());
            for day in 0..config.days {
                let anomaly = if config.noise_sd > 0.0 { weather.sample(&mut rng) } else { 0.0 };
                let date = config.start_date + Days::new(day as u64);
                for (si, &hour) in config.slots.iter().enumerate() {
                    let jitter = if config.jitter_minutes > 0 {
                        let j = config.jitter_minutes as i64;
                        rng.random_range(-j..=j)
                    } else {
                        0
                    };
                    let dropped = config.drop_rate > 0.0 && rng.random::<f64>() < config.drop_rate;
                    let temp = camera.seasonal(day as f64) + diurnal_offset(hour) + anomaly;
                    let image = camera.render(
                        config.image_size,
                        temp,
                        day,
                        hour,
                        config.cues,
                        config.image_noise_for(si),
                        &mut rng,
                    );
                    if dropped {
                        continue;
                    }
                    let local = date.and_time(NaiveTime::from_hms_opt(hour, 0, 0).expect("hour < 24"))
                        + Duration::minutes(jitter);
                    let timestamp = offset
                        .from_local_datetime(&local)
                        .single()
                        .expect("fixed offsets are unambiguous");
                    let path = cam_dir.join(format!("{}T{hour:02}.png", date.format("%Y-%m-%d")));
                    super::image_io::write_rgb(&path, &image)?;
                    records.push(ImageRecord::new(camera.id.clone(), timestamp, path, temp)?);
                }
            }
            Ok((camera, records))
        })
        .collect();

    let mut cameras = Vec::new();
    let mut records = Vec::new();
    for r in per_camera {
        let (cam, recs) = r?;
        cameras.push(cam);
        records.extend(recs);
    }
    sort_records(&mut records);
    let manifest_path = out_dir.join("manifest.csv");
    write_manifest(&manifest_path, &records)?;
    Ok(SynthOutput {
        manifest_path,
        mask_dir,
        records,
        cameras,
    })
}
