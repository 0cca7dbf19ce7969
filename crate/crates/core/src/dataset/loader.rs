use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use rayon::prelude::*;

use super::image_io::{read_image, resize_bilinear};
use super::manifest::ImageRecord;
use super::region::{crop_region, mask_path, Region, SkyMask};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Decodes, crops and resizes record images to the model input size,
/// caching the result per path.
#[derive(Debug)]
pub struct ImageLoader {
    input_size: usize,
    region: Region,
    masks: HashMap<String, SkyMask>,
    cache: RwLock<HashMap<PathBuf, Arc<Tensor<f32>>>>,
}

impl ImageLoader {
    pub fn new(input_size: usize) -> Self {
        Self {
            input_size,
            region: Region::Entire,
            masks: HashMap::new(),
            cache: RwLock::new(HashMap::new()),
        }
    }

    /// Loader that crops to `region` using one mask per camera.
    pub fn with_region(input_size: usize, region: Region, masks: Vec<SkyMask>) -> Self {
        Self {
            masks: masks.into_iter().map(|m| (m.camera_id.clone(), m)).collect(),
            region,
            ..Self::new(input_size)
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn load(&self, record: &ImageRecord) -> Result<Arc<Tensor<f32>>> {
        if let Some(t) = self.cache.read().expect("cache lock").get(&record.image_path) {
            return Ok(Arc::clone(t));
        }
        let mut img = read_image(&record.image_path)?;
        if self.region != Region::Entire {
            let mask = self.masks.get(&record.camera_id).ok_or_else(|| {
                Error::Data(format!("no sky mask for camera '{}'", record.camera_id))
            })?;
            img = crop_region(&img, mask, self.region)?;
        }
        let img = Arc::new(resize_bilinear(&img, self.input_size, self.input_size)?);
        self.cache
            .write()
            .expect("cache lock")
            .insert(record.image_path.clone(), Arc::clone(&img));
        Ok(img)
    }

    /// Decodes in parallel; results are in input order.
    pub fn load_many(&self, records: &[&ImageRecord]) -> Vec<Result<Arc<Tensor<f32>>>> {
        records.par_iter().map(|r| self.load(r)).collect()
    }

    /// Seeds the cache, e.g. with in-memory images.
    pub fn insert(&self, path: impl Into<PathBuf>, image: Tensor<f32>) {
        self.cache.write().expect("cache lock").insert(path.into(), Arc::new(image));
    }
}

/// Loads `<dir>/<camera_id>.mask.png` for every camera.
pub fn load_masks(dir: impl AsRef<Path>, cameras: &[&str]) -> Result<Vec<SkyMask>> {
    cameras
        .iter()
        .map(|&cam| {
            let path = mask_path(&dir, cam);
            if !path.exists() {
                return Err(Error::Data(format!("missing sky mask for camera '{cam}' ({})", path.display())));
            }
            SkyMask::load(path, cam)
        })
        .collect()
}
