use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::image_io::{read_gray, write_gray};
use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Sky,
    Ground,
    #[default]
    Entire,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Sky, Region::Ground, Region::Entire];
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sky" => Ok(Region::Sky),
            "ground" => Ok(Region::Ground),
            "entire" => Ok(Region::Entire),
            other => Err(Error::InvalidParameter(format!("unknown region '{other}'"))),
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Sky => "sky",
            Region::Ground => "ground",
            Region::Entire => "entire",
        })
    }
}

/// Half-open pixel rectangle `[top, bottom) × [left, right)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl BoundingBox {
    pub fn height(&self) -> usize {
        self.bottom - self.top
    }

    pub fn width(&self) -> usize {
        self.right - self.left
    }
}

/// Binary sky labelling of one camera's frames (`true` = sky).
#[derive(Debug, Clone, PartialEq)]
pub struct SkyMask {
    pub camera_id: String,
    width: usize,
    height: usize,
    sky: Vec<bool>,
}

pub fn mask_path(dir: impl AsRef<Path>, camera_id: &str) -> PathBuf {
    dir.as_ref().join(format!("{camera_id}.mask.png"))
}

impl SkyMask {
    pub fn new(camera_id: impl Into<String>, width: usize, height: usize, sky: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || sky.len() != width * height {
            return Err(Error::Shape(format!(
                "mask of {} pixels does not match {width}x{height}",
                sky.len()
            )));
        }
        Ok(Self {
            camera_id: camera_id.into(),
            width,
            height,
            sky,
        })
    }

    pub fn from_fn(camera_id: impl Into<String>, width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let sky = (0..height).flat_map(|r| (0..width).map(move |c| (r, c))).map(|(r, c)| f(r, c)).collect();
        Self::new(camera_id, width, height, sky)
    }

    /// Single-channel image; any nonzero pixel is sky.
    pub fn load(path: impl AsRef<Path>, camera_id: impl Into<String>) -> Result<Self> {
        let img = read_gray(path)?;
        let sky = img.pixels().map(|p| p[0] != 0).collect();
        Self::new(camera_id, img.width() as usize, img.height() as usize, sky)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let pixels = self.sky.iter().map(|&s| if s { 255 } else { 0 }).collect();
        write_gray(path, self.width, self.height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_sky(&self, row: usize, col: usize) -> bool {
        self.sky[row * self.width + col]
    }

    /// Minimal box around the region's pixels. `Entire` is the full frame.
    pub fn bounding_box(&self, region: Region) -> Result<BoundingBox> {
        let want = match region {
            Region::Entire => {
                return Ok(BoundingBox {
                    top: 0,
                    left: 0,
                    bottom: self.height,
                    right: self.width,
                })
            }
            Region::Sky => true,
            Region::Ground => false,
        };
        let mut bbox: Option<BoundingBox> = None;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.is_sky(r, c) != want {
                    continue;
                }
                let b = bbox.get_or_insert(BoundingBox {
                    top: r,
                    left: c,
                    bottom: r + 1,
                    right: c + 1,
                });
                b.left = b.left.min(c);
                b.right = b.right.max(c + 1);
                b.bottom = r + 1;
            }
        }
        bbox.ok_or_else(|| Error::EmptyRegion(format!("camera '{}' mask has no {region} pixels", self.camera_id)))
    }
}

pub fn crop<T: Scalar>(image: &Tensor<T>, bbox: BoundingBox) -> Result<Tensor<T>> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::Shape(format!("expected [C, H, W], got {:?}", image.shape())));
    };
    if bbox.bottom > h || bbox.right > w || bbox.height() == 0 || bbox.width() == 0 {
        return Err(Error::Shape(format!("box {bbox:?} does not fit a {h}x{w} image")));
    }
    let d = image.data();
    let mut out = Vec::with_capacity(c * bbox.height() * bbox.width());
    for ch in 0..c {
        for r in bbox.top..bbox.bottom {
            let row = ch * h * w + r * w;
            out.extend_from_slice(&d[row + bbox.left..row + bbox.right]);
        }
    }
    Tensor::from_vec(&[c, bbox.height(), bbox.width()], out)
}

/// The raw bounding-box rectangle of the sky or ground region, which may
/// include pixels of the other region.
pub fn crop_region<T: Scalar>(image: &Tensor<T>, mask: &SkyMask, region: Region) -> Result<Tensor<T>> {
    let dims = &image.shape()[1..];
    if dims != [mask.height, mask.width] {
        return Err(Error::Shape(format!(
            "image is {dims:?} but the mask of camera '{}' is [{}, {}]",
            mask.camera_id, mask.height, mask.width
        )));
    }
    crop(image, mask.bounding_box(region)?)
}
