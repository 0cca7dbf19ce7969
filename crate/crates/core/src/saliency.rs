//! Block variation maps: how much each image block's colour varies across days.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::write_gray;
use crate::error::{Error, Result};
use crate::nn::{Scalar, Tensor};

pub const DEFAULT_BLOCK_SIZE: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationMap {
    pub rows: usize,
    pub cols: usize,
    pub block_size: usize,
    /// Row-major per-block ρ (mean over channels of the population std).
    pub rho: Vec<f64>,
    /// ρ min-max scaled to [0, 255]; all zero when every ρ is equal.
    pub rho_hat: Vec<f64>,
}

impl VariationMap {
    pub fn rho_at(&self, row: usize, col: usize) -> f64 {
        self.rho[row * self.cols + col]
    }

    pub fn rho_hat_at(&self, row: usize, col: usize) -> f64 {
        self.rho_hat[row * self.cols + col]
    }

    /// ρ̂ rounded half away from zero to 8 bits.
    pub fn levels(&self) -> Vec<u8> {
        self.rho_hat.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
    }
}

/// Population standard deviation, two-pass around the first sample so a
/// constant series gives exactly zero.
fn population_std(values: &[f64]) -> f64 {
    let pivot = values[0];
    let n = values.len() as f64;
    let mean = values.iter().map(|v| v - pivot).sum::<f64>() / n;
    let var = values.iter().map(|v| (v - pivot - mean).powi(2)).sum::<f64>() / n;
    var.sqrt()
}

/// Per-block cross-day standard deviation of `[C, H, W]` images taken by one
/// camera. Each channel's deviation pools every pixel of the block over all
/// days, so spatial texture inside a block contributes as well. Pixels beyond
/// the last whole block (right and bottom) are ignored.
pub fn block_variation_map<T: Scalar>(images: &[Tensor<T>], block_size: usize) -> Result<VariationMap> {
    if images.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 images, got {}", images.len())));
    }
    if block_size == 0 {
        return Err(Error::InvalidParameter("block size must be positive".into()));
    }
    let shape = images[0].shape();
    let &[c, h, w] = shape else {
        return Err(Error::Shape(format!("expected [C, H, W] images, got {shape:?}")));
    };
    if let Some(other) = images.iter().find(|i| i.shape() != shape) {
        return Err(Error::Shape(format!("image {:?} differs from {shape:?}", other.shape())));
    }
    let (rows, cols) = (h / block_size, w / block_size);
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidInput(format!("{h}x{w} images hold no {block_size}x{block_size} block")));
    }

    let rho: Vec<f64> = (0..rows * cols)
        .into_par_iter()
        .map(|b| {
            let (br, bc) = (b / cols, b % cols);
            let mut samples = Vec::with_capacity(block_size * block_size * images.len());
            let mut total = 0.0;
            for ch in 0..c {
                samples.clear();
                for img in images {
                    let d = img.data();
                    for r in br * block_size..(br + 1) * block_size {
                        let row = ch * h * w + r * w;
                        samples.extend(d[row + bc * block_size..row + (bc + 1) * block_size].iter().map(|v| v.to_f64()));
                    }
                }
                total += population_std(&samples);
            }
            total / c as f64
        })
        .collect();

    let min = rho.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = rho.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let rho_hat = if max > min {
        rho.iter().map(|r| (r - min) / (max - min) * 255.0).collect()
    } else {
        vec![0.0; rho.len()]
    };
    Ok(VariationMap {
        rows,
        cols,
        block_size,
        rho,
        rho_hat,
    })
}

/// Grayscale image with every block painted at its rounded ρ̂; PNG or PGM
/// by extension.
pub fn render_map(map: &VariationMap, path: impl AsRef<Path>) -> Result<()> {
    let b = map.block_size;
    let (h, w) = (map.rows * b, map.cols * b);
    let levels = map.levels();
    let pixels = (0..h * w).map(|i| levels[(i / w / b) * map.cols + (i % w) / b]).collect();
    write_gray(path, w, h, pixels)
}
