use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skytemp::nn::Tensor;
use skytemp::saliency::{block_variation_map, VariationMap};

/// Days of `[3, h, w]` images with values in [0, 1].
pub fn stack() -> impl Strategy<Value = Vec<Tensor<f64>>> {
    (2usize..6, 5usize..17, 5usize..17).prop_flat_map(|(days, h, w)| {
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3 * h * w), days).prop_map(move |imgs| {
            imgs.into_iter()
                .map(|v| Tensor::from_vec(&[3, h, w], v).unwrap())
                .collect()
        })
    })
}

/// Plain two-pass population std over the pooled block samples, averaged
/// over channels.
pub fn two_pass_rho(images: &[Tensor<f64>], block: usize) -> Vec<f64> {
    let s = images[0].shape();
    let (h, w) = (s[1], s[2]);
    let mut out = Vec::new();
    for br in 0..h / block {
        for bc in 0..w / block {
            let mut sum_std = 0.0;
            for ch in 0..3 {
                let mut xs = Vec::new();
                for img in images {
                    for r in br * block..(br + 1) * block {
                        for c in bc * block..(bc + 1) * block {
                            xs.push(img.data()[ch * h * w + r * w + c]);
                        }
                    }
                }
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
                sum_std += var.sqrt();
            }
            out.push(sum_std / 3.0);
        }
    }
    out
}

fn map_with(images: &[Tensor<f64>], f: impl Fn(f64) -> f64) -> Vec<Tensor<f64>> {
    images
        .iter()
        .map(|t| Tensor::from_vec(t.shape(), t.data().iter().map(|&v| f(v)).collect()).unwrap())
        .collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> Result<(), TestCaseError> {
    prop_assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        prop_assert!((x - y).abs() <= tol, "{} vs {} (tol {})", x, y, tol);
    }
    Ok(())
}

pub fn check_oracle(images: &[Tensor<f64>]) -> Result<(), TestCaseError> {
    let m = block_variation_map(images, 5).unwrap();
    close(&m.rho, &two_pass_rho(images, 5), 1e-9)
}

pub fn check_shift(images: &[Tensor<f64>], shift: f64) -> Result<(), TestCaseError> {
    let a = block_variation_map(images, 5).unwrap();
    let b = block_variation_map(&map_with(images, |v| v + shift), 5).unwrap();
    close(&a.rho, &b.rho, 1e-9)?;
    hat_close(&a, &b)
}

pub fn check_scale(images: &[Tensor<f64>], s: f64) -> Result<(), TestCaseError> {
    let a = block_variation_map(images, 5).unwrap();
    let b = block_variation_map(&map_with(images, |v| v * s), 5).unwrap();
    let scaled: Vec<f64> = a.rho.iter().map(|r| r * s).collect();
    close(&b.rho, &scaled, 1e-9 * s.max(1.0))?;
    hat_close(&a, &b)
}

pub fn check_permutation(images: &[Tensor<f64>], seed: u64) -> Result<(), TestCaseError> {
    let mut shuffled = images.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let a = block_variation_map(images, 5).unwrap();
    let b = block_variation_map(&shuffled, 5).unwrap();
    close(&a.rho, &b.rho, 1e-12)?;
    hat_close(&a, &b)
}

/// ρ̂ agrees unless the map is (numerically) degenerate, where tiny
/// floating-point spreads may be stretched to the full range.
fn hat_close(a: &VariationMap, b: &VariationMap) -> Result<(), TestCaseError> {
    let spread = a.rho.iter().cloned().fold(f64::MIN, f64::max) - a.rho.iter().cloned().fold(f64::MAX, f64::min);
    if spread > 1e-6 {
        close(&a.rho_hat, &b.rho_hat, 1e-6)?;
        prop_assert_eq!(a.levels(), b.levels());
    }
    Ok(())
}

/// One block of a constant stack varies on one day; it alone reaches 255.
pub fn check_single_block(rows: usize, cols: usize, block: (usize, usize), pixel: (usize, usize, usize)) -> Result<(), TestCaseError> {
    let (h, w) = (rows * 5, cols * 5);
    let base = Tensor::<f64>::full(&[3, h, w], 0.3);
    let mut odd = base.clone();
    let (ch, dr, dc) = pixel;
    odd.data_mut()[ch * h * w + (block.0 * 5 + dr) * w + block.1 * 5 + dc] = 0.8;
    let m = block_variation_map(&[base.clone(), odd, base], 5).unwrap();
    for r in 0..rows {
        for c in 0..cols {
            let want = if (r, c) == block { 255.0 } else { 0.0 };
            prop_assert_eq!(m.rho_hat_at(r, c), want);
        }
    }
    Ok(())
}
