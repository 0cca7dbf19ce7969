//! Central-difference gradient verification.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is (numerically) zero are judged on absolute error instead.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coordinate: Option<usize>,
    pub checked: usize,
    /// Coordinates whose ±ε probes landed in different piecewise-linear regimes.
    pub skipped_kinks: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares `analytic[c]` with `(f(θ+ε·e_c) − f(θ−ε·e_c)) / 2ε` for each `c` in `coords`.
///
/// `f` returns the scalar value and a fingerprint of its activation regime
/// (ReLU signs, pooling winners). When the fingerprints at θ+ε and θ−ε
/// differ, the difference quotient straddles a kink and the coordinate is
/// skipped; smooth functions can return a constant fingerprint.
pub fn grad_check<F>(mut f: F, params: &[f64], analytic: &[f64], coords: &[usize], eps: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<(f64, u64)>,
{
    if params.len() != analytic.len() {
        return Err(Error::Shape(format!(
            "{} parameters but {} analytic gradient entries",
            params.len(),
            analytic.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut theta = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coordinate: None,
        checked: 0,
        skipped_kinks: 0,
    };
    for &c in coords {
        if c >= theta.len() {
            return Err(Error::InvalidParameter(format!("coordinate {c} out of range")));
        }
        let orig = theta[c];
        theta[c] = orig + eps;
        let (plus, sig_plus) = f(&theta)?;
        theta[c] = orig - eps;
        let (minus, sig_minus) = f(&theta)?;
        theta[c] = orig;
        if !plus.is_finite() || !minus.is_finite() || !analytic[c].is_finite() {
            return Err(Error::Numeric(format!("non-finite value while checking coordinate {c}")));
        }
        if sig_plus != sig_minus {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(analytic[c], numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst_coordinate.is_none() {
            report.max_rel_error = err;
            report.worst_coordinate = Some(c);
        }
    }
    Ok(report)
}

/// `count` distinct coordinates out of `total`, sorted, drawn with a fixed seed.
pub fn sample_coordinates(total: usize, count: usize, seed: u64) -> Vec<usize> {
    if count >= total {
        return (0..total).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, total, count).into_vec();
    picked.sort_unstable();
    picked
}
