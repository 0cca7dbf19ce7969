//! Temperature ↔ class index ↔ label vector conversions.
//!
//! Temperatures are discretized into `num_classes` bins of `step` °C starting at
//! `min_degree`. Labels are either one-hot vectors or Local Distribution
//! Encoding (LDE) vectors: a normalized Gaussian bump centred on the true class.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform 1-D discretization of the temperature axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemperatureScale {
    min_degree: i32,
    num_classes: usize,
    step: u32,
}

impl Default for TemperatureScale {
    /// −20 °C … 49 °C in 1 °C bins (70 classes).
    fn default() -> Self {
        Self {
            min_degree: -20,
            num_classes: 70,
            step: 1,
        }
    }
}

impl TemperatureScale {
    pub fn new(min_degree: i32, num_classes: usize, step: u32) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidParameter(format!(
                "temperature scale needs at least 2 classes, got {num_classes}"
            )));
        }
        if step == 0 {
            return Err(Error::InvalidParameter("temperature step must be positive".into()));
        }
        Ok(Self {
            min_degree,
            num_classes,
            step,
        })
    }

    pub fn min_degree(&self) -> i32 {
        self.min_degree
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    pub fn max_degree(&self) -> f64 {
        self.degree(self.num_classes - 1)
    }

    /// Temperature represented by class `index`.
    pub fn degree(&self, index: usize) -> f64 {
        f64::from(self.min_degree) + index as f64 * f64::from(self.step)
    }

    /// Clamps to the representable range, warning when the input was outside it.
    pub fn clamp(&self, temp_c: f64) -> f64 {
        let lo = f64::from(self.min_degree);
        let hi = self.max_degree();
        if temp_c < lo || temp_c > hi {
            log::warn!("temperature {temp_c} °C outside [{lo}, {hi}], clamping");
        }
        temp_c.clamp(lo, hi)
    }

    /// Class index of a temperature: nearest bin after clamping, halves rounded away from zero.
    pub fn temp_to_index(&self, temp_c: f64) -> Result<usize> {
        if !temp_c.is_finite() {
            return Err(Error::InvalidInput(format!("temperature {temp_c} is not finite")));
        }
        let offset = (self.clamp(temp_c) - f64::from(self.min_degree)) / f64::from(self.step);
        let index = offset.round() as usize;
        Ok(index.min(self.num_classes - 1))
    }

    pub fn encode_one_hot(&self, temp_c: f64) -> Result<LabelVector> {
        let index = self.temp_to_index(temp_c)?;
        let mut values = vec![0.0; self.num_classes];
        values[index] = 1.0;
        Ok(LabelVector { values })
    }

    /// Normalized Gaussian bump of width `sigma` (in classes) around the true class.
    pub fn encode_lde(&self, temp_c: f64, sigma: f64) -> Result<LabelVector> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("LDE sigma must be positive, got {sigma}")));
        }
        let center = self.temp_to_index(temp_c)? as f64;
        let denom = 2.0 * sigma * sigma;
        let mut values: Vec<f64> = (0..self.num_classes)
            .map(|j| {
                let d = j as f64 - center;
                (-(d * d) / denom).exp()
            })
            .collect();
        let total: f64 = values.iter().sum();
        values.iter_mut().for_each(|v| *v /= total);
        Ok(LabelVector { values })
    }

    pub fn encode(&self, temp_c: f64, encoding: Encoding, sigma: f64) -> Result<LabelVector> {
        match encoding {
            Encoding::OneHot => self.encode_one_hot(temp_c),
            Encoding::Lde => self.encode_lde(temp_c, sigma),
        }
    }

    /// Converts a label (or predicted probability) vector back to °C.
    pub fn decode(&self, label: &LabelVector, mode: DecodeMode) -> Result<f64> {
        self.decode_slice(label.as_slice(), mode)
    }

    pub fn decode_slice(&self, values: &[f64], mode: DecodeMode) -> Result<f64> {
        if values.len() != self.num_classes {
            return Err(Error::shape(format!(
                "label has {} entries, scale has {} classes",
                values.len(),
                self.num_classes
            )));
        }
        let total: f64 = values.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("cannot decode an all-zero label vector".into()));
        }
        match mode {
            DecodeMode::Argmax => Ok(self.degree(argmax(values))),
            DecodeMode::Expectation => {
                let weighted: f64 = values
                    .iter()
                    .enumerate()
                    .map(|(j, v)| v * self.degree(j))
                    .sum();
                Ok(weighted / total)
            }
        }
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A distribution over temperature classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector {
    values: Vec<f64>,
}

impl LabelVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!(
                "label entries must be finite and non-negative, found {bad}"
            )));
        }
        Ok(Self { values })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    OneHot,
    Lde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecodeMode {
    #[default]
    Argmax,
    Expectation,
}

impl FromStr for Encoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-hot" | "one_hot" | "onehot" => Ok(Encoding::OneHot),
            "lde" => Ok(Encoding::Lde),
            other => Err(Error::InvalidParameter(format!("unknown encoding '{other}'"))),
        }
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Encoding::OneHot => "one-hot",
            Encoding::Lde => "lde",
        })
    }
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(DecodeMode::Argmax),
            "expectation" => Ok(DecodeMode::Expectation),
            other => Err(Error::InvalidParameter(format!("unknown decode mode '{other}'"))),
        }
    }
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecodeMode::Argmax => "argmax",
            DecodeMode::Expectation => "expectation",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scale() -> TemperatureScale {
        TemperatureScale::default()
    }

    #[test]
    fn scale_bounds() {
        let s = scale();
        assert_eq!(s.max_degree(), 49.0);
        assert!(TemperatureScale::new(0, 1, 1).is_err());
        assert!(TemperatureScale::new(0, 5, 0).is_err());
    }

    #[test]
    fn index_examples() {
        let s = scale();
        assert_eq!(s.temp_to_index(-18.0).unwrap(), 2);
        assert_eq!(s.temp_to_index(-20.0).unwrap(), 0);
        assert_eq!(s.temp_to_index(49.0).unwrap(), 69);
        assert_eq!(s.temp_to_index(0.4).unwrap(), 20);
        assert_eq!(s.temp_to_index(0.5).unwrap(), 21);
        assert!(matches!(s.temp_to_index(f64::NAN), Err(Error::InvalidInput(_))));
        assert!(s.temp_to_index(f64::INFINITY).is_err());
    }

    #[test]
    fn out_of_range_clamps() {
        let s = scale();
        assert_eq!(s.temp_to_index(-35.0).unwrap(), 0);
        assert_eq!(s.temp_to_index(42.0).unwrap(), 62);
        assert_eq!(s.temp_to_index(80.0).unwrap(), 69);
    }

    #[test]
    fn one_hot_examples() {
        let s = scale();
        let y = s.encode_one_hot(-18.0).unwrap();
        assert_eq!(y.len(), 70);
        assert_eq!(y.as_slice()[2], 1.0);
        assert_eq!(y.sum(), 1.0);
        assert_eq!(s.encode_one_hot(-20.0).unwrap().as_slice()[0], 1.0);
        assert_eq!(s.encode_one_hot(0.0).unwrap().argmax(), 20);
    }

    #[test]
    fn lde_shape() {
        let s = scale();
        let y = s.encode_lde(10.0, 3.5).unwrap();
        let i = s.temp_to_index(10.0).unwrap();
        assert_eq!(y.argmax(), i);
        for k in 1..20 {
            assert!((y.as_slice()[i + k] - y.as_slice()[i - k]).abs() < 1e-15);
        }
        assert!((y.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lde_neighbour_ratio() {
        // Independent evaluation of the unnormalized Gaussian at offsets 0 and 1.
        let sigma: f64 = 3.5;
        let g0 = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let g1 = g0 * (-1.0 / (2.0 * sigma * sigma)).exp();
        let expected = g0 / g1;
        assert!((expected - 1.0417).abs() < 1e-4);

        let s = scale();
        let y = s.encode_lde(5.0, sigma).unwrap();
        let i = s.temp_to_index(5.0).unwrap();
        let v = y.as_slice();
        assert!((v[i] / v[i + 1] - expected).abs() < 1e-12);
        assert!((v[i] / v[i - 1] - expected).abs() < 1e-12);
    }

    #[test]
    fn lde_rejects_bad_sigma() {
        let s = scale();
        assert!(matches!(s.encode_lde(0.0, 0.0), Err(Error::InvalidParameter(_))));
        assert!(s.encode_lde(0.0, -1.0).is_err());
        assert!(s.encode_lde(0.0, f64::NAN).is_err());
    }

    #[test]
    fn decode_examples() {
        let s = scale();
        let y = s.encode_one_hot(-18.0).unwrap();
        assert_eq!(s.decode(&y, DecodeMode::Argmax).unwrap(), -18.0);
        assert_eq!(s.decode(&y, DecodeMode::Expectation).unwrap(), -18.0);

        let lde = s.encode_lde(15.0, 3.5).unwrap();
        let a = s.decode(&lde, DecodeMode::Argmax).unwrap();
        let e = s.decode(&lde, DecodeMode::Expectation).unwrap();
        assert!((a - e).abs() < 1e-9, "{a} vs {e}");

        // Mean of −20..=49 is (−20 + 49) / 2.
        let uniform = LabelVector::new(vec![1.0 / 70.0; 70]).unwrap();
        assert!((s.decode(&uniform, DecodeMode::Expectation).unwrap() - 14.5).abs() < 1e-9);
        // Ties go to the lowest index.
        assert_eq!(s.decode(&uniform, DecodeMode::Argmax).unwrap(), -20.0);

        let zero = LabelVector::new(vec![0.0; 70]).unwrap();
        assert!(matches!(s.decode(&zero, DecodeMode::Argmax), Err(Error::InvalidInput(_))));
        let short = LabelVector::new(vec![1.0; 3]).unwrap();
        assert!(matches!(s.decode(&short, DecodeMode::Argmax), Err(Error::Shape(_))));
    }

    #[test]
    fn label_vector_validation() {
        assert!(LabelVector::new(vec![0.5, -0.1]).is_err());
        assert!(LabelVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!("one-hot".parse::<Encoding>().unwrap(), Encoding::OneHot);
        assert_eq!("lde".parse::<Encoding>().unwrap(), Encoding::Lde);
        assert!("gauss".parse::<Encoding>().is_err());
        assert_eq!("expectation".parse::<DecodeMode>().unwrap(), DecodeMode::Expectation);
    }
}
