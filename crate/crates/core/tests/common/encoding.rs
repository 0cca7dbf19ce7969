use skytemp::encoding::{DecodeMode, Encoding, TemperatureScale};

pub const SIGMAS: [f64; 4] = [0.5, 3.5, 4.0, 10.0];

/// Gaussian bump written out directly, normalized over the class range.
pub fn lde_oracle(index: usize, classes: usize, sigma: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..classes)
        .map(|j| {
            let d = j as f64 - index as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Every integer temperature through encode → argmax decode, both encodings,
/// every σ. Returns the failures.
pub fn round_trip_failures() -> Vec<String> {
    let scale = TemperatureScale::default();
    let mut failures = Vec::new();
    for t in -20..=49 {
        let t = f64::from(t);
        for enc in [Encoding::OneHot, Encoding::Lde] {
            for sigma in SIGMAS {
                let label = scale.encode(t, enc, sigma).unwrap();
                let back = scale.decode(&label, DecodeMode::Argmax).unwrap();
                if back != t {
                    failures.push(format!("{enc:?} σ={sigma}: {t} decoded as {back}"));
                }
            }
        }
    }
    failures
}

/// Largest |Σ label − 1| over all temperatures and σ.
pub fn worst_lde_sum_error() -> f64 {
    let scale = TemperatureScale::default();
    let mut worst: f64 = 0.0;
    for t in -20..=49 {
        for sigma in SIGMAS {
            let label = scale.encode_lde(f64::from(t), sigma).unwrap();
            worst = worst.max((label.sum() - 1.0).abs());
        }
    }
    worst
}

/// Largest deviation of LDE from the closed-form bump over all temperatures
/// and σ.
pub fn worst_lde_oracle_error() -> f64 {
    let scale = TemperatureScale::default();
    let mut worst: f64 = 0.0;
    for t in -20..=49 {
        for sigma in SIGMAS {
            let label = scale.encode_lde(f64::from(t), sigma).unwrap();
            let oracle = lde_oracle((t + 20) as usize, 70, sigma);
            for (a, b) in label.as_slice().iter().zip(&oracle) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// Max-norm distance between LDE(σ) and one-hot, worst case over all
/// temperatures.
pub fn distance_to_one_hot(sigma: f64) -> f64 {
    let scale = TemperatureScale::default();
    let mut worst: f64 = 0.0;
    for t in -20..=49 {
        let lde = scale.encode_lde(f64::from(t), sigma).unwrap();
        let hot = scale.encode_one_hot(f64::from(t)).unwrap();
        for (a, b) in lde.as_slice().iter().zip(hot.as_slice()) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Distances for a shrinking σ ladder; convergence means they decrease to 0.
pub fn one_hot_convergence() -> Vec<(f64, f64)> {
    [2.0, 1.0, 0.5, 0.25, 0.1, 0.05, 0.01]
        .into_iter()
        .map(|s| (s, distance_to_one_hot(s)))
        .collect()
}
