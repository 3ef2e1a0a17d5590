//! Laplace sampling and the truncated integer noise vector that drives
//! fake-record generation.

use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("laplace scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("epsilon must be positive, got {0}")]
    BadEpsilon(f64),
    #[error("delta must lie in [0, 1), got {0}")]
    BadDelta(f64),
    #[error("k must be at least 1")]
    BadK,
    #[error("database size must be at least 2, got {0}")]
    BadN(u64),
}

/// Per-query privacy parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self, NoiseError> {
        if !(epsilon > 0.0) {
            return Err(NoiseError::BadEpsilon(epsilon));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(NoiseError::BadDelta(delta));
        }
        Ok(PrivacyParams { epsilon, delta })
    }

    pub fn pure(epsilon: f64) -> Result<Self, NoiseError> {
        Self::new(epsilon, 0.0)
    }
}

/// Integer noise vector X[1..k] for fake-record padding.
///
/// Drawn i.i.d. from Lap(2/epsilon); if any draw exceeds `10 ln(n)/epsilon`
/// in magnitude the whole vector collapses to zero (`truncated` set), then
/// every entry is rounded up to an integer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseVector {
    pub values: Vec<i64>,
    pub truncated: bool,
}

impl NoiseVector {
    /// All-zero vector used by the zero-noise debug mode.
    pub fn zeros(k: usize) -> Self {
        NoiseVector { values: vec![0; k], truncated: false }
    }

    pub fn sum(&self) -> i64 {
        self.values.iter().sum()
    }
}

/// Magnitude bound `10 ln(n) / epsilon` on pre-rounding draws. Natural log:
/// the tail bound Pr[|Y| >= t b] <= e^{-t} behind the 1/n^2 failure
/// probability is calibrated in base e.
pub fn truncation_bound(n: u64, epsilon: f64) -> f64 {
    10.0 * (n as f64).ln() / epsilon
}

/// Padding constant C = ceil(10 ln(n)/epsilon): fake records per type, and
/// the amount subtracted from each counter at the end.
pub fn padding_constant(n: u64, epsilon: f64) -> u64 {
    truncation_bound(n, epsilon).ceil() as u64
}

fn laplace_inverse_cdf(scale: f64, u: f64) -> f64 {
    // u uniform in (0,1); centered at 0.
    let centered = u - 0.5;
    -scale * centered.signum() * (1.0 - 2.0 * centered.abs()).ln()
}

/// Draws one sample with density (1/2b) exp(-|x|/b), b = `scale`.
///
/// Inverse-CDF from one uniform double, replayable from the randomness tape.
/// Not hardened against floating-point attacks (no snapping).
pub fn sample_laplace(scale: f64, rng: &mut impl Rng) -> Result<f64, NoiseError> {
    if !(scale > 0.0) {
        return Err(NoiseError::NonPositiveScale(scale));
    }
    let mut u: f64 = rng.random();
    while u == 0.0 || u == 1.0 {
        u = rng.random();
    }
    Ok(laplace_inverse_cdf(scale, u))
}

/// Applies the truncation-then-ceiling rule to raw Lap(2/epsilon) draws.
///
/// Split out so tests can force a tape with a draw exactly at the bound.
pub fn truncate_and_round(draws: &[f64], bound: f64) -> NoiseVector {
    if draws.iter().any(|x| x.abs() > bound) {
        return NoiseVector { values: vec![0; draws.len()], truncated: true };
    }
    NoiseVector { values: draws.iter().map(|x| x.ceil() as i64).collect(), truncated: false }
}

/// Draws the k-entry truncated, ceiled Lap(2/epsilon) noise vector.
pub fn truncated_noise_vector(
    k: usize,
    epsilon: f64,
    n: u64,
    rng: &mut impl Rng,
) -> Result<NoiseVector, NoiseError> {
    if k == 0 {
        return Err(NoiseError::BadK);
    }
    if n < 2 {
        return Err(NoiseError::BadN(n));
    }
    if !(epsilon > 0.0) {
        return Err(NoiseError::BadEpsilon(epsilon));
    }
    let scale = 2.0 / epsilon;
    let draws: Vec<f64> =
        (0..k).map(|_| sample_laplace(scale, rng)).collect::<Result<_, _>>()?;
    Ok(truncate_and_round(&draws, truncation_bound(n, epsilon)))
}
