//! Scalar Gaussian primitives and the moment correction for a Gaussian
//! conditioned on lying inside an interval.
//!
//! Everything here works on standardized coordinates internally. Bounds may be
//! infinite; the limits `±∞·φ(±∞) = 0` are applied exactly instead of relying
//! on large sentinel values.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};
use libm::erfc;
use thiserror::Error;

/// Windows carrying less probability mass than this are rejected.
pub const MASS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum StatsError {
    #[error("variance must be positive and finite, got {0}")]
    InvalidVariance(f64),
    #[error("invalid truncation window [{lower}, {upper}]")]
    InvalidWindow { lower: f64, upper: f64 },
    #[error("truncation window holds probability mass {mass:e}, below the floor {MASS_FLOOR:e}")]
    DegenerateWindow { mass: f64 },
}

/// Closed interval `[lower, upper]`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationWindow {
    lower: f64,
    upper: f64,
}

impl TruncationWindow {
    pub fn new(lower: f64, upper: f64) -> Result<Self, StatsError> {
        let valid = !lower.is_nan()
            && !upper.is_nan()
            && lower < upper
            && lower != f64::INFINITY
            && upper != f64::NEG_INFINITY;
        if valid {
            Ok(Self { lower, upper })
        } else {
            Err(StatsError::InvalidWindow { lower, upper })
        }
    }

    /// `[-half_width, half_width]`.
    pub fn symmetric(half_width: f64) -> Result<Self, StatsError> {
        Self::new(-half_width, half_width)
    }

    pub fn unbounded() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn is_finite(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite()
    }
}

/// Moment correction of a truncated Gaussian: the truncated mean is
/// `mu + mean_shift` and the truncated variance is `(1 - variance_factor) * var`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedMoments {
    pub mean_shift: f64,
    pub variance_factor: f64,
}

impl TruncatedMoments {
    pub const NONE: Self = Self {
        mean_shift: 0.0,
        variance_factor: 0.0,
    };
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        return 0.0;
    }
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Upper tail probability `P(Z > z)` of the standard normal.
///
/// Evaluated through `erfc` so small tail values keep full relative precision.
pub fn normal_tail(z: f64) -> f64 {
    if z == f64::INFINITY {
        0.0
    } else if z == f64::NEG_INFINITY {
        1.0
    } else {
        0.5 * erfc(z * FRAC_1_SQRT_2)
    }
}

/// `P(a <= Z <= b)` for the standard normal, picking the tail on the side of
/// the window so that neither subtraction cancels catastrophically.
fn standard_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        normal_tail(a) - normal_tail(b)
    } else if b <= 0.0 {
        normal_tail(-b) - normal_tail(-a)
    } else {
        1.0 - normal_tail(-a) - normal_tail(b)
    }
}

// z * phi(z) with the limit at infinity.
fn z_pdf(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        z * normal_pdf(z)
    }
}

/// Mean shift and variance reduction factor of `N(mu, var)` restricted to
/// `window`.
pub fn truncated_moments(
    mu: f64,
    var: f64,
    window: TruncationWindow,
) -> Result<TruncatedMoments, StatsError> {
    if !(var > 0.0 && var.is_finite()) {
        return Err(StatsError::InvalidVariance(var));
    }
    let sigma = var.sqrt();
    let a = (window.lower - mu) / sigma;
    let b = (window.upper - mu) / sigma;

    let mass = standard_mass(a, b);
    if !(mass >= MASS_FLOOR) {
        return Err(StatsError::DegenerateWindow { mass });
    }
    let ratio = (normal_pdf(a) - normal_pdf(b)) / mass;
    let variance_factor = ratio * ratio - (z_pdf(a) - z_pdf(b)) / mass;
    Ok(TruncatedMoments {
        mean_shift: ratio * sigma,
        variance_factor,
    })
}
