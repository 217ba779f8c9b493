use std::f64::consts::PI;

use crate::glimpse::Location;
use crate::kernel::Rng;

/// Log-density of the uniform initial location on `[-1, 1]²`.
pub const UNIFORM_LOG_DENSITY: f64 = -std::f64::consts::LN_2 * 2.0;

/// One attended location of one Monte Carlo copy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationRecord {
    pub frame: usize,
    pub step: usize,
    /// Policy mean; `None` for the uniformly drawn first location of a frame.
    pub mean: Option<Location>,
    /// Draw before clamping.
    pub raw: [f64; 2],
    /// Clamped location actually attended.
    pub location: Location,
    pub log_density: f64,
}

impl LocationRecord {
    pub fn is_policy(&self) -> bool {
        self.mean.is_some()
    }
}

pub fn gaussian_log_density(raw: [f64; 2], mean: Location, variance: f64) -> f64 {
    let d0 = raw[0] - mean.row;
    let d1 = raw[1] - mean.col;
    -(2.0 * PI * variance).ln() - (d0 * d0 + d1 * d1) / (2.0 * variance)
}

/// `∂ log N(raw; mean, σ²I) / ∂ mean`.
pub fn gaussian_score(raw: [f64; 2], mean: Location, variance: f64) -> [f64; 2] {
    [(raw[0] - mean.row) / variance, (raw[1] - mean.col) / variance]
}

/// One term of the score-function estimate of `∇_mean E[R]`:
/// `(R − b) ∇_mean log N(raw; mean, σ²I)`.
pub fn reinforce_term(raw: [f64; 2], mean: Location, variance: f64, advantage: f64) -> [f64; 2] {
    let s = gaussian_score(raw, mean, variance);
    [advantage * s[0], advantage * s[1]]
}

/// Two independent draws around `mean`, clamped to the frame; the density
/// is evaluated at the unclamped draw.
pub fn sample_location(mean: Location, variance: f64, rng: &mut Rng) -> (Location, [f64; 2], f64) {
    let sd = variance.sqrt();
    let raw = [mean.row + sd * rng.normal(), mean.col + sd * rng.normal()];
    let location = Location {
        row: raw[0],
        col: raw[1],
    }
    .clamped();
    (location, raw, gaussian_log_density(raw, mean, variance))
}

pub fn initial_location(rng: &mut Rng) -> Location {
    Location {
        row: rng.uniform(-1.0, 1.0),
        col: rng.uniform(-1.0, 1.0),
    }
}
