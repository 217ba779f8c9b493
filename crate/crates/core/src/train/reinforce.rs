use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::glimpse::Location;
use crate::kernel::Rng;
use crate::model::{reinforce_term, sample_location};

/// Exponential moving average of the batch reward; reads as 0 when disabled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBaseline {
    pub enabled: bool,
    pub decay: f64,
    pub value: f64,
}

impl RewardBaseline {
    pub fn new(enabled: bool, decay: f64) -> Self {
        RewardBaseline {
            enabled,
            decay,
            value: 0.0,
        }
    }

    pub fn current(&self) -> f64 {
        if self.enabled { self.value } else { 0.0 }
    }

    pub fn update(&mut self, mean_reward: f64) {
        if self.enabled {
            self.value = self.decay * self.value + (1.0 - self.decay) * mean_reward;
        }
    }
}

/// Three-armed bandit over the location policy: the attended row coordinate
/// falls in `(-∞, -a)`, `[-a, a)` or `[a, ∞)` and each arm pays a fixed reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanditSurrogate {
    pub mean: Location,
    pub variance: f64,
    /// `a`; must lie in `(0, 1)` so clamping never changes the arm.
    pub threshold: f64,
    pub rewards: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanditEstimate {
    pub episodes: usize,
    pub estimate: [f64; 2],
    pub std_error: [f64; 2],
    pub analytic: [f64; 2],
}

impl BanditEstimate {
    /// Largest `|estimate − analytic| / std_error` over both coordinates.
    pub fn max_z(&self) -> f64 {
        (0..2)
            .map(|i| (self.estimate[i] - self.analytic[i]).abs() / self.std_error[i].max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }
}

impl BanditSurrogate {
    pub fn arm(&self, l: Location) -> usize {
        if l.row < -self.threshold {
            0
        } else if l.row < self.threshold {
            1
        } else {
            2
        }
    }

    /// `∂ E[R] / ∂ mean` in closed form: each arm's probability is a
    /// difference of normal CDFs in the row coordinate, whose derivative in
    /// the mean is a difference of densities.
    pub fn analytic_gradient(&self) -> [f64; 2] {
        let sd = self.variance.sqrt();
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
        let lo = phi((-self.threshold - self.mean.row) / sd) / sd;
        let hi = phi((self.threshold - self.mean.row) / sd) / sd;
        let [r0, r1, r2] = self.rewards;
        [-lo * r0 + (lo - hi) * r1 + hi * r2, 0.0]
    }

    /// Mean and standard error of the single-draw score-function estimator
    /// with a constant `baseline`, over `episodes` independent episodes.
    pub fn estimate(&self, episodes: usize, baseline: f64, seed: u64) -> BanditEstimate {
        let mut rng = Rng::new(seed);
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..episodes {
            let (l, raw, _) = sample_location(self.mean, self.variance, &mut rng);
            let reward = self.rewards[self.arm(l)];
            let g = reinforce_term(raw, self.mean, self.variance, reward - baseline);
            for i in 0..2 {
                sum[i] += g[i];
                sq[i] += g[i] * g[i];
            }
        }
        let n = episodes as f64;
        let estimate = sum.map(|s| s / n);
        let std_error = [0, 1].map(|i| ((sq[i] / n - estimate[i] * estimate[i]).max(0.0) / (n - 1.0)).sqrt());
        BanditEstimate {
            episodes,
            estimate,
            std_error,
            analytic: self.analytic_gradient(),
        }
    }
}

/// The surrogate used by the acceptance suite.
pub fn default_bandit() -> BanditSurrogate {
    BanditSurrogate {
        mean: Location { row: 0.2, col: -0.3 },
        variance: 0.22,
        threshold: 0.4,
        rewards: [0.0, 0.3, 1.0],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_moving_average() {
        let mut b = RewardBaseline::new(true, 0.9);
        b.update(1.0);
        assert!((b.current() - 0.1).abs() < 1e-15);
        b.update(1.0);
        assert!((b.current() - 0.19).abs() < 1e-15);
        let mut off = RewardBaseline::new(false, 0.9);
        off.update(1.0);
        assert_eq!(off.current(), 0.0);
    }

    #[test]
    fn analytic_gradient_matches_finite_difference_of_arm_probabilities() {
        // arm probabilities by direct numerical integration of the density on a
        // grid fixed in x, so the step edges do not move between the two means
        let bandit = default_bandit();
        let expected = |mu: f64| {
            let n = 400_000;
            let (lo, hi) = (-6.0, 6.0);
            let dx = (hi - lo) / n as f64;
            (0..n)
                .map(|i| {
                    let x = lo + (i as f64 + 0.5) * dx;
                    let arm = bandit.arm(Location { row: x, col: 0.0 });
                    let dens = (-(x - mu).powi(2) / (2.0 * bandit.variance)).exp() / (2.0 * PI * bandit.variance).sqrt();
                    bandit.rewards[arm] * dens * dx
                })
                .sum::<f64>()
        };
        let h = 1e-3;
        let fd = (expected(bandit.mean.row + h) - expected(bandit.mean.row - h)) / (2.0 * h);
        assert!((fd - bandit.analytic_gradient()[0]).abs() < 1e-4);
    }

    #[test]
    fn estimator_is_unbiased_with_and_without_baseline() {
        let bandit = default_bandit();
        for (b, seed) in [(0.0, 1), (0.5, 2)] {
            let e = bandit.estimate(10_000, b, seed);
            assert!(e.max_z() < 3.0, "{e:?}");
        }
    }

    #[test]
    fn zero_reward_gives_zero_estimate() {
        let bandit = BanditSurrogate {
            rewards: [0.0; 3],
            ..default_bandit()
        };
        let e = bandit.estimate(100, 0.0, 3);
        assert_eq!(e.estimate, [0.0, 0.0]);
    }
}
