//! Discounted returns, running return normalization, and GAE.

/// Discounted suffix sums, `R_t = r_t + γ R_{t+1}`, `R_{T-1} = r_{T-1}`.
pub fn compute_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Generalized advantage estimates. `values` has one more entry than
/// `rewards`; the last one is the value after the final turn (0 at a
/// terminal state).
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(
        values.len(),
        rewards.len() + 1,
        "values must include the terminal value"
    );
    let mut adv = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    adv
}

/// Welford running mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    /// Sum of squared deviations from the mean.
    pub m2: f64,
}

/// Guard added to the standard deviation before dividing.
pub const NORM_EPS: f64 = 1e-8;

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Chan et al. parallel combination.
    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        let (na, nb) = (self.count as f64, other.count as f64);
        self.mean += d * nb / n;
        self.m2 += other.m2 + d * d * na * nb / n;
        self.count += other.count;
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0)
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / (self.std() + NORM_EPS)
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * (self.std() + NORM_EPS) + self.mean
    }
}

/// Folds every return into `stats`, then standardizes them with the
/// updated statistics.
pub fn normalize_returns(stats: &mut RunningStats, returns: &[f64]) -> Vec<f64> {
    for &r in returns {
        stats.push(r);
    }
    returns.iter().map(|&r| stats.normalize(r)).collect()
}
