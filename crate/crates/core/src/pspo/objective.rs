//! Clipped surrogate over sequence-level importance ratios, and the critic
//! regression loss.

/// Log-ratio above which the importance ratio is clamped.
pub const MAX_LOG_RATIO: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceRatio {
    pub value: f64,
    /// True when `new - old` exceeded [`MAX_LOG_RATIO`]; the ratio is then a
    /// constant and carries no gradient.
    pub clamped: bool,
}

/// `exp(new - old)`, i.e. the product of per-token ratios.
pub fn sequence_ratio(new_logprob: f64, old_logprob: f64) -> SequenceRatio {
    let d = new_logprob - old_logprob;
    if d > MAX_LOG_RATIO {
        SequenceRatio {
            value: MAX_LOG_RATIO.exp(),
            clamped: true,
        }
    } else {
        SequenceRatio {
            value: d.exp(),
            clamped: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorLoss {
    pub loss: f64,
    /// `∂loss/∂w_t` for each ratio.
    pub grad_ratio: Vec<f64>,
    /// `∂loss/∂kl_t` for each KL estimate.
    pub grad_kl: f64,
    /// Fraction of entries whose clipped branch is active (zero gradient).
    pub clip_fraction: f64,
}

impl ActorLoss {
    /// `∂loss/∂new_logprob_t` for `w_t = exp(new_t - old_t)` and
    /// `kl_t = old_t - new_t`.
    pub fn grad_logprob(&self, ratios: &[f64]) -> Vec<f64> {
        self.grad_ratio
            .iter()
            .zip(ratios)
            .map(|(g, w)| g * w - self.grad_kl)
            .collect()
    }
}

/// Whether the clipped branch of the surrogate is the active minimum, which
/// makes the term constant in `w`.
pub fn clip_active(ratio: f64, advantage: f64, eps_low: f64, eps_high: f64) -> bool {
    (advantage > 0.0 && ratio > 1.0 + eps_high) || (advantage < 0.0 && ratio < 1.0 - eps_low)
}

/// `-mean_t min(w Â, clip(w, 1-ε_low, 1+ε_high) Â) + kl_coef · mean(kl)`.
pub fn actor_loss(
    ratios: &[f64],
    advantages: &[f64],
    eps_low: f64,
    eps_high: f64,
    kl_coef: f64,
    kl_estimates: &[f64],
) -> ActorLoss {
    assert_eq!(
        ratios.len(),
        advantages.len(),
        "ratios and advantages must align"
    );
    let n = ratios.len();
    if n == 0 {
        return ActorLoss {
            loss: 0.0,
            grad_ratio: Vec::new(),
            grad_kl: 0.0,
            clip_fraction: 0.0,
        };
    }
    let inv_n = 1.0 / n as f64;
    let mut surrogate = 0.0;
    let mut clipped = 0usize;
    let mut grad_ratio = Vec::with_capacity(n);
    for (&w, &a) in ratios.iter().zip(advantages) {
        let unclipped = w * a;
        let bounded = w.clamp(1.0 - eps_low, 1.0 + eps_high) * a;
        surrogate += unclipped.min(bounded);
        if clip_active(w, a, eps_low, eps_high) {
            clipped += 1;
            grad_ratio.push(0.0);
        } else {
            grad_ratio.push(-a * inv_n);
        }
    }
    let kl_mean = if kl_estimates.is_empty() {
        0.0
    } else {
        kl_estimates.iter().sum::<f64>() / kl_estimates.len() as f64
    };
    ActorLoss {
        loss: -surrogate * inv_n + kl_coef * kl_mean,
        grad_ratio,
        grad_kl: if kl_estimates.is_empty() {
            0.0
        } else {
            kl_coef / kl_estimates.len() as f64
        },
        clip_fraction: clipped as f64 * inv_n,
    }
}

/// Mean squared error and its gradient with respect to each value.
pub fn critic_loss(values: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(values.len(), targets.len(), "values and targets must align");
    if values.is_empty() {
        return (0.0, Vec::new());
    }
    let n = values.len() as f64;
    let loss = values
        .iter()
        .zip(targets)
        .map(|(v, r)| (v - r).powi(2))
        .sum::<f64>()
        / n;
    let grad = values
        .iter()
        .zip(targets)
        .map(|(v, r)| 2.0 * (v - r) / n)
        .collect();
    (loss, grad)
}
