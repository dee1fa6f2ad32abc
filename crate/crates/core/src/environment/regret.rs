use serde::{Deserialize, Serialize};

/// Cumulative regret path R_t = Σ_{s≤t} (max_i μ_i − μ_pulled).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretLedger {
    cumulative: Vec<f64>,
}

impl RegretLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, pulled_mean: f64, means: &[f64]) {
        let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.push_increment((best - pulled_mean).max(0.0));
    }

    pub fn push_increment(&mut self, inc: f64) {
        let prev = self.cumulative.last().copied().unwrap_or(0.0);
        self.cumulative.push(prev + inc);
    }

    pub fn rounds(&self) -> usize {
        self.cumulative.len()
    }

    /// R_t for 1 ≤ t ≤ rounds.
    pub fn cumulative(&self, t: usize) -> f64 {
        self.cumulative[t - 1]
    }

    /// R_t / t.
    pub fn average(&self, t: usize) -> f64 {
        self.cumulative(t) / t as f64
    }

    pub fn path(&self) -> &[f64] {
        &self.cumulative
    }
}

/// Regret proxy against the best fixed arm in hindsight: R_t is that arm's
/// cumulative reward over the first t rounds minus the policy's. Returns
/// the path and the chosen arm.
pub fn fixed_arm_regret(per_arm_rewards: &[Vec<f64>], realized: &[f64]) -> (Vec<f64>, usize) {
    let best = per_arm_rewards
        .iter()
        .enumerate()
        .map(|(i, r)| (i, r.iter().sum::<f64>()))
        .fold((0, f64::NEG_INFINITY), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc });
    let mut path = Vec::with_capacity(realized.len());
    let mut acc = 0.0;
    for (s, y) in realized.iter().enumerate() {
        acc += per_arm_rewards[best.0][s] - y;
        path.push(acc);
    }
    (path, best.0)
}
