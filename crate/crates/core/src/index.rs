//! Inverse-propensity-weighted Stein estimator of an arm's index vector.
//!
//! The accumulator keeps raw weighted sums Σ w W Wᵀ and Σ w W Y; averages
//! are formed only when an estimate is requested.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::numerics::{min_eigenvalue, Cholesky, SymMatrix};

pub const DEFAULT_LAMBDA_BETA: f64 = 2e-3;
pub const DEFAULT_P_MIN: f64 = 1e-3;

/// IPW weight for a pulled round, with the propensity clipped from below.
pub fn ipw_weight(propensity: f64, p_min: f64) -> f64 {
    1.0 / propensity.max(p_min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexAccumulator {
    arm: usize,
    sum_gram: SymMatrix,
    sum_moment: Vec<f64>,
    t: usize,
    pulls: usize,
}

impl IndexAccumulator {
    pub fn new(arm: usize, dim: usize) -> Self {
        IndexAccumulator {
            arm,
            sum_gram: SymMatrix::zeros(dim),
            sum_moment: vec![0.0; dim],
            t: 0,
            pulls: 0,
        }
    }

    pub fn arm(&self) -> usize {
        self.arm
    }
    pub fn dim(&self) -> usize {
        self.sum_moment.len()
    }
    pub fn rounds(&self) -> usize {
        self.t
    }
    pub fn pulls(&self) -> usize {
        self.pulls
    }
    pub fn sum_gram(&self) -> &SymMatrix {
        &self.sum_gram
    }
    pub fn sum_moment(&self) -> &[f64] {
        &self.sum_moment
    }

    /// Records one round. Only pulled rounds touch the sums; the round
    /// counter always advances.
    pub fn observe(&mut self, w: &[f64], y: f64, propensity: f64, pulled: bool, p_min: f64) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::Domain(format!(
                "score feature has dimension {}, accumulator expects {}",
                w.len(),
                self.dim()
            )));
        }
        ensure_finite("score feature", w)?;
        ensure_finite("reward", &[y])?;
        if !(propensity > 0.0 && propensity <= 1.0) {
            return Err(Error::Domain(format!("propensity must lie in (0,1], got {propensity}")));
        }
        if !(p_min > 0.0 && p_min <= 1.0) {
            return Err(Error::Domain(format!("p_min must lie in (0,1], got {p_min}")));
        }
        self.t += 1;
        if pulled {
            let weight = ipw_weight(propensity, p_min);
            self.sum_gram.add_outer(weight, w);
            for (m, wi) in self.sum_moment.iter_mut().zip(w) {
                *m += weight * y * wi;
            }
            self.pulls += 1;
        }
        Ok(())
    }

    /// β̂ = (Σ w W Wᵀ / t + λ I)⁻¹ (Σ w W Y / t).
    pub fn estimate_beta(&self, lambda_beta: f64) -> Result<IndexEstimate> {
        if self.t == 0 {
            return Err(Error::State("index estimate needs at least one round".into()));
        }
        if !(lambda_beta >= 0.0) {
            return Err(Error::Domain(format!("lambda_beta must be nonnegative, got {lambda_beta}")));
        }
        let inv_t = 1.0 / self.t as f64;
        let mut gram = self.sum_gram.scaled(inv_t);
        gram.add_ridge(lambda_beta);
        let moment: Vec<f64> = self.sum_moment.iter().map(|m| m * inv_t).collect();
        let chol = Cholesky::factor(&gram, 0.0).map_err(|_| Error::SingularGram {
            lambda_min: min_eigenvalue(&gram),
        })?;
        let beta_hat = chol.solve(&moment);
        let norm = beta_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
        let degenerate = !(norm > 0.0);
        let direction = if degenerate {
            vec![0.0; beta_hat.len()]
        } else {
            beta_hat.iter().map(|v| v / norm).collect()
        };
        Ok(IndexEstimate {
            beta_hat,
            direction,
            gram,
            lambda_beta,
            t: self.t,
            degenerate,
        })
    }

    /// λ_min(Σ w W Wᵀ / t).
    pub fn gram_diagnostic(&self) -> f64 {
        if self.t == 0 {
            return f64::NAN;
        }
        min_eigenvalue(&self.sum_gram.scaled(1.0 / self.t as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEstimate {
    pub beta_hat: Vec<f64>,
    /// Unit direction, or the zero vector when `degenerate`.
    pub direction: Vec<f64>,
    /// Σ w W Wᵀ / t + λ_β I
    pub gram: SymMatrix,
    pub lambda_beta: f64,
    pub t: usize,
    pub degenerate: bool,
}

impl IndexEstimate {
    pub fn norm(&self) -> f64 {
        self.beta_hat.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unpulled_round_only_advances_counter() {
        let mut acc = IndexAccumulator::new(0, 2);
        acc.observe(&[1.0, 2.0], 3.0, 0.5, false, DEFAULT_P_MIN).unwrap();
        assert_eq!(acc.rounds(), 1);
        assert_eq!(acc.pulls(), 0);
        assert_eq!(acc.sum_gram(), &SymMatrix::zeros(2));
        assert_eq!(acc.sum_moment(), &[0.0, 0.0]);
    }

    #[test]
    fn weighted_update_by_hand() {
        let mut acc = IndexAccumulator::new(0, 2);
        acc.observe(&[1.0, 0.0], 2.0, 0.5, true, DEFAULT_P_MIN).unwrap();
        assert_eq!(acc.sum_gram().as_slice(), &[2.0, 0.0, 0.0, 0.0]);
        assert_eq!(acc.sum_moment(), &[4.0, 0.0]);
    }

    #[test]
    fn clip_floor() {
        assert_eq!(ipw_weight(0.001, 0.01), 100.0);
        let mut acc = IndexAccumulator::new(0, 1);
        acc.observe(&[1.0], 1.0, 0.001, true, 0.01).unwrap();
        assert_eq!(acc.sum_gram().get(0, 0), 100.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut acc = IndexAccumulator::new(0, 1);
        assert!(acc.observe(&[f64::NAN], 1.0, 0.5, true, 0.01).is_err());
        assert!(acc.observe(&[1.0], f64::INFINITY, 0.5, true, 0.01).is_err());
        assert!(acc.observe(&[1.0], 1.0, 0.0, true, 0.01).is_err());
        assert!(acc.observe(&[1.0], 1.0, 1.5, true, 0.01).is_err());
        assert!(acc.observe(&[1.0, 2.0], 1.0, 0.5, true, 0.01).is_err());
        assert_eq!(acc.rounds(), 0);
    }

    #[test]
    fn exact_one_dimensional_fit() {
        let mut acc = IndexAccumulator::new(0, 1);
        acc.observe(&[1.0], 1.0, 1.0, true, DEFAULT_P_MIN).unwrap();
        acc.observe(&[-1.0], -1.0, 1.0, true, DEFAULT_P_MIN).unwrap();
        let est = acc.estimate_beta(0.0).unwrap();
        assert_eq!(est.gram.get(0, 0), 1.0);
        assert_eq!(est.beta_hat, vec![1.0]);
        assert_eq!(est.direction, vec![1.0]);
    }

    #[test]
    fn three_rows_two_dims() {
        // normal equations [[2,1],[1,2]] β = [7,8] -> β = (2,3)
        let mut acc = IndexAccumulator::new(0, 2);
        for (w, y) in [([1.0, 0.0], 2.0), ([0.0, 1.0], 3.0), ([1.0, 1.0], 5.0)] {
            acc.observe(&w, y, 1.0, true, DEFAULT_P_MIN).unwrap();
        }
        let est = acc.estimate_beta(0.0).unwrap();
        assert!((est.beta_hat[0] - 2.0).abs() < 1e-12);
        assert!((est.beta_hat[1] - 3.0).abs() < 1e-12);
        let n = est.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weight_rescaling_invariance() {
        let rows = [([1.0, 0.5], 2.0), ([0.2, 1.0], 3.0), ([1.0, -1.0], 0.5)];
        let mut a = IndexAccumulator::new(0, 2);
        let mut b = IndexAccumulator::new(0, 2);
        for (w, y) in rows {
            a.observe(&w, y, 0.8, true, DEFAULT_P_MIN).unwrap();
            b.observe(&w, y, 0.2, true, DEFAULT_P_MIN).unwrap();
        }
        let ea = a.estimate_beta(0.0).unwrap();
        let eb = b.estimate_beta(0.0).unwrap();
        for j in 0..2 {
            assert!((ea.beta_hat[j] - eb.beta_hat[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_gram_reports_lambda_min() {
        // a zero Gram has no trace to scale the jitter retry by
        let mut acc = IndexAccumulator::new(0, 2);
        acc.observe(&[1.0, 0.0], 1.0, 0.5, false, DEFAULT_P_MIN).unwrap();
        match acc.estimate_beta(0.0) {
            Err(Error::SingularGram { lambda_min }) => assert_eq!(lambda_min, 0.0),
            other => panic!("expected singular gram, got {other:?}"),
        }
        assert!(acc.estimate_beta(DEFAULT_LAMBDA_BETA).is_ok());
    }

    #[test]
    fn zero_moment_is_degenerate_not_error() {
        let mut acc = IndexAccumulator::new(0, 2);
        acc.observe(&[1.0, 0.0], 0.0, 1.0, true, DEFAULT_P_MIN).unwrap();
        let est = acc.estimate_beta(1.0).unwrap();
        assert!(est.degenerate);
        assert_eq!(est.direction, vec![0.0, 0.0]);
    }

    #[test]
    fn gram_diagnostic_examples() {
        // sum_gram = t·I
        let mut id = IndexAccumulator::new(0, 2);
        for w in [[2f64.sqrt(), 0.0], [0.0, 2f64.sqrt()]] {
            id.observe(&w, 0.0, 1.0, true, DEFAULT_P_MIN).unwrap();
        }
        assert!((id.gram_diagnostic() - 1.0).abs() < 1e-12);
        let mut one = IndexAccumulator::new(0, 2);
        one.observe(&[1.0, 1.0], 0.0, 1.0, true, DEFAULT_P_MIN).unwrap();
        assert!(one.gram_diagnostic().abs() < 1e-12);
    }
}
