//! Score features W = S(X): the known Gaussian score Σ⁻¹(x − μ), or an
//! empirical whitening built from a running mean and covariance of all
//! observed contexts.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::numerics::{Cholesky, SymMatrix};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ScoreModel {
    KnownGaussian {
        mean: Vec<f64>,
        covariance: SymMatrix,
    },
    EmpiricalWhitening(Whitening),
}

/// Welford accumulator over contexts. `ridge = None` means the default
/// `1e-8·trace(Σ̂)/d`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Whitening {
    mean: Vec<f64>,
    /// Σ (x − mean)(x − mean)ᵀ
    comoment: SymMatrix,
    count: usize,
    ridge: Option<f64>,
}

impl Whitening {
    pub fn new(dim: usize, ridge: Option<f64>) -> Self {
        Whitening {
            mean: vec![0.0; dim],
            comoment: SymMatrix::zeros(dim),
            count: 0,
            ridge,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased sample covariance; `None` while fewer than two contexts are seen.
    pub fn covariance(&self) -> Option<SymMatrix> {
        (self.count >= 2).then(|| self.comoment.scaled(1.0 / (self.count - 1) as f64))
    }

    pub fn update(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.mean.len());
        self.count += 1;
        let n = self.count as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d / n;
        }
        let delta_after: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let dim = self.mean.len();
        let mut data = self.comoment.as_slice().to_vec();
        for i in 0..dim {
            for j in 0..dim {
                data[i * dim + j] += delta[i] * delta_after[j];
            }
        }
        self.comoment = SymMatrix::symmetrize(dim, data);
    }

    pub fn effective_ridge(&self) -> f64 {
        match (self.ridge, self.covariance()) {
            (Some(r), _) => r,
            (None, Some(cov)) => 1e-8 * cov.trace() / self.mean.len() as f64,
            (None, None) => 0.0,
        }
    }

    /// A frozen scorer for the current mean/covariance, so that many contexts
    /// can be mapped with the same factorization.
    pub fn snapshot(&self) -> Result<Scorer> {
        let cov = self.covariance().ok_or_else(|| {
            Error::State(format!(
                "empirical whitening needs at least 2 contexts, has {}",
                self.count
            ))
        })?;
        let chol = Cholesky::factor(&cov, self.effective_ridge())?;
        Ok(Scorer {
            mean: self.mean.clone(),
            chol,
        })
    }
}

/// Mean plus a factored covariance: maps x to (Σ + ridge·I)⁻¹(x − μ).
#[derive(Debug, Clone)]
pub struct Scorer {
    mean: Vec<f64>,
    chol: Cholesky,
}

impl Scorer {
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::Domain(format!(
                "context has dimension {}, score model expects {}",
                x.len(),
                self.mean.len()
            )));
        }
        ensure_finite("context", x)?;
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self.chol.solve(&centered))
    }
}

impl ScoreModel {
    pub fn standard_gaussian(dim: usize) -> Self {
        ScoreModel::KnownGaussian {
            mean: vec![0.0; dim],
            covariance: SymMatrix::identity(dim),
        }
    }

    pub fn known_gaussian(mean: Vec<f64>, covariance: SymMatrix) -> Result<Self> {
        if mean.len() != covariance.dim() {
            return Err(Error::Domain("mean and covariance dimensions differ".into()));
        }
        Cholesky::factor(&covariance, 0.0)?;
        Ok(ScoreModel::KnownGaussian { mean, covariance })
    }

    pub fn empirical(dim: usize, ridge: Option<f64>) -> Self {
        ScoreModel::EmpiricalWhitening(Whitening::new(dim, ridge))
    }

    pub fn dim(&self) -> usize {
        match self {
            ScoreModel::KnownGaussian { mean, .. } => mean.len(),
            ScoreModel::EmpiricalWhitening(w) => w.mean.len(),
        }
    }

    /// Feeds a context to the running whitening; no-op for a known score.
    pub fn update(&mut self, x: &[f64]) {
        if let ScoreModel::EmpiricalWhitening(w) = self {
            w.update(x);
        }
    }

    pub fn scorer(&self) -> Result<Scorer> {
        match self {
            ScoreModel::KnownGaussian { mean, covariance } => Ok(Scorer {
                mean: mean.clone(),
                chol: Cholesky::factor(covariance, 0.0)?,
            }),
            ScoreModel::EmpiricalWhitening(w) => w.snapshot(),
        }
    }

    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.scorer()?.score(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn known_gaussian_examples() {
        let m = ScoreModel::standard_gaussian(2);
        assert_eq!(m.score(&[1.0, -2.0]).unwrap(), vec![1.0, -2.0]);
        let m = ScoreModel::known_gaussian(vec![1.0, 1.0], SymMatrix::identity(2)).unwrap();
        assert_eq!(m.score(&[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        let m = ScoreModel::known_gaussian(vec![0.0, 0.0], SymMatrix::from_diag(&[4.0, 1.0])).unwrap();
        let s = m.score(&[2.0, 3.0]).unwrap();
        assert!((s[0] - 0.5).abs() < 1e-15 && (s[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn known_gaussian_rejects_non_pd() {
        assert!(ScoreModel::known_gaussian(vec![0.0], SymMatrix::from_diag(&[-1.0])).is_err());
    }

    #[test]
    fn whitening_two_points() {
        let mut m = ScoreModel::empirical(1, None);
        m.update(&[0.0]);
        assert!(m.score(&[1.0]).is_err());
        m.update(&[2.0]);
        let ScoreModel::EmpiricalWhitening(w) = &m else { unreachable!() };
        assert_eq!(w.mean(), &[1.0]);
        assert_eq!(w.covariance().unwrap().get(0, 0), 2.0);
    }

    #[test]
    fn constant_contexts_need_ridge() {
        let mut m = ScoreModel::empirical(2, None);
        for _ in 0..5 {
            m.update(&[1.0, 1.0]);
        }
        assert!(m.score(&[0.0, 0.0]).is_err());
        let mut m = ScoreModel::empirical(2, Some(0.5));
        for _ in 0..5 {
            m.update(&[1.0, 1.0]);
        }
        let w = m.score(&[2.0, 1.0]).unwrap();
        assert!((w[0] - 2.0).abs() < 1e-15 && w[1] == 0.0);
    }

    #[test]
    fn streaming_matches_batch() {
        let mut rng = Rng::new(3);
        let d = 3;
        let xs: Vec<Vec<f64>> = (0..500)
            .map(|_| rng.normal_vec(d).iter().map(|v| 3.0 * v + 1.0).collect())
            .collect();
        let mut w = Whitening::new(d, None);
        for x in &xs {
            w.update(x);
        }
        let n = xs.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
        let cov = w.covariance().unwrap();
        for j in 0..d {
            assert!((w.mean()[j] - mean[j]).abs() < 1e-12);
            for k in 0..d {
                let c = xs.iter().map(|x| (x[j] - mean[j]) * (x[k] - mean[k])).sum::<f64>() / (n - 1.0);
                assert!((cov.get(j, k) - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn affine_equivariance() {
        // x -> A x + c with model N(Aμ + c, AΣAᵀ) gives scores A⁻ᵀ s
        let mut rng = Rng::new(9);
        for _ in 0..50 {
            let a = [rng.normal() + 2.0, rng.normal(), rng.normal(), rng.normal() - 2.0];
            let det = a[0] * a[3] - a[1] * a[2];
            if det.abs() < 0.1 {
                continue;
            }
            let c = [rng.normal(), rng.normal()];
            let mu = vec![rng.normal(), rng.normal()];
            let sigma = SymMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
            let base = ScoreModel::known_gaussian(mu.clone(), sigma.clone()).unwrap();
            let mu2 = vec![
                a[0] * mu[0] + a[1] * mu[1] + c[0],
                a[2] * mu[0] + a[3] * mu[1] + c[1],
            ];
            let sigma2 = sigma.congruence(&a);
            let moved = ScoreModel::known_gaussian(mu2, sigma2).unwrap();
            let x = rng.normal_vec(2);
            let ax = [a[0] * x[0] + a[1] * x[1] + c[0], a[2] * x[0] + a[3] * x[1] + c[1]];
            let s = base.score(&x).unwrap();
            let s2 = moved.score(&ax).unwrap();
            // Aᵀ s2 == s
            let back = [a[0] * s2[0] + a[2] * s2[1], a[1] * s2[0] + a[3] * s2[1]];
            assert!((back[0] - s[0]).abs() < 1e-9 && (back[1] - s[1]).abs() < 1e-9);
        }
    }
}
