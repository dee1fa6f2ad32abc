//! Sandwich covariance of the index estimator, its delta-method projection
//! onto the tangent space of the sphere, and the resulting confidence
//! ellipsoid and marginal intervals for the unit direction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{chi2_quantile, dot, sym_eigen, Cholesky, SymMatrix};

pub const DEFAULT_ALPHA: f64 = 0.5;

/// One pulled round as seen by the index estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedRow {
    /// score feature W_s
    pub w: Vec<f64>,
    pub y: f64,
    /// clipped IPW weight
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceSet {
    pub vectors: Vec<Vec<f64>>,
    pub alpha: f64,
    pub t: usize,
}

/// ψ_s = t^{α−1} A⁻¹ w_s W_s R_s with residuals against the current β̂.
pub fn build_influence(
    rows: &[WeightedRow],
    beta_hat: &[f64],
    gram: &SymMatrix,
    alpha: f64,
    t: usize,
) -> Result<InfluenceSet> {
    if t == 0 {
        return Err(Error::State("influence vectors need t >= 1".into()));
    }
    let chol = Cholesky::factor(gram, 0.0)?;
    let scale = (t as f64).powf(alpha - 1.0);
    let vectors = rows
        .iter()
        .map(|row| {
            let residual = row.y - dot(&row.w, beta_hat);
            let rhs: Vec<f64> = row.w.iter().map(|v| row.weight * residual * v).collect();
            chol.solve(&rhs).into_iter().map(|v| scale * v).collect()
        })
        .collect();
    Ok(InfluenceSet { vectors, alpha, t })
}

/// V̂ = Σ ψ ψᵀ.
pub fn v_beta(infl: &InfluenceSet) -> Result<SymMatrix> {
    let first = infl
        .vectors
        .first()
        .ok_or_else(|| Error::Degenerate("empty influence set".into()))?;
    let mut v = SymMatrix::zeros(first.len());
    for psi in &infl.vectors {
        v.add_outer(1.0, psi);
    }
    Ok(v)
}

fn unit(beta_hat: &[f64]) -> Result<(Vec<f64>, f64)> {
    let norm = dot(beta_hat, beta_hat).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Degenerate("index estimate has zero norm".into()));
    }
    Ok((beta_hat.iter().map(|v| v / norm).collect(), norm))
}

/// J V̂ Jᵀ / t^{2α} with J = (I − b̂b̂ᵀ)/‖β̂‖.
pub fn directional_covariance(beta_hat: &[f64], v_beta: &SymMatrix, t: usize, alpha: f64) -> Result<SymMatrix> {
    let (b, norm) = unit(beta_hat)?;
    let d = b.len();
    let mut jac = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let id = if i == j { 1.0 } else { 0.0 };
            jac[i * d + j] = (id - b[i] * b[j]) / norm;
        }
    }
    let scale = (t as f64).powf(-2.0 * alpha);
    Ok(v_beta.congruence(&jac).scaled(scale))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalReport {
    pub direction: Vec<f64>,
    pub v_beta_hat: SymMatrix,
    pub v_dir: SymMatrix,
    /// χ²_{d−1, level}
    pub ellipsoid_radius2: f64,
    pub marginal_half_widths: Vec<f64>,
    pub level: f64,
}

pub fn directional_report(
    beta_hat: &[f64],
    v_beta: &SymMatrix,
    t: usize,
    alpha: f64,
    delta: f64,
) -> Result<DirectionalReport> {
    let d = beta_hat.len();
    if d < 2 {
        return Err(Error::Domain("directional inference needs dimension >= 2".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0,1), got {delta}")));
    }
    let (direction, _) = unit(beta_hat)?;
    let v_dir = directional_covariance(beta_hat, v_beta, t, alpha)?;
    let radius2 = chi2_quantile(1.0 - delta, (d - 1) as u32)?;
    let marginal_half_widths = (0..d)
        .map(|j| (v_dir.get(j, j).max(0.0) * radius2).sqrt())
        .collect();
    Ok(DirectionalReport {
        direction,
        v_beta_hat: v_beta.clone(),
        v_dir,
        ellipsoid_radius2: radius2,
        marginal_half_widths,
        level: 1.0 - delta,
    })
}

/// Flips `truth` into the hemisphere of `reference` (directions are
/// identified only up to sign).
pub fn align_sign(truth: &[f64], reference: &[f64]) -> Vec<f64> {
    if dot(truth, reference) < 0.0 {
        truth.iter().map(|v| -v).collect()
    } else {
        truth.to_vec()
    }
}

impl DirectionalReport {
    pub fn marginal_intervals(&self) -> Vec<(f64, f64)> {
        self.direction
            .iter()
            .zip(&self.marginal_half_widths)
            .map(|(c, h)| (c - h, c + h))
            .collect()
    }

    /// (u − b̂)ᵀ V_dir⁺ (u − b̂) on the tangent space; infinite when u − b̂ has
    /// weight on a direction the covariance does not span.
    pub fn studentized_distance(&self, u: &[f64]) -> f64 {
        let b = &self.direction;
        let diff: Vec<f64> = u.iter().zip(b).map(|(a, c)| a - c).collect();
        let along = dot(&diff, b);
        let tangent: Vec<f64> = diff.iter().zip(b).map(|(x, c)| x - along * c).collect();
        // both vectors are unit; a tangent gap at rounding level is the center itself
        if dot(&tangent, &tangent).sqrt() <= 1e-12 {
            return 0.0;
        }
        let (values, vectors) = sym_eigen(&self.v_dir);
        let lmax = values.iter().fold(0.0_f64, |m, v| m.max(*v));
        let cutoff = 1e-10 * lmax;
        let tnorm = dot(&tangent, &tangent).sqrt();
        let mut stat = 0.0;
        for (lam, vec) in values.iter().zip(&vectors) {
            let coef = dot(vec, &tangent);
            if *lam > cutoff && lmax > 0.0 {
                stat += coef * coef / lam;
            } else if coef.abs() > 1e-12 * (1.0 + tnorm) && dot(vec, b).abs() < 0.5 {
                return f64::INFINITY;
            }
        }
        if lmax <= 0.0 && tnorm > 1e-12 {
            return f64::INFINITY;
        }
        stat
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        self.studentized_distance(u) <= self.ellipsoid_radius2
    }
}

/// Full pipeline for one arm: influence vectors, V̂ and the directional report.
pub fn infer_direction(
    rows: &[WeightedRow],
    beta_hat: &[f64],
    gram: &SymMatrix,
    t: usize,
    alpha: f64,
    delta: f64,
) -> Result<DirectionalReport> {
    let infl = build_influence(rows, beta_hat, gram, alpha, t)?;
    let v = v_beta(&infl)?;
    directional_report(beta_hat, &v, t, alpha, delta)
}
