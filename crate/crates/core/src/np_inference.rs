//! Plug-in RKHS covariance in dual form and the two pointwise intervals
//! compared in the experiments: the studentized CLT interval and the
//! uniform-band interval.
//!
//! With A = (1/t)KWK + λI and R = diag(w_s r_s²) the studentizer is
//! D̂²(u) = t^{2γ−2}·k_uᵀ A⁻¹((1/t)KRK)A⁻¹ k_u. It is evaluated as
//! t^{2γ−2}·(1/t)·Σ_s R_s (K v)_s² with v = A⁻¹k_u, a sum of nonnegative
//! terms, so M is never formed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel_ridge::{Gram, KrrModel, ScalarKernel};
use crate::numerics::{dot, normal_quantile, Cholesky, SymMatrix};

pub const DEFAULT_GAMMA: f64 = 0.5;
pub const DEFAULT_AS_CONST: f64 = 1.0;
pub const DEFAULT_AS_THETA: f64 = 0.25;
pub const DEFAULT_AS_ETA: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct NpCovariance<K> {
    us: Vec<f64>,
    kernel: K,
    gram: Gram,
    chol_a: Cholesky,
    /// w_s r_s², zero for burn-in points
    r: Vec<f64>,
    scale: f64,
    gamma: f64,
}

/// Builds the covariance for `model`. `gram` may pass the model's Gram
/// matrix to avoid recomputing it; the first `burn_in` support points are
/// left out of R but kept in A.
pub fn build_covariance<K: ScalarKernel>(
    model: &KrrModel<K>,
    gram: Option<&Gram>,
    gamma: f64,
    lambda: f64,
    burn_in: usize,
) -> Result<NpCovariance<K>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("ridge must be positive, got {lambda}")));
    }
    if !gamma.is_finite() {
        return Err(Error::Domain(format!("gamma must be finite, got {gamma}")));
    }
    let n = model.len();
    if n == 0 {
        return Err(Error::Domain("covariance needs a fitted model".into()));
    }
    let us: Vec<f64> = model.support.iter().map(|p| p.u).collect();
    let gram = match gram {
        Some(g) if g.len() == n => g.clone(),
        Some(g) => {
            return Err(Error::Domain(format!("Gram matrix covers {} points, model has {n}", g.len())));
        }
        None => Gram::new(&model.kernel, &us),
    };
    let tf = n as f64;
    let fitted: Vec<f64> = (0..n).map(|s| dot(gram.row(s), &model.dual_coeffs)).collect();
    let r: Vec<f64> = model
        .support
        .iter()
        .zip(&fitted)
        .enumerate()
        .map(|(s, (p, f))| if s < burn_in { 0.0 } else { p.w * (p.y - f) * (p.y - f) })
        .collect();
    let w: Vec<f64> = model.support.iter().map(|p| p.w).collect();
    let mut a = vec![0.0; n * n];
    let mut kw = vec![0.0; n];
    for i in 0..n {
        let ki = gram.row(i);
        for s in 0..n {
            kw[s] = ki[s] * w[s];
        }
        for j in 0..=i {
            let v = dot(&kw, gram.row(j)) / tf;
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    let chol_a = Cholesky::factor_row_major(n, &a, lambda)?;
    Ok(NpCovariance {
        us,
        kernel: model.kernel.clone(),
        gram,
        chol_a,
        r,
        scale: tf.powf(2.0 * gamma - 2.0),
        gamma,
    })
}

impl<K: ScalarKernel> NpCovariance<K> {
    pub fn len(&self) -> usize {
        self.us.len()
    }

    pub fn is_empty(&self) -> bool {
        self.us.is_empty()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// D̂²(u).
    pub fn d2(&self, u: f64) -> f64 {
        let n = self.us.len();
        let k: Vec<f64> = self.us.iter().map(|&s| self.kernel.eval(s, u)).collect();
        let v = self.chol_a.solve(&k);
        let mut acc = 0.0;
        for s in 0..n {
            if self.r[s] != 0.0 {
                let kv = dot(self.gram.row(s), &v);
                acc += self.r[s] * kv * kv;
            }
        }
        self.scale * acc / n as f64
    }

    /// The dual-coordinate core M = A⁻¹((1/t)KRK)A⁻¹, formed explicitly.
    pub fn core_matrix(&self) -> SymMatrix {
        let n = self.us.len();
        let tf = n as f64;
        // B = A⁻¹K column by column (K symmetric, so columns are rows)
        let mut b = vec![0.0; n * n];
        for j in 0..n {
            let col = self.chol_a.solve(self.gram.row(j));
            for i in 0..n {
                b[i * n + j] = col[i];
            }
        }
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = (0..n).map(|s| b[i * n + s] * self.r[s] * b[j * n + s]).sum::<f64>() / tf;
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
        SymMatrix::symmetrize(n, m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CiMethod {
    #[serde(rename = "KSIEGE")]
    KSiege,
    #[serde(rename = "AS")]
    As,
}

impl CiMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CiMethod::KSiege => "KSIEGE",
            CiMethod::As => "AS",
        }
    }
}

impl std::fmt::Display for CiMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointwiseCi {
    pub method: CiMethod,
    pub u: f64,
    pub center: f64,
    pub half_width: f64,
    pub lo: f64,
    pub hi: f64,
    pub t: usize,
    /// γ for the studentized interval, θ for the band interval
    pub exponent: f64,
    pub level: f64,
    /// D̂² came out negative and was clamped to 0
    pub clamped: bool,
}

impl PointwiseCi {
    fn new(method: CiMethod, u: f64, center: f64, half_width: f64, t: usize, exponent: f64, level: f64) -> Self {
        PointwiseCi {
            method,
            u,
            center,
            half_width,
            lo: center - half_width,
            hi: center + half_width,
            t,
            exponent,
            level,
            clamped: false,
        }
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// f̂(u) ± z_{1−α/2}·t^{−γ}·D̂(u).
pub fn pointwise_ci<K: ScalarKernel>(
    model: &KrrModel<K>,
    cov: &NpCovariance<K>,
    u: f64,
    alpha: f64,
    t: usize,
) -> Result<PointwiseCi> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let d2 = cov.d2(u);
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    let half = z * (t.max(1) as f64).powf(-cov.gamma) * d2.max(0.0).sqrt();
    let mut ci = PointwiseCi::new(CiMethod::KSiege, u, model.predict(u), half, t, cov.gamma, 1.0 - alpha);
    ci.clamped = d2 < 0.0;
    Ok(ci)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandParams {
    pub eta: f64,
    pub kappa: f64,
    pub c_const: f64,
    pub theta: f64,
}

impl Default for BandParams {
    fn default() -> Self {
        BandParams {
            eta: DEFAULT_AS_ETA,
            kappa: 1.0,
            c_const: DEFAULT_AS_CONST,
            theta: DEFAULT_AS_THETA,
        }
    }
}

/// f̂(u) ± 2√2·κ·c·(2r̃/η)^θ.
pub fn as_band_ci<K: ScalarKernel>(model: &KrrModel<K>, u: f64, r_tilde: f64, params: &BandParams, t: usize) -> Result<PointwiseCi> {
    let BandParams { eta, kappa, c_const, theta } = *params;
    if !(r_tilde > 0.0 && r_tilde.is_finite()) {
        return Err(Error::Domain(format!("exploration coefficient must be positive, got {r_tilde}")));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Domain(format!("eta must lie in (0,1), got {eta}")));
    }
    if !(theta > 0.0 && theta < 0.5) {
        return Err(Error::Domain(format!("theta must lie in (0,1/2), got {theta}")));
    }
    if !(c_const > 0.0 && kappa > 0.0) {
        return Err(Error::Domain("band constants must be positive".into()));
    }
    let half = 2.0 * std::f64::consts::SQRT_2 * kappa * c_const * (2.0 * r_tilde / eta).powf(theta);
    Ok(PointwiseCi::new(CiMethod::As, u, model.predict(u), half, t, theta, 1.0 - eta))
}

/// r̃ = t⁻²·Σ_s 1/p_s over every recorded round.
pub fn exploration_coefficient(propensities: &[f64]) -> Result<f64> {
    if propensities.is_empty() {
        return Err(Error::Domain("exploration coefficient needs t >= 1".into()));
    }
    let mut acc = 0.0;
    for &p in propensities {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Domain(format!("propensity must lie in (0,1], got {p}")));
        }
        acc += 1.0 / p;
    }
    let t = propensities.len() as f64;
    Ok(acc / (t * t))
}
