//! IPW kernel ridge regression on the scalar projected index.
//!
//! The weighted problem  min Σ w_s (y_s − f(u_s))² + tλ‖f‖²  has dual
//! coefficients solving (W K + tλ I) c = W y. With S = W^{1/2} this is
//! solved through the symmetric system (S K S + tλ I) z = S y, c = S z,
//! which keeps Cholesky applicable.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::numerics::{conjugate_gradient, dot, lower_median, Cholesky};

pub const DEFAULT_ZETA: f64 = 0.05;
pub const DEFAULT_PAIR_CAP: usize = 200_000;

pub trait ScalarKernel: Clone + std::fmt::Debug {
    fn eval(&self, u: f64, v: f64) -> f64;
}

/// k(u, v) = exp(−(u − v)² / (2σ_b²)); k(u, u) = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    bandwidth: f64,
}

impl GaussianKernel {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Domain(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(GaussianKernel { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

impl ScalarKernel for GaussianKernel {
    #[inline]
    fn eval(&self, u: f64, v: f64) -> f64 {
        let z = (u - v) / self.bandwidth;
        (-0.5 * z * z).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bandwidth {
    pub value: f64,
    /// All sampled distances were zero; `value` fell back to 1.
    pub degenerate: bool,
}

/// Median of |u_i − u_j| over unordered pairs, using a deterministic strided
/// subsample when there are more than `cap` pairs.
pub fn median_bandwidth(us: &[f64], cap: usize) -> Result<Bandwidth> {
    let n = us.len();
    if n < 2 {
        return Err(Error::Domain(format!(
            "median bandwidth needs at least 2 points, got {n}"
        )));
    }
    ensure_finite("projected index", us)?;
    let total = n * (n - 1) / 2;
    let cap = cap.max(1);
    let mut dists = Vec::with_capacity(total.min(cap));
    if total <= cap {
        for i in 0..n {
            for j in (i + 1)..n {
                dists.push((us[i] - us[j]).abs());
            }
        }
    } else {
        // pair k of the sample is linear pair index floor(k·total/cap)
        let mut row = 0usize;
        let mut row_start = 0usize;
        for k in 0..cap {
            let p = ((k as u128 * total as u128) / cap as u128) as usize;
            while p >= row_start + (n - 1 - row) {
                row_start += n - 1 - row;
                row += 1;
            }
            let j = row + 1 + (p - row_start);
            dists.push((us[row] - us[j]).abs());
        }
    }
    let m = lower_median(&mut dists);
    if m > 0.0 {
        Ok(Bandwidth { value: m, degenerate: false })
    } else {
        Ok(Bandwidth { value: 1.0, degenerate: true })
    }
}

/// λ_t = t^{−ζ}.
pub fn ridge_schedule(t: usize, zeta: f64) -> f64 {
    (t.max(1) as f64).powf(-zeta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    pub u: f64,
    pub y: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrrModel<K = GaussianKernel> {
    pub support: Vec<SupportPoint>,
    pub dual_coeffs: Vec<f64>,
    pub lambda: f64,
    /// count multiplying λ in the dual system
    pub t: usize,
    pub kernel: K,
}

/// Kernel Gram matrix over a growing support, stored with a row stride
/// that doubles on demand so appending a point costs O(n) evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    n: usize,
    stride: usize,
    data: Vec<f64>,
}

impl Gram {
    pub fn new<K: ScalarKernel>(kernel: &K, us: &[f64]) -> Self {
        let mut g = Gram {
            n: 0,
            stride: us.len().max(4),
            data: vec![0.0; us.len().max(4).pow(2)],
        };
        for (i, &u) in us.iter().enumerate() {
            g.push(kernel, &us[..i], u);
        }
        g
    }

    /// Appends the point `u`; `previous` are the abscissae already held.
    pub fn push<K: ScalarKernel>(&mut self, kernel: &K, previous: &[f64], u: f64) {
        debug_assert_eq!(previous.len(), self.n);
        if self.n == self.stride {
            let stride = 2 * self.stride;
            let mut data = vec![0.0; stride * stride];
            for i in 0..self.n {
                data[i * stride..i * stride + self.n].copy_from_slice(self.row(i));
            }
            self.stride = stride;
            self.data = data;
        }
        let n = self.n;
        for (j, &v) in previous.iter().enumerate() {
            let k = kernel.eval(v, u);
            self.data[n * self.stride + j] = k;
            self.data[j * self.stride + n] = k;
        }
        self.data[n * self.stride + n] = kernel.eval(u, u);
        self.n += 1;
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.stride..i * self.stride + self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.stride + j]
    }

    /// Contiguous n×n row-major copy.
    pub fn to_dense(&self) -> Vec<f64> {
        (0..self.n).flat_map(|i| self.row(i).iter().copied()).collect()
    }
}

impl<K: ScalarKernel> KrrModel<K> {
    /// Fits with tλ using t = support size.
    pub fn fit(support: &[SupportPoint], lambda: f64, kernel: K) -> Result<Self> {
        let n = support.iter().filter(|p| p.w > 0.0).count();
        Self::fit_with_count(support, lambda, kernel, n)
    }

    pub fn fit_with_count(support: &[SupportPoint], lambda: f64, kernel: K, t: usize) -> Result<Self> {
        Ok(Self::fit_keep_gram(support, lambda, kernel, t)?.0)
    }

    /// As [`fit_with_count`](Self::fit_with_count), also returning the Gram
    /// matrix over the retained (w > 0) support.
    pub fn fit_keep_gram(support: &[SupportPoint], lambda: f64, kernel: K, t: usize) -> Result<(Self, Gram)> {
        for p in support {
            ensure_finite("support point", &[p.u, p.y, p.w])?;
            if p.w < 0.0 {
                return Err(Error::Domain(format!("negative IPW weight {}", p.w)));
            }
        }
        let support: Vec<SupportPoint> = support.iter().copied().filter(|p| p.w > 0.0).collect();
        let us: Vec<f64> = support.iter().map(|p| p.u).collect();
        let gram = Gram::new(&kernel, &us);
        let model = Self::fit_with_gram(support, &gram, lambda, kernel, t, None)?;
        Ok((model, gram))
    }

    /// Fits against a precomputed Gram matrix of `support`
    /// (every weight strictly positive). `warm` seeds the iterative solver
    /// with previous dual coefficients; entries beyond its length start at 0.
    pub fn fit_with_gram(
        support: Vec<SupportPoint>,
        gram: &Gram,
        lambda: f64,
        kernel: K,
        t: usize,
        warm: Option<&[f64]>,
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!("ridge must be positive, got {lambda}")));
        }
        if support.is_empty() {
            return Err(Error::Domain("kernel ridge fit needs a nonempty support".into()));
        }
        if t == 0 {
            return Err(Error::Domain("ridge count t must be positive".into()));
        }
        let n = support.len();
        if gram.len() != n {
            return Err(Error::Domain(format!(
                "Gram matrix covers {} points, support has {n}",
                gram.len()
            )));
        }
        if let Some(p) = support.iter().find(|p| !(p.w > 0.0)) {
            return Err(Error::Domain(format!("support weight must be positive, got {}", p.w)));
        }
        let ridge = t as f64 * lambda;
        let s: Vec<f64> = support.iter().map(|p| p.w.sqrt()).collect();
        let rhs: Vec<f64> = support.iter().zip(&s).map(|(p, si)| si * p.y).collect();
        let z = solve_symmetric(gram, &s, ridge, &rhs, warm)?;
        let dual_coeffs = z.iter().zip(&s).map(|(zi, si)| zi * si).collect();
        Ok(KrrModel {
            support,
            dual_coeffs,
            lambda,
            t,
            kernel,
        })
    }

    pub fn predict(&self, u: f64) -> f64 {
        self.support
            .iter()
            .zip(&self.dual_coeffs)
            .map(|(p, c)| self.kernel.eval(p.u, u) * c)
            .sum()
    }

    pub fn kernel_vector(&self, u: f64) -> Vec<f64> {
        self.support.iter().map(|p| self.kernel.eval(p.u, u)).collect()
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn abscissae(&self) -> Vec<f64> {
        self.support.iter().map(|p| p.u).collect()
    }
}

/// Sizes up to this solve by Cholesky; larger systems use conjugate
/// gradients (eigenvalues lie in [tλ, tλ + Σw], so few iterations suffice)
/// with Cholesky as the fallback.
const DIRECT_SOLVE_MAX: usize = 64;
const CG_TOL: f64 = 1e-13;

/// Solves (S K S + ridge·I) z = rhs.
fn solve_symmetric(gram: &Gram, s: &[f64], ridge: f64, rhs: &[f64], warm: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = s.len();
    if n > DIRECT_SOLVE_MAX {
        let x0 = warm.map(|c| {
            (0..n)
                .map(|i| c.get(i).map_or(0.0, |ci| ci / s[i]))
                .collect::<Vec<f64>>()
        });
        let apply = |x: &[f64], out: &mut [f64]| {
            let sx: Vec<f64> = x.iter().zip(s).map(|(xi, si)| xi * si).collect();
            for i in 0..n {
                out[i] = s[i] * dot(gram.row(i), &sx) + ridge * x[i];
            }
        };
        if let Some(z) = conjugate_gradient(apply, rhs, x0.as_deref(), CG_TOL, 4 * n.min(250)) {
            return Ok(z);
        }
    }
    let mut sys = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sys[i * n + j] = s[i] * gram.get(i, j) * s[j];
        }
    }
    Ok(Cholesky::factor_row_major(n, &sys, ridge)?.solve(rhs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandwidth_examples() {
        let b = median_bandwidth(&[0.0, 1.0, 3.0], 100).unwrap();
        assert_eq!(b, Bandwidth { value: 2.0, degenerate: false });
        let b = median_bandwidth(&[5.0, 5.0, 5.0], 100).unwrap();
        assert_eq!(b, Bandwidth { value: 1.0, degenerate: true });
        assert_eq!(median_bandwidth(&[0.0, 1.0], 100).unwrap().value, 1.0);
        assert!(median_bandwidth(&[1.0], 100).is_err());
    }

    #[test]
    fn strided_subsample_visits_valid_pairs() {
        let us: Vec<f64> = (0..50).map(|i| i as f64).collect();
        // 1225 pairs, cap 100; the full median is 17 (lower median of |i−j|)
        let b = median_bandwidth(&us, 100).unwrap();
        assert!(b.value >= 1.0 && b.value <= 49.0);
        let full = median_bandwidth(&us, 10_000).unwrap();
        assert!((b.value - full.value).abs() <= 4.0);
        assert_eq!(median_bandwidth(&us, 100).unwrap(), b);
    }

    #[test]
    fn ridge_schedule_examples() {
        assert_eq!(ridge_schedule(1, 0.05), 1.0);
        assert!((ridge_schedule(1000, 0.05) - 0.707_945_784).abs() < 1e-8);
        assert_eq!(ridge_schedule(123, 0.0), 1.0);
    }

    #[test]
    fn single_point_fit() {
        let k = GaussianKernel::new(1.0).unwrap();
        for lambda in [0.1, 1.0, 3.0] {
            let m = KrrModel::fit(&[SupportPoint { u: 0.0, y: 1.0, w: 1.0 }], lambda, k).unwrap();
            assert!((m.predict(0.0) - 1.0 / (1.0 + lambda)).abs() < 1e-14);
        }
    }

    #[test]
    fn large_ridge_shrinks_to_zero() {
        let k = GaussianKernel::new(1.0).unwrap();
        let sup: Vec<SupportPoint> = (0..5).map(|i| SupportPoint { u: i as f64, y: 1.0 + i as f64, w: 1.0 }).collect();
        let m = KrrModel::fit(&sup, 1e12, k).unwrap();
        for u in [-1.0, 0.0, 2.5, 10.0] {
            assert!(m.predict(u).abs() < 1e-10);
        }
    }

    #[test]
    fn antisymmetric_pair_predicts_zero_at_origin() {
        let k = GaussianKernel::new(0.7).unwrap();
        let sup = [SupportPoint { u: -1.0, y: -1.0, w: 1.0 }, SupportPoint { u: 1.0, y: 1.0, w: 1.0 }];
        let m = KrrModel::fit(&sup, 0.3, k).unwrap();
        assert!(m.predict(0.0).abs() < 1e-15);
        assert!(m.predict(50.0).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_rows_are_dropped() {
        let k = GaussianKernel::new(1.0).unwrap();
        let sup = [SupportPoint { u: 0.0, y: 1.0, w: 1.0 }, SupportPoint { u: 0.3, y: 9.0, w: 0.0 }];
        let m = KrrModel::fit(&sup, 1.0, k).unwrap();
        assert_eq!(m.len(), 1);
        assert!((m.predict(0.0) - 0.5).abs() < 1e-15);
        assert!(KrrModel::fit(&[SupportPoint { u: 0.0, y: 1.0, w: 0.0 }], 1.0, k).is_err());
        assert!(KrrModel::fit(&sup, 0.0, k).is_err());
    }

    #[test]
    fn gram_growth_matches_batch() {
        let k = GaussianKernel::new(0.8).unwrap();
        let us: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let mut g = Gram::new(&k, &[]);
        for i in 0..us.len() {
            g.push(&k, &us[..i], us[i]);
        }
        let batch = Gram::new(&k, &us);
        assert_eq!(g.to_dense(), batch.to_dense());
        for i in 0..us.len() {
            for j in 0..us.len() {
                assert_eq!(g.get(i, j), k.eval(us[i], us[j]));
            }
        }
    }

    #[test]
    fn iterative_and_direct_solves_agree() {
        let k = GaussianKernel::new(0.5).unwrap();
        let sup: Vec<SupportPoint> = (0..150)
            .map(|i| {
                let u = (i as f64 * 0.713).sin() * 2.0;
                SupportPoint { u, y: u.tanh() + 0.1 * (i as f64).cos(), w: 1.0 + (i % 7) as f64 }
            })
            .collect();
        let us: Vec<f64> = sup.iter().map(|p| p.u).collect();
        let gram = Gram::new(&k, &us);
        let m = KrrModel::fit_with_gram(sup.clone(), &gram, 0.3, k, sup.len(), None).unwrap();
        let s: Vec<f64> = sup.iter().map(|p| p.w.sqrt()).collect();
        let n = sup.len();
        let mut sys = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                sys[i * n + j] = s[i] * gram.get(i, j) * s[j];
            }
        }
        let rhs: Vec<f64> = sup.iter().zip(&s).map(|(p, si)| si * p.y).collect();
        let z = Cholesky::factor_row_major(n, &sys, n as f64 * 0.3).unwrap().solve(&rhs);
        for i in 0..n {
            assert!((m.dual_coeffs[i] - z[i] * s[i]).abs() < 1e-11);
        }
        let warm = KrrModel::fit_with_gram(sup, &gram, 0.3, k, n, Some(&m.dual_coeffs)).unwrap();
        for (a, b) in warm.dual_coeffs.iter().zip(&m.dual_coeffs) {
            assert!((a - b).abs() < 1e-11);
        }
    }
}
