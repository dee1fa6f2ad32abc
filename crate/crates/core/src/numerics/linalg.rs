use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense symmetric matrix stored row-major in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = v;
        }
        m
    }

    /// Builds from rows; fails unless the rows form an exactly symmetric square matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::Domain("matrix rows must be square".into()));
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(dim, data)
    }

    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::Domain(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                data.len()
            )));
        }
        for i in 0..dim {
            for j in 0..i {
                if data[i * dim + j] != data[j * dim + i] {
                    return Err(Error::Domain(format!("matrix not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(SymMatrix { dim, data })
    }

    /// Symmetrizes `(M + Mᵀ)/2` from an arbitrary square row-major buffer.
    pub fn symmetrize(dim: usize, mut data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * dim);
        for i in 0..dim {
            for j in 0..i {
                let v = 0.5 * (data[i * dim + j] + data[j * dim + i]);
                data[i * dim + j] = v;
                data[j * dim + i] = v;
            }
        }
        SymMatrix { dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// self += scale · v vᵀ
    pub fn add_outer(&mut self, scale: f64, v: &[f64]) {
        debug_assert_eq!(v.len(), self.dim);
        let n = self.dim;
        for i in 0..n {
            let a = scale * v[i];
            for j in 0..=i {
                self.data[i * n + j] += a * v[j];
            }
        }
        for i in 0..n {
            for j in 0..i {
                self.data[j * n + i] = self.data[i * n + j];
            }
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        SymMatrix {
            dim: self.dim,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add_ridge(&mut self, ridge: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += ridge;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.matvec(x))
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `B M Bᵀ` for a square row-major `B` of the same dimension.
    pub fn congruence(&self, b: &[f64]) -> SymMatrix {
        let n = self.dim;
        assert_eq!(b.len(), n * n);
        // tmp = B M
        let mut tmp = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let bik = b[i * n + k];
                if bik == 0.0 {
                    continue;
                }
                let mrow = self.row(k);
                let out = &mut tmp[i * n..(i + 1) * n];
                for j in 0..n {
                    out[j] += bik * mrow[j];
                }
            }
        }
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = dot(&tmp[i * n..(i + 1) * n], &b[j * n..(j + 1) * n]);
            }
        }
        SymMatrix::symmetrize(n, out)
    }
}

/// Dot product with four interleaved accumulators (fixed order, so deterministic).
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

/// Lower Cholesky factor of `A + ridge·I` (plus the jitter, if one was needed).
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
    jittered: bool,
}

impl Cholesky {
    /// Factors `A + ridge·I`. On failure retries once with an extra
    /// `1e-10·trace/dim` on the diagonal before giving up.
    pub fn factor(a: &SymMatrix, ridge: f64) -> Result<Self> {
        Self::factor_row_major(a.dim, &a.data, ridge)
    }

    pub(crate) fn factor_row_major(dim: usize, data: &[f64], ridge: f64) -> Result<Self> {
        match Self::try_factor(dim, data, ridge) {
            Ok(lower) => Ok(Cholesky {
                dim,
                lower,
                jittered: false,
            }),
            Err(first) => {
                let trace: f64 = (0..dim).map(|i| data[i * dim + i]).sum::<f64>() + ridge * dim as f64;
                let jitter = 1e-10 * trace / dim.max(1) as f64;
                if !(jitter > 0.0) {
                    return Err(first);
                }
                Self::try_factor(dim, data, ridge + jitter).map(|lower| Cholesky {
                    dim,
                    lower,
                    jittered: true,
                })
            }
        }
    }

    fn try_factor(n: usize, data: &[f64], ridge: f64) -> Result<Vec<f64>> {
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let (row_i, row_j) = if i == j {
                    (&l[i * n..i * n + j], &l[j * n..j * n + j])
                } else {
                    let (head, tail) = l.split_at(i * n);
                    (&tail[..j], &head[j * n..j * n + j])
                };
                let mut s = data[i * n + j] - dot(row_i, row_j);
                if i == j {
                    s += ridge;
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Singular { pivot: s, row: i });
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(l)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn jittered(&self) -> bool {
        self.jittered
    }

    /// Solves L y = b in place.
    pub fn forward_in_place(&self, b: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let s = b[i] - dot(&self.lower[i * n..i * n + i], &b[..i]);
            b[i] = s / self.lower[i * n + i];
        }
    }

    /// Solves Lᵀ x = y in place.
    pub fn backward_in_place(&self, y: &mut [f64]) {
        let n = self.dim;
        for i in (0..n).rev() {
            let xi = y[i] / self.lower[i * n + i];
            y[i] = xi;
            let row = &self.lower[i * n..i * n + i];
            for (k, lk) in row.iter().enumerate() {
                y[k] -= lk * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward_in_place(&mut x);
        self.backward_in_place(&mut x);
        x
    }

    /// log det of the factored matrix.
    pub fn log_det(&self) -> f64 {
        (0..self.dim)
            .map(|i| 2.0 * self.lower[i * self.dim + i].ln())
            .sum()
    }
}

/// Solves `(A + ridge·I) x = b` by Cholesky.
pub fn solve_spd(a: &SymMatrix, b: &[f64], ridge: f64) -> Result<Vec<f64>> {
    if b.len() != a.dim() {
        return Err(Error::Domain(format!(
            "rhs length {} does not match matrix dimension {}",
            b.len(),
            a.dim()
        )));
    }
    if ridge < 0.0 {
        return Err(Error::Domain(format!("ridge must be nonnegative, got {ridge}")));
    }
    Ok(Cholesky::factor(a, ridge)?.solve(b))
}

/// Row-major dense matrix-vector product `out = M x` for an n×n `M`.
pub fn dense_matvec(n: usize, m: &[f64], x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate().take(n) {
        *o = dot(&m[i * n..(i + 1) * n], x);
    }
}

/// Conjugate gradients for an SPD operator. Stops when
/// `‖b − A x‖ ≤ tol·(1 + ‖b‖)`; returns `None` if that does not happen
/// within `max_iter` steps.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Option<Vec<f64>> {
    let n = b.len();
    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0.to_vec(),
        _ => vec![0.0; n],
    };
    let target = tol * (1.0 + dot(b, b).sqrt());
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut rr = dot(&r, &r);
    if rr.sqrt() <= target {
        return Some(x);
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return None;
        }
        let a = rr / pap;
        for i in 0..n {
            x[i] += a * p[i];
            r[i] -= a * ap[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= target {
            // confirm against the true residual, not the recursive one
            apply(&x, &mut ax);
            let true_rr: f64 = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai) * (bi - ai)).sum();
            if true_rr.sqrt() <= target {
                return Some(x);
            }
            for i in 0..n {
                r[i] = b[i] - ax[i];
            }
            rr = dot(&r, &r);
            p.copy_from_slice(&r);
            continue;
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    None
}

/// Eigen-decomposition by cyclic Jacobi rotations. Returns eigenvalues in
/// ascending order and the matching unit eigenvectors (as rows).
pub fn sym_eigen(a: &SymMatrix) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.dim();
    let mut m = a.data.clone();
    let mut v = SymMatrix::identity(n).data;
    let scale = a.max_abs();
    if n > 1 && scale > 0.0 {
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..i).map(move |j| (i, j)))
                .map(|(i, j)| m[i * n + j] * m[i * n + j])
                .sum();
            if off.sqrt() <= 1e-15 * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = m[p * n + q];
                    if apq.abs() <= 1e-300 {
                        continue;
                    }
                    let app = m[p * n + p];
                    let aqq = m[q * n + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[k * n + p];
                        let mkq = m[k * n + q];
                        m[k * n + p] = c * mkp - s * mkq;
                        m[k * n + q] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[p * n + k];
                        let mqk = m[q * n + k];
                        m[p * n + k] = c * mpk - s * mqk;
                        m[q * n + k] = s * mpk + c * mqk;
                    }
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&j| (0..n).map(|k| v[k * n + j]).collect())
        .collect();
    (values, vectors)
}

pub fn min_eigenvalue(a: &SymMatrix) -> f64 {
    if a.dim() == 0 {
        return f64::NAN;
    }
    sym_eigen(a).0[0]
}
