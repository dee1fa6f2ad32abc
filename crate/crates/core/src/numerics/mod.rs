//! Small deterministic numerical kernel: seeded streams, quantile
//! functions, dense symmetric solves and eigenvalues, order statistics.

mod linalg;
mod rng;
mod special;
mod stats;

pub use linalg::{conjugate_gradient, dense_matvec, dot, min_eigenvalue, solve_spd, sym_eigen, Cholesky, SymMatrix};
pub use rng::Rng;
pub use special::{chi2_cdf, chi2_quantile, ln_gamma, normal_cdf, normal_quantile, regularized_gamma_p};
pub use stats::{lower_median, median};
