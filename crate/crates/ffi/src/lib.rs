//! C ABI over the ksib library.
//!
//! Every entry point returns a `KsibStatus`; on anything but
//! `KSIB_STATUS_OK` the message is available from `ksib_last_error` on
//! the calling thread. Handles are opaque and owned by the caller, who
//! releases them with the matching `_free` function. Outputs are written
//! only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use ksib::kernel_ridge::{median_bandwidth, GaussianKernel, KrrModel, SupportPoint, DEFAULT_PAIR_CAP};
use ksib::numerics::{chi2_quantile, normal_quantile, Rng};
use ksib::policy::{Decision, PolicyConfig, PolicyState};
use ksib::score::ScoreModel;
use ksib::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsibStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Singular = 3,
    InvalidState = 4,
    Io = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let mut bytes = msg.into();
    bytes.retain(|&b| b != 0);
    let c = CString::new(bytes).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> KsibStatus {
    match e {
        Error::Domain(_) | Error::Config(_) => KsibStatus::InvalidArgument,
        Error::Singular { .. } | Error::SingularGram { .. } | Error::Degenerate(_) => KsibStatus::Singular,
        Error::State(_) => KsibStatus::InvalidState,
        _ => KsibStatus::Io,
    }
}

/// Runs `f`, translating errors and panics into a status and last-error text.
fn guard(f: impl FnOnce() -> Result<(), (KsibStatus, String)>) -> KsibStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            KsibStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            KsibStatus::Panic
        }
    }
}

fn lib(e: Error) -> (KsibStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (KsibStatus, String) {
    (KsibStatus::NullPointer, format!("{name} is null"))
}

/// # Safety
/// `p` is null or valid for `len` reads.
unsafe fn input<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], (KsibStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// Message for the most recent failed call on this thread; empty after a
/// success. Valid until the next ksib call on the same thread.
#[no_mangle]
pub extern "C" fn ksib_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ksib_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Standard normal quantile Φ⁻¹(p) for p in (0, 1).
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ksib_normal_quantile(p: f64, out: *mut f64) -> KsibStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = normal_quantile(p).map_err(lib)?;
        Ok(())
    })
}

/// Chi-square quantile with `dof` ≥ 1 degrees of freedom.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ksib_chi_square_quantile(p: f64, dof: u32, out: *mut f64) -> KsibStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = chi2_quantile(p, dof).map_err(lib)?;
        Ok(())
    })
}

/// Opaque weighted kernel ridge fit.
pub struct KsibKrr {
    model: KrrModel,
}

/// Fits weighted kernel ridge regression with a Gaussian kernel on `n`
/// points. `bandwidth` ≤ 0 selects the median heuristic; `weights` may be
/// null for unit weights.
///
/// # Safety
/// `us` and `ys` are valid for `n` reads, `weights` is null or valid for
/// `n` reads, and `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ksib_krr_fit(
    us: *const f64,
    ys: *const f64,
    weights: *const f64,
    n: usize,
    bandwidth: f64,
    lambda: f64,
    out: *mut *mut KsibKrr,
) -> KsibStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if n == 0 {
            return Err((KsibStatus::InvalidArgument, "n must be positive".into()));
        }
        let u = input(us, n, "us")?;
        let y = input(ys, n, "ys")?;
        let w = if weights.is_null() { None } else { Some(input(weights, n, "weights")?) };
        let h = if bandwidth > 0.0 {
            bandwidth
        } else {
            median_bandwidth(u, DEFAULT_PAIR_CAP).map_err(lib)?.value
        };
        let kernel = GaussianKernel::new(h).map_err(lib)?;
        let support: Vec<SupportPoint> = (0..n)
            .map(|i| SupportPoint {
                u: u[i],
                y: y[i],
                w: w.map_or(1.0, |w| w[i]),
            })
            .collect();
        let model = KrrModel::fit(&support, lambda, kernel).map_err(lib)?;
        *out = Box::into_raw(Box::new(KsibKrr { model }));
        Ok(())
    })
}

/// # Safety
/// `krr` is a live handle from `ksib_krr_fit`; `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ksib_krr_predict(krr: *const KsibKrr, u: f64, out: *mut f64) -> KsibStatus {
    guard(|| {
        let h = krr.as_ref().ok_or_else(|| null("krr"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if !u.is_finite() {
            return Err((KsibStatus::InvalidArgument, format!("u is not finite ({u})")));
        }
        *out = h.model.predict(u);
        Ok(())
    })
}

/// # Safety
/// `krr` is null or a handle from `ksib_krr_fit` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ksib_krr_free(krr: *mut KsibKrr) {
    if !krr.is_null() {
        drop(Box::from_raw(krr));
    }
}

/// Opaque ε-greedy single-index policy. Each round is a
/// `ksib_policy_decide` followed by one `ksib_policy_observe`.
pub struct KsibPolicy {
    state: PolicyState,
    pending: Option<(Decision, Vec<f64>)>,
}

/// A policy over `arms` arms and `dim`-dimensional contexts with a
/// standard Gaussian score and the default schedule.
///
/// # Safety
/// `out` is valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ksib_policy_new(
    arms: usize,
    dim: usize,
    warm_start: usize,
    seed: u64,
    out: *mut *mut KsibPolicy,
) -> KsibStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if dim == 0 {
            return Err((KsibStatus::InvalidArgument, "dim must be positive".into()));
        }
        let cfg = PolicyConfig {
            arms,
            warm_start,
            ..PolicyConfig::default()
        };
        let state = PolicyState::new(cfg, ScoreModel::standard_gaussian(dim), Rng::new(seed)).map_err(lib)?;
        *out = Box::into_raw(Box::new(KsibPolicy { state, pending: None }));
        Ok(())
    })
}

/// Chooses an arm for context `x` of length `dim`. Writes the pulled arm
/// and its propensity; either output may be null.
///
/// # Safety
/// `policy` is a live handle, `x` is valid for `dim` reads, outputs are
/// null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn ksib_policy_decide(
    policy: *mut KsibPolicy,
    x: *const f64,
    dim: usize,
    arm_out: *mut usize,
    propensity_out: *mut f64,
) -> KsibStatus {
    guard(|| {
        let p = policy.as_mut().ok_or_else(|| null("policy"))?;
        if p.pending.is_some() {
            return Err((KsibStatus::InvalidState, "previous decision has not been observed".into()));
        }
        if dim != p.state.dim() {
            return Err((
                KsibStatus::InvalidArgument,
                format!("context has {dim} coordinates, expected {}", p.state.dim()),
            ));
        }
        let x = input(x, dim, "x")?.to_vec();
        let d = p.state.decide(&x).map_err(lib)?;
        if !arm_out.is_null() {
            *arm_out = d.pulled_arm;
        }
        if !propensity_out.is_null() {
            *propensity_out = d.propensity;
        }
        p.pending = Some((d, x));
        Ok(())
    })
}

/// Feeds back the reward of the arm chosen by the last decision.
///
/// # Safety
/// `policy` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn ksib_policy_observe(policy: *mut KsibPolicy, reward: f64) -> KsibStatus {
    guard(|| {
        let p = policy.as_mut().ok_or_else(|| null("policy"))?;
        let (d, x) = p
            .pending
            .take()
            .ok_or_else(|| (KsibStatus::InvalidState, "no decision awaiting a reward".to_string()))?;
        if let Err(e) = p.state.observe(d, &x, reward) {
            p.pending = Some((d, x));
            return Err(lib(e));
        }
        Ok(())
    })
}

/// Completed rounds, or 0 for a null handle.
///
/// # Safety
/// `policy` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ksib_policy_rounds(policy: *const KsibPolicy) -> usize {
    policy.as_ref().map_or(0, |p| p.state.rounds())
}

/// Current estimated direction of `arm`, written to `out` of length `dim`.
/// Fails before the arm has an estimate.
///
/// # Safety
/// `policy` is a live handle and `out` is valid for `dim` writes.
#[no_mangle]
pub unsafe extern "C" fn ksib_policy_direction(
    policy: *const KsibPolicy,
    arm: usize,
    out: *mut f64,
    dim: usize,
) -> KsibStatus {
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if arm >= p.state.arms().len() {
            return Err((KsibStatus::InvalidArgument, format!("arm {arm} out of range")));
        }
        if dim != p.state.dim() {
            return Err((
                KsibStatus::InvalidArgument,
                format!("buffer has {dim} slots, expected {}", p.state.dim()),
            ));
        }
        let b = p
            .state
            .arm(arm)
            .direction()
            .ok_or_else(|| (KsibStatus::InvalidState, format!("arm {arm} has no estimate yet")))?;
        ptr::copy_nonoverlapping(b.as_ptr(), out, dim);
        Ok(())
    })
}

/// # Safety
/// `policy` is null or a handle from `ksib_policy_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ksib_policy_free(policy: *mut KsibPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}
