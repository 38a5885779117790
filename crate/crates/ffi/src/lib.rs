//! C interface to the spacing estimator.
//!
//! Handles are opaque and owned by the caller once created; release them with
//! the matching `*_free`. Every fallible call returns a [`GmspStatus`]; the
//! text of the most recent failure on the calling thread is available from
//! [`gmsp_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use gmsp::asymvar::variance_constant;
use gmsp::ballint::{BallQuadrature, DEFAULT_NODES};
use gmsp::estimator::{gmsp_estimate, spacing_score, EstimatorConfig};
use gmsp::geometry::nn_table;
use gmsp::{DivergenceSpec, GmspError, ModelFamily, ParamVector, PointCloud};

/// Result codes shared by every function in this interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GmspStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfBounds = 3,
    DimensionMismatch = 4,
    NotConverged = 5,
    TooManyDropped = 6,
    Numerical = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// A model family such as `normal`, `mvnormal:3` or `mixture:2:1`.
pub struct GmspModel {
    family: ModelFamily,
}

/// An immutable set of observations.
pub struct GmspCloud {
    cloud: PointCloud,
}

/// Summary of a fit; parameters are written to a caller-supplied buffer.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GmspFit {
    pub score: f64,
    pub iterations: usize,
    pub converged_starts: usize,
    pub dropped: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &GmspError) -> GmspStatus {
    match e {
        GmspError::OutOfBounds { .. } | GmspError::ParamCount { .. } => GmspStatus::OutOfBounds,
        GmspError::DimensionMismatch { .. } => GmspStatus::DimensionMismatch,
        GmspError::NotConverged { .. } => GmspStatus::NotConverged,
        GmspError::TooManyDropped { .. } => GmspStatus::TooManyDropped,
        GmspError::Quadrature { .. } => GmspStatus::Numerical,
        _ => GmspStatus::InvalidArgument,
    }
}

fn fail(status: GmspStatus, msg: impl Into<String>) -> GmspStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Result<(), GmspStatus>) -> GmspStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GmspStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(GmspStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: gmsp::Result<T>) -> Result<T, GmspStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, GmspStatus> {
    if s.is_null() {
        return Err(fail(GmspStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(GmspStatus::InvalidArgument, "string is not valid UTF-8"))
}

unsafe fn read_slice<'a>(p: *const f64, len: usize) -> Result<&'a [f64], GmspStatus> {
    if p.is_null() {
        return Err(fail(GmspStatus::NullPointer, "null array argument"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn read_ref<'a, T>(p: *const T) -> Result<&'a T, GmspStatus> {
    p.as_ref().ok_or_else(|| fail(GmspStatus::NullPointer, "null handle"))
}

fn parse_h(s: &str) -> Result<DivergenceSpec, GmspStatus> {
    lift(s.parse::<DivergenceSpec>())
}

fn theta_for(family: &ModelFamily, values: &[f64]) -> Result<ParamVector, GmspStatus> {
    let theta = ParamVector(values.to_vec());
    lift(family.check_bounds(&theta))?;
    Ok(theta)
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn gmsp_status_string(status: GmspStatus) -> *const c_char {
    let s: &'static CStr = match status {
        GmspStatus::Ok => c"ok",
        GmspStatus::NullPointer => c"null pointer",
        GmspStatus::InvalidArgument => c"invalid argument",
        GmspStatus::OutOfBounds => c"parameter out of bounds",
        GmspStatus::DimensionMismatch => c"dimension mismatch",
        GmspStatus::NotConverged => c"optimization did not converge",
        GmspStatus::TooManyDropped => c"too many ball probabilities underflowed",
        GmspStatus::Numerical => c"numerical tolerance not reached",
        GmspStatus::BufferTooSmall => c"buffer too small",
        GmspStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Message for the last failure on this thread. The pointer stays valid until
/// the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn gmsp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gmsp_model_new(name: *const c_char, out: *mut *mut GmspModel) -> GmspStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(GmspStatus::NullPointer, "null output pointer"));
        }
        let family = lift(read_str(name)?.parse::<ModelFamily>())?;
        *out = Box::into_raw(Box::new(GmspModel { family }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`gmsp_model_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gmsp_model_free(model: *mut GmspModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of parameters, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gmsp_model_n_params(model: *const GmspModel) -> usize {
    model.as_ref().map_or(0, |m| m.family.n_params())
}

/// Observation dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gmsp_model_dim(model: *const GmspModel) -> usize {
    model.as_ref().map_or(0, |m| m.family.dim())
}

/// Density at `x` (length `dim`) under parameters `theta` (length `n_params`).
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn gmsp_model_density(
    model: *const GmspModel,
    theta: *const f64,
    n_params: usize,
    x: *const f64,
    dim: usize,
    out: *mut f64,
) -> GmspStatus {
    guard(|| {
        let m = read_ref(model)?;
        if out.is_null() {
            return Err(fail(GmspStatus::NullPointer, "null output pointer"));
        }
        let theta = theta_for(&m.family, read_slice(theta, n_params)?)?;
        let x = read_slice(x, dim)?;
        if dim != m.family.dim() {
            return Err(fail(GmspStatus::DimensionMismatch, format!("x has {dim} coordinates, model has {}", m.family.dim())));
        }
        *out = lift(m.family.density(&theta, x))?;
        Ok(())
    })
}

/// Draw `n` observations into `out` (row-major, `n * dim` values).
///
/// # Safety
/// `theta` must hold `n_params` values and `out` must hold `out_len`.
#[no_mangle]
pub unsafe extern "C" fn gmsp_model_sample(
    model: *const GmspModel,
    theta: *const f64,
    n_params: usize,
    n: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> GmspStatus {
    guard(|| {
        let m = read_ref(model)?;
        let theta = theta_for(&m.family, read_slice(theta, n_params)?)?;
        if out.is_null() {
            return Err(fail(GmspStatus::NullPointer, "null output buffer"));
        }
        let need = n * m.family.dim();
        if out_len < need {
            return Err(fail(GmspStatus::BufferTooSmall, format!("need {need} values, buffer holds {out_len}")));
        }
        let cloud = lift(m.family.sample(&theta, n, seed))?;
        std::slice::from_raw_parts_mut(out, need).copy_from_slice(cloud.as_slice());
        Ok(())
    })
}

/// Copy `n * dim` row-major coordinates into a new point cloud.
///
/// # Safety
/// `data` must hold `n * dim` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gmsp_cloud_new(data: *const f64, n: usize, dim: usize, out: *mut *mut GmspCloud) -> GmspStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(GmspStatus::NullPointer, "null output pointer"));
        }
        let len = n.checked_mul(dim).ok_or_else(|| fail(GmspStatus::InvalidArgument, "size overflow"))?;
        let values = read_slice(data, len)?.to_vec();
        let cloud = lift(PointCloud::new(values, dim))?;
        *out = Box::into_raw(Box::new(GmspCloud { cloud }));
        Ok(())
    })
}

/// # Safety
/// `cloud` must come from [`gmsp_cloud_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gmsp_cloud_free(cloud: *mut GmspCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Number of observations, or 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gmsp_cloud_len(cloud: *const GmspCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.cloud.n())
}

/// Spacing score `S_n(θ)` for divergence `h` (e.g. `"h1"`, `"h5:0.5"`).
///
/// # Safety
/// Handles must be live; `theta` must hold `n_params` values.
#[no_mangle]
pub unsafe extern "C" fn gmsp_score(
    model: *const GmspModel,
    cloud: *const GmspCloud,
    h: *const c_char,
    theta: *const f64,
    n_params: usize,
    out: *mut f64,
) -> GmspStatus {
    guard(|| {
        let m = read_ref(model)?;
        let c = read_ref(cloud)?;
        let h = parse_h(read_str(h)?)?;
        let theta = theta_for(&m.family, read_slice(theta, n_params)?)?;
        if out.is_null() {
            return Err(fail(GmspStatus::NullPointer, "null output pointer"));
        }
        let nn = lift(nn_table(&c.cloud))?;
        let quad = lift(BallQuadrature::new(m.family.dim(), DEFAULT_NODES, 0))?;
        *out = lift(spacing_score(&m.family, &theta, &c.cloud, &nn, &quad, &h))?;
        Ok(())
    })
}

/// Fit the model; the estimate is written to `theta_out` (length `n_params`).
///
/// On [`GmspStatus::NotConverged`] the best point found is still written.
///
/// # Safety
/// Handles must be live; `theta_out` must hold `n_params` values; `fit` may be null.
#[no_mangle]
pub unsafe extern "C" fn gmsp_fit(
    model: *const GmspModel,
    cloud: *const GmspCloud,
    h: *const c_char,
    seed: u64,
    theta_out: *mut f64,
    n_params: usize,
    fit: *mut GmspFit,
) -> GmspStatus {
    guard(|| {
        let m = read_ref(model)?;
        let c = read_ref(cloud)?;
        let h = parse_h(read_str(h)?)?;
        if theta_out.is_null() {
            return Err(fail(GmspStatus::NullPointer, "null output buffer"));
        }
        let q = m.family.n_params();
        if n_params < q {
            return Err(fail(GmspStatus::BufferTooSmall, format!("need {q} values, buffer holds {n_params}")));
        }
        let out = std::slice::from_raw_parts_mut(theta_out, q);
        let config = EstimatorConfig { seed, diagnostics: vec![], ..Default::default() };
        match gmsp_estimate(&m.family, &c.cloud, &h, &config) {
            Ok(r) => {
                out.copy_from_slice(&r.theta_hat.0);
                if let Some(f) = fit.as_mut() {
                    *f = GmspFit {
                        score: r.score,
                        iterations: r.iterations,
                        converged_starts: r.converged_starts,
                        dropped: r.dropped_count,
                    };
                }
                Ok(())
            }
            Err(e) => {
                if let GmspError::NotConverged { best_theta, best_score, .. } = &e {
                    out.copy_from_slice(best_theta);
                    if let Some(f) = fit.as_mut() {
                        *f = GmspFit { score: *best_score, ..Default::default() };
                    }
                }
                Err(fail(status_of(&e), e.to_string()))
            }
        }
    })
}

/// Asymptotic variance constant `σ_q² / b_h²` in dimension `d`.
///
/// # Safety
/// `h` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gmsp_variance_constant(h: *const c_char, d: usize, out: *mut f64) -> GmspStatus {
    guard(|| {
        let h = parse_h(read_str(h)?)?;
        if out.is_null() {
            return Err(fail(GmspStatus::NullPointer, "null output pointer"));
        }
        if d == 0 {
            return Err(fail(GmspStatus::InvalidArgument, "dimension must be positive"));
        }
        *out = lift(variance_constant(&h, d))?.ratio;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn every_status_has_text() {
        for s in [GmspStatus::Ok, GmspStatus::NullPointer, GmspStatus::Panic, GmspStatus::BufferTooSmall] {
            let t = unsafe { CStr::from_ptr(gmsp_status_string(s)) };
            assert!(!t.to_bytes().is_empty());
        }
    }

    #[test]
    fn errors_are_recorded_per_thread() {
        let mut m = ptr::null_mut();
        let st = unsafe { gmsp_model_new(c"bogus".as_ptr(), &mut m) };
        assert_eq!(st, GmspStatus::InvalidArgument);
        assert!(m.is_null());
        let msg = unsafe { CStr::from_ptr(gmsp_last_error()) }.to_string_lossy().into_owned();
        assert!(msg.contains("bogus"), "{msg}");
        std::thread::spawn(|| {
            assert!(unsafe { CStr::from_ptr(gmsp_last_error()) }.to_bytes().is_empty());
        })
        .join()
        .unwrap();
    }
}
