//! C interface to `nikodym-lab`.
//!
//! Objects cross the boundary as opaque handles (`NlPatch`, `NlRun`) that
//! the caller releases with the matching `*_free` function. Every fallible
//! call returns an [`NlStatus`]; on failure a description is available from
//! [`nl_last_error_message`] on the same thread. Arrays are passed as
//! pointer plus length; matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use nikodym_lab::curvature::curvature_component;
use nikodym_lab::distance::dist;
use nikodym_lab::geodesic::{closed_form_fan, fan_jacobian, flow, FanParams, PhasePoint};
use nikodym_lab::harness::{run, ExperimentConfig, RunResults};
use nikodym_lab::metric::{AlphaProfile, Family, MetricPatch};
use nikodym_lab::oscillatory::exponent_threshold;
use nikodym_lab::LabError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NlStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Singular = 3,
    LeftBox = 4,
    Instability = 5,
    Convergence = 6,
    Ambiguity = 7,
    DegenerateTube = 8,
    Resolution = 9,
    CounterexampleViolation = 10,
    Config = 11,
    Io = 12,
    Internal = 13,
    Panic = 14,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NlFamily {
    Euclidean = 0,
    ThreeD = 1,
    OddFocus = 2,
    EvenFocus = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NlProfile {
    ExpFlat = 0,
    Monomial = 1,
}

/// Opaque metric patch.
pub struct NlPatch {
    inner: MetricPatch,
}

/// Opaque result bundle of a harness run.
pub struct NlRun {
    inner: RunResults,
    summary: CString,
    csv: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap_or_default());
}

fn status_of(e: &LabError) -> NlStatus {
    match e {
        LabError::Domain(_) => NlStatus::Domain,
        LabError::Singular { .. } => NlStatus::Singular,
        LabError::Internal(_) => NlStatus::Internal,
        LabError::LeftBox { .. } => NlStatus::LeftBox,
        LabError::Instability { .. } => NlStatus::Instability,
        LabError::Convergence { .. } => NlStatus::Convergence,
        LabError::Ambiguity { .. } => NlStatus::Ambiguity,
        LabError::DegenerateTube => NlStatus::DegenerateTube,
        LabError::Resolution(_) => NlStatus::Resolution,
        LabError::CounterexampleViolation { .. } => NlStatus::CounterexampleViolation,
        LabError::Config(_) => NlStatus::Config,
        LabError::Io(_) => NlStatus::Io,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), NlFail>>(f: F) -> NlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NlStatus::Ok
        }
        Ok(Err(NlFail::Lab(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Ok(Err(NlFail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("panic inside nikodym-lab");
            NlStatus::Panic
        }
    }
}

enum NlFail {
    Lab(LabError),
    Status(NlStatus, &'static str),
}

impl From<LabError> for NlFail {
    fn from(e: LabError) -> Self {
        NlFail::Lab(e)
    }
}

const NULL: NlFail = NlFail::Status(NlStatus::NullPointer, "null pointer argument");

unsafe fn input<'a>(p: *const f64, len: usize) -> Result<&'a [f64], NlFail> {
    if p.is_null() && len > 0 {
        return Err(NULL);
    }
    if len == 0 {
        return Ok(&[]);
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize) -> Result<&'a mut [f64], NlFail> {
    if p.is_null() {
        return Err(NULL);
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn patch_ref<'a>(p: *const NlPatch) -> Result<&'a MetricPatch, NlFail> {
    p.as_ref().map(|h| &h.inner).ok_or(NULL)
}

fn dim_check(patch: &MetricPatch, n: usize) -> Result<(), NlFail> {
    if patch.dim() != n {
        return Err(NlFail::Lab(LabError::domain(format!(
            "array length {n} does not match patch dimension {}",
            patch.dim()
        ))));
    }
    Ok(())
}

fn family_of(f: NlFamily) -> Family {
    match f {
        NlFamily::Euclidean => Family::Euclidean,
        NlFamily::ThreeD => Family::ThreeD,
        NlFamily::OddFocus => Family::OddFocus,
        NlFamily::EvenFocus => Family::EvenFocus,
    }
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn nl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a patch; `k` is ignored for the exp-flat profile.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn nl_patch_new(
    family: NlFamily,
    n: usize,
    profile: NlProfile,
    k: u32,
    out: *mut *mut NlPatch,
) -> NlStatus {
    guard(|| {
        if out.is_null() {
            return Err(NULL);
        }
        let alpha = match profile {
            NlProfile::ExpFlat => AlphaProfile::exp_flat(),
            NlProfile::Monomial => AlphaProfile::monomial(k)?,
        };
        let inner = MetricPatch::new(family_of(family), n, alpha)?;
        *out = Box::into_raw(Box::new(NlPatch { inner }));
        Ok(())
    })
}

/// # Safety
/// `patch` must come from [`nl_patch_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nl_patch_free(patch: *mut NlPatch) {
    if !patch.is_null() {
        drop(Box::from_raw(patch));
    }
}

/// # Safety
/// `patch` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn nl_patch_dim(patch: *const NlPatch) -> usize {
    patch.as_ref().map_or(0, |p| p.inner.dim())
}

/// Writes the `n × n` cometric at `x` into `out`.
///
/// # Safety
/// `x` must hold `n` values and `out` must have room for `n * n`.
#[no_mangle]
pub unsafe extern "C" fn nl_cometric(patch: *const NlPatch, x: *const f64, n: usize, out: *mut f64) -> NlStatus {
    guard(|| {
        let p = patch_ref(patch)?;
        dim_check(p, n)?;
        let g = p.cometric(input(x, n)?)?;
        let out = output(out, n * n)?;
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = g[(i, j)];
            }
        }
        Ok(())
    })
}

/// # Safety
/// `x` and `xi` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nl_hamiltonian(
    patch: *const NlPatch,
    x: *const f64,
    xi: *const f64,
    n: usize,
    out: *mut f64,
) -> NlStatus {
    guard(|| {
        let p = patch_ref(patch)?;
        dim_check(p, n)?;
        output(out, 1)?[0] = p.hamiltonian(input(x, n)?, input(xi, n)?)?;
        Ok(())
    })
}

/// # Safety
/// `x` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nl_volume_density(patch: *const NlPatch, x: *const f64, n: usize, out: *mut f64) -> NlStatus {
    guard(|| {
        let p = patch_ref(patch)?;
        dim_check(p, n)?;
        output(out, 1)?[0] = p.volume_density(input(x, n)?)?;
        Ok(())
    })
}

/// Closed-form fan point at arclength `t`.
///
/// # Safety
/// `base` holds `nb` values, `theta` holds `nt` values, `out` has room for the patch dimension `n`.
#[no_mangle]
pub unsafe extern "C" fn nl_closed_form_fan(
    patch: *const NlPatch,
    base: *const f64,
    nb: usize,
    theta: *const f64,
    nt: usize,
    t: f64,
    out: *mut f64,
    n: usize,
) -> NlStatus {
    guard(|| {
        let p = patch_ref(patch)?;
        dim_check(p, n)?;
        let fan = FanParams::new(p.family(), input(base, nb)?.to_vec(), input(theta, nt)?.to_vec());
        let x = closed_form_fan(p, &fan, t)?;
        output(out, n)?.copy_from_slice(&x);
        Ok(())
    })
}

/// # Safety
/// As [`nl_closed_form_fan`], with a single output value.
#[no_mangle]
pub unsafe extern "C" fn nl_fan_jacobian(
    patch: *const NlPatch,
    base: *const f64,
    nb: usize,
    theta: *const f64,
    nt: usize,
    t: f64,
    out: *mut f64,
) -> NlStatus {
    guard(|| {
        let p = patch_ref(patch)?;
        let fan = FanParams::new(p.family(), input(base, nb)?.to_vec(), input(theta, nt)?.to_vec());
        output(out, 1)?[0] = fan_jacobian(p, &fan, t)?;
        Ok(())
    })
}

/// Integrates the geodesic from `(x, xi)` for arclength `t` (either sign)
/// and writes the final phase point.
///
/// # Safety
/// `x`, `xi`, `x_out` and `xi_out` must each hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn nl_flow_endpoint(
    patch: *const NlPatch,
    x: *const f64,
    xi: *const f64,
    n: usize,
    t: f64,
    step: f64,
    x_out: *mut f64,
    xi_out: *mut f64,
) -> NlStatus {
    guard(|| {
        let p = patch_ref(patch)?;
        dim_check(p, n)?;
        let start = PhasePoint::new(input(x, n)?.to_vec(), input(xi, n)?.to_vec());
        let span = if t >= 0.0 { (0.0, t) } else { (t, 0.0) };
        let path = flow(p, &start, span, step)?;
        let end = if t >= 0.0 { path.last() } else { &path.samples[0] };
        output(x_out, n)?.copy_from_slice(&end.x);
        output(xi_out, n)?.copy_from_slice(&end.xi);
        Ok(())
    })
}

/// Riemannian distance by shooting.
///
/// # Safety
/// `x` and `y` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nl_dist(
    patch: *const NlPatch,
    x: *const f64,
    y: *const f64,
    n: usize,
    out: *mut f64,
) -> NlStatus {
    guard(|| {
        let p = patch_ref(patch)?;
        dim_check(p, n)?;
        output(out, 1)?[0] = dist(p, input(x, n)?, input(y, n)?)?.length;
        Ok(())
    })
}

/// `R^upper_{lower[0] lower[1] lower[2]}` with 0-based indices.
///
/// # Safety
/// `lower` must hold 3 values, `x` must hold `n`, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nl_curvature_component(
    patch: *const NlPatch,
    upper: usize,
    lower: *const usize,
    x: *const f64,
    n: usize,
    h: f64,
    out: *mut f64,
) -> NlStatus {
    guard(|| {
        let p = patch_ref(patch)?;
        dim_check(p, n)?;
        if lower.is_null() {
            return Err(NULL);
        }
        let l = slice::from_raw_parts(lower, 3);
        output(out, 1)?[0] = curvature_component(p, upper, [l[0], l[1], l[2]], input(x, n)?, h)?;
        Ok(())
    })
}

/// Critical exponent as the reduced fraction `num / den`.
///
/// # Safety
/// `num` and `den` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nl_exponent_threshold(n: usize, num: *mut i64, den: *mut i64) -> NlStatus {
    guard(|| {
        if num.is_null() || den.is_null() {
            return Err(NULL);
        }
        let t = exponent_threshold(n)?.threshold;
        *num = *t.numer();
        *den = *t.denom();
        Ok(())
    })
}

/// Runs the experiment described by a TOML configuration string. Nothing
/// is written to disk; fetch the outputs with [`nl_run_summary_json`] and
/// [`nl_run_csv`].
///
/// # Safety
/// `config_toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nl_run_toml(config_toml: *const c_char, out: *mut *mut NlRun) -> NlStatus {
    guard(|| {
        if config_toml.is_null() || out.is_null() {
            return Err(NULL);
        }
        let text = CStr::from_ptr(config_toml)
            .to_str()
            .map_err(|_| NlFail::Status(NlStatus::Config, "configuration is not valid UTF-8"))?;
        let cfg = ExperimentConfig::from_toml_str(text)?;
        let inner = run(&cfg)?;
        let summary = CString::new(inner.summary_json()?).map_err(|_| NlFail::Status(NlStatus::Internal, "NUL in summary"))?;
        let csv = CString::new(inner.csv_string()?).map_err(|_| NlFail::Status(NlStatus::Internal, "NUL in csv"))?;
        *out = Box::into_raw(Box::new(NlRun { inner, summary, csv }));
        Ok(())
    })
}

/// 1 if every verdict of the run passed, 0 otherwise (or for null).
///
/// # Safety
/// `handle` must be a live run handle or null.
#[no_mangle]
pub unsafe extern "C" fn nl_run_passed(handle: *const NlRun) -> i32 {
    handle.as_ref().map_or(0, |r| i32::from(r.inner.summary.passed))
}

/// Summary JSON, owned by the handle.
///
/// # Safety
/// `handle` must be a live run handle or null.
#[no_mangle]
pub unsafe extern "C" fn nl_run_summary_json(handle: *const NlRun) -> *const c_char {
    handle.as_ref().map_or(ptr::null(), |r| r.summary.as_ptr())
}

/// Datapoint CSV, owned by the handle.
///
/// # Safety
/// `handle` must be a live run handle or null.
#[no_mangle]
pub unsafe extern "C" fn nl_run_csv(handle: *const NlRun) -> *const c_char {
    handle.as_ref().map_or(ptr::null(), |r| r.csv.as_ptr())
}

/// # Safety
/// `handle` must come from [`nl_run_toml`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nl_run_free(handle: *mut NlRun) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}
