//! C ABI over the `qdisc` library.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_from_*`
//! constructors and released with the matching `*_free`. Every fallible call
//! returns a [`QdiscStatus`]; on failure `qdisc_last_error` describes the
//! cause for the calling thread. Matrices are passed row-major as separate
//! real and imaginary `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use qdisc::channel_div::{geometric_channel_exact, stabilized_divergence, OptimizerConfig};
use qdisc::channels::KrausChannel;
use qdisc::divergences::{fidelity, trace_distance, DivergenceKind};
use qdisc::operator::{random_density, CMatrix, DensityMatrix, C64};
use qdisc::suite::{render, run_suite, Format, SuiteReport};
use qdisc::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QdiscStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NotPositive = 4,
    Numerical = 5,
    CapExceeded = 6,
    UnknownSuite = 7,
    Unavailable = 8,
    Io = 9,
    Panic = 10,
}

/// Divergence selector; `param` carries the order α or the error ε.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QdiscDivergence {
    /// Umegaki relative entropy; `param` ignored.
    Umegaki = 0,
    /// Petz Rényi divergence of order `param`.
    Petz = 1,
    /// Geometric Rényi divergence of order `param`.
    Geometric = 2,
    /// Max-relative entropy; `param` ignored.
    Dmax = 3,
    /// Hypothesis-testing divergence at error `param`.
    Hypothesis = 4,
}

/// Density operator handle.
pub struct QdiscState(DensityMatrix);

/// Quantum channel handle.
pub struct QdiscChannel(KrausChannel);

/// Suite report handle.
pub struct QdiscReport(SuiteReport);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(QdiscStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::DimensionMismatch(_) | Error::OddDimension(_) | Error::OddLength(_) => QdiscStatus::DimensionMismatch,
            Error::NotPositive { .. } | Error::NonHermitian { .. } => QdiscStatus::NotPositive,
            Error::NumericalGap { .. } | Error::BracketInverted { .. } | Error::Domain { .. } => QdiscStatus::Numerical,
            Error::CapExceeded { .. } => QdiscStatus::CapExceeded,
            Error::UnknownSuite(_) => QdiscStatus::UnknownSuite,
            Error::Io(_) | Error::Json(_) => QdiscStatus::Io,
            _ => QdiscStatus::InvalidArgument,
        };
        Failure(code, e.to_string())
    }
}

fn fail(code: QdiscStatus, msg: &str) -> Failure {
    Failure(code, msg.into())
}

/// Runs `f`, records any error message and converts panics to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QdiscStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            QdiscStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            QdiscStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(QdiscStatus::NullPointer, &format!("{what} is null")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(QdiscStatus::NullPointer, &format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(QdiscStatus::NullPointer, "output pointer is null"));
    }
    out.write(value);
    Ok(())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn kind(k: QdiscDivergence, param: f64) -> DivergenceKind {
    match k {
        QdiscDivergence::Umegaki => DivergenceKind::Umegaki,
        QdiscDivergence::Petz => DivergenceKind::Petz(param),
        QdiscDivergence::Geometric => DivergenceKind::Geometric(param),
        QdiscDivergence::Dmax => DivergenceKind::Dmax,
        QdiscDivergence::Hypothesis => DivergenceKind::Hypothesis(param),
    }
}

/// Message of the last failed call on this thread (empty after a success).
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn qdisc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qdisc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Normalized density operator from a row-major `dim × dim` matrix.
/// `im` may be null for a real matrix.
///
/// # Safety
/// `re` (and `im` when non-null) must point to `dim * dim` doubles; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdisc_state_new(
    re: *const f64,
    im: *const f64,
    dim: usize,
    out: *mut *mut QdiscState,
) -> QdiscStatus {
    guard(|| {
        if dim == 0 {
            return Err(fail(QdiscStatus::InvalidArgument, "dimension must be positive"));
        }
        let re = slice(re, dim * dim, "re")?;
        let im = if im.is_null() { None } else { Some(slice(im, dim * dim, "im")?) };
        let m = CMatrix::from_fn(dim, dim, |i, j| C64::new(re[i * dim + j], im.map_or(0.0, |v| v[i * dim + j])));
        let state = DensityMatrix::new(m, &[dim])?;
        write_out(out, boxed(QdiscState(state)))
    })
}

/// Diagonal density operator from a probability vector of length `n`.
///
/// # Safety
/// `p` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdisc_state_from_diag(p: *const f64, n: usize, out: *mut *mut QdiscState) -> QdiscStatus {
    guard(|| {
        if n == 0 {
            return Err(fail(QdiscStatus::InvalidArgument, "dimension must be positive"));
        }
        let p = slice(p, n, "p")?;
        write_out(out, boxed(QdiscState(DensityMatrix::from_diag(p)?)))
    })
}

/// Random density operator of the given rank, reproducible from `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdisc_state_random(dim: usize, rank: usize, seed: u64, out: *mut *mut QdiscState) -> QdiscStatus {
    guard(|| write_out(out, boxed(QdiscState(random_density(dim, rank, seed)?))))
}

/// Dimension of a state, or 0 for a null handle.
///
/// # Safety
/// `state` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qdisc_state_dim(state: *const QdiscState) -> usize {
    state.as_ref().map_or(0, |s| s.0.dim())
}

/// Copies the row-major matrix of `state` into `re` and `im` (`dim * dim` each;
/// `im` may be null).
///
/// # Safety
/// `state` must be a live handle; `re` and non-null `im` must hold `dim * dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn qdisc_state_matrix(state: *const QdiscState, re: *mut f64, im: *mut f64) -> QdiscStatus {
    guard(|| {
        let s = handle(state, "state")?;
        if re.is_null() {
            return Err(fail(QdiscStatus::NullPointer, "re is null"));
        }
        let m = s.0.matrix();
        let d = m.nrows();
        for i in 0..d {
            for j in 0..d {
                re.add(i * d + j).write(m[(i, j)].re);
                if !im.is_null() {
                    im.add(i * d + j).write(m[(i, j)].im);
                }
            }
        }
        Ok(())
    })
}

/// Releases a state handle. Null is ignored.
///
/// # Safety
/// `state` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qdisc_state_free(state: *mut QdiscState) {
    release(state)
}

/// Divergence `D(ρ‖σ)` in bits; `+inf` is a valid result.
///
/// # Safety
/// `rho` and `sigma` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdisc_divergence(
    which: QdiscDivergence,
    param: f64,
    rho: *const QdiscState,
    sigma: *const QdiscState,
    out: *mut f64,
) -> QdiscStatus {
    guard(|| {
        let (r, s) = (handle(rho, "rho")?, handle(sigma, "sigma")?);
        write_out(out, kind(which, param).evaluate(&r.0, &s.0)?)
    })
}

/// Fidelity `‖√ρ√σ‖₁²`.
///
/// # Safety
/// `rho` and `sigma` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdisc_fidelity(rho: *const QdiscState, sigma: *const QdiscState, out: *mut f64) -> QdiscStatus {
    guard(|| write_out(out, fidelity(&handle(rho, "rho")?.0, &handle(sigma, "sigma")?.0)?))
}

/// Trace distance `½‖ρ − σ‖₁`.
///
/// # Safety
/// `rho` and `sigma` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdisc_trace_distance(
    rho: *const QdiscState,
    sigma: *const QdiscState,
    out: *mut f64,
) -> QdiscStatus {
    guard(|| write_out(out, trace_distance(&handle(rho, "rho")?.0, &handle(sigma, "sigma")?.0)?))
}

/// Identity channel on dimension `dim`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdisc_channel_identity(dim: usize, out: *mut *mut QdiscChannel) -> QdiscStatus {
    guard(|| {
        if dim == 0 {
            return Err(fail(QdiscStatus::InvalidArgument, "dimension must be positive"));
        }
        write_out(out, boxed(QdiscChannel(KrausChannel::identity(dim))))
    })
}

/// Channel that discards its `dim_in`-dimensional input and prepares `state`.
///
/// # Safety
/// `state` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdisc_channel_replacer(
    state: *const QdiscState,
    dim_in: usize,
    out: *mut *mut QdiscChannel,
) -> QdiscStatus {
    guard(|| {
        let s = handle(state, "state")?;
        if dim_in == 0 {
            return Err(fail(QdiscStatus::InvalidArgument, "dimension must be positive"));
        }
        write_out(out, boxed(QdiscChannel(KrausChannel::replacer(&s.0, dim_in))))
    })
}

/// `ρ ↦ (1 − λ)ρ + λ Tr[ρ] τ`.
///
/// # Safety
/// `tau` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdisc_channel_depolarizing(
    tau: *const QdiscState,
    lambda: f64,
    out: *mut *mut QdiscChannel,
) -> QdiscStatus {
    guard(|| {
        let t = handle(tau, "tau")?;
        write_out(out, boxed(QdiscChannel(KrausChannel::generalized_depolarizing(&t.0, lambda)?)))
    })
}

/// Random channel with an environment of dimension `env_dim`, reproducible from `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdisc_channel_random(
    dim_in: usize,
    dim_out: usize,
    env_dim: usize,
    seed: u64,
    out: *mut *mut QdiscChannel,
) -> QdiscStatus {
    guard(|| {
        let c = KrausChannel::random_channel(dim_in, dim_out, env_dim, seed)?;
        write_out(out, boxed(QdiscChannel(c)))
    })
}

/// Input and output dimensions of a channel.
///
/// # Safety
/// `channel` must be a live handle; `dim_in` and `dim_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdisc_channel_dims(
    channel: *const QdiscChannel,
    dim_in: *mut usize,
    dim_out: *mut usize,
) -> QdiscStatus {
    guard(|| {
        let c = handle(channel, "channel")?;
        write_out(dim_in, c.0.dim_in())?;
        write_out(dim_out, c.0.dim_out())
    })
}

/// Applies `channel` to `state`, returning a new state handle.
///
/// # Safety
/// `channel` and `state` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdisc_channel_apply(
    channel: *const QdiscChannel,
    state: *const QdiscState,
    out: *mut *mut QdiscState,
) -> QdiscStatus {
    guard(|| {
        let (c, s) = (handle(channel, "channel")?, handle(state, "state")?);
        let input = s.0.with_dims(&[s.0.dim()])?;
        write_out(out, boxed(QdiscState(c.0.apply_full(&input)?)))
    })
}

/// Releases a channel handle. Null is ignored.
///
/// # Safety
/// `channel` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qdisc_channel_free(channel: *mut QdiscChannel) {
    release(channel)
}

/// Optimized lower bound on the stabilized channel divergence, with
/// multistart restarts drawn from `seed`.
///
/// # Safety
/// `e` and `f` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdisc_channel_divergence(
    which: QdiscDivergence,
    param: f64,
    e: *const QdiscChannel,
    f: *const QdiscChannel,
    seed: u64,
    out: *mut f64,
) -> QdiscStatus {
    guard(|| {
        let (e, f) = (handle(e, "e")?, handle(f, "f")?);
        let cfg = OptimizerConfig { seed, ..Default::default() };
        write_out(out, stabilized_divergence(kind(which, param), &e.0, &f.0, &cfg)?.value)
    })
}

/// Exact geometric Rényi channel divergence of order `alpha`. Returns
/// `Unavailable` when the Choi operator of `f` is singular.
///
/// # Safety
/// `e` and `f` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdisc_geometric_channel_exact(
    alpha: f64,
    e: *const QdiscChannel,
    f: *const QdiscChannel,
    out: *mut f64,
) -> QdiscStatus {
    guard(|| {
        let (e, f) = (handle(e, "e")?, handle(f, "f")?);
        match geometric_channel_exact(alpha, &e.0, &f.0)? {
            Some(v) => write_out(out, v),
            None => Err(fail(QdiscStatus::Unavailable, "Choi operator of f is singular")),
        }
    })
}

/// Runs a property suite. `size == 0` selects the suite's default size.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdisc_suite_run(
    name: *const c_char,
    master_seed: u64,
    size: usize,
    out: *mut *mut QdiscReport,
) -> QdiscStatus {
    guard(|| {
        if name.is_null() {
            return Err(fail(QdiscStatus::NullPointer, "name is null"));
        }
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(|_| fail(QdiscStatus::InvalidArgument, "name is not UTF-8"))?;
        let size = (size > 0).then_some(size);
        write_out(out, boxed(QdiscReport(run_suite(name, master_seed, size)?)))
    })
}

/// Number of cases run, or 0 for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qdisc_report_cases(report: *const QdiscReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.cases)
}

/// Number of failed checks, or 0 for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qdisc_report_failures(report: *const QdiscReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.failures.len())
}

/// JSON rendering of a report; release the string with `qdisc_string_free`.
///
/// # Safety
/// `report` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qdisc_report_json(report: *const QdiscReport, out: *mut *mut c_char) -> QdiscStatus {
    guard(|| {
        let r = handle(report, "report")?;
        let json = render(std::slice::from_ref(&r.0), Format::Json)?;
        let c = CString::new(json).map_err(|_| fail(QdiscStatus::Io, "report contains NUL"))?;
        write_out(out, c.into_raw())
    })
}

/// Releases a report handle. Null is ignored.
///
/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qdisc_report_free(report: *mut QdiscReport) {
    release(report)
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qdisc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
