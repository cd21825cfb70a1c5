//! C interface to the `taylorshift` library.
//!
//! Matrices cross the boundary as opaque [`TsMatrix`] handles holding `f64`
//! values in row-major order. Every fallible function returns a
//! [`TsStatus`]; after a non-`TS_OK` result, [`ts_last_error`] describes the
//! failure on the calling thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use taylorshift::costmodel;
use taylorshift::{attention, bench, Error, KernelKind, Matrix, NormMode};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonFinite = 4,
    Overflow = 5,
    Allocation = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsKernel {
    Softmax = 0,
    TaylorDirect = 1,
    TaylorEfficient = 2,
    Auto = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsNormMode {
    None = 0,
    Input = 1,
    InputOutput = 2,
}

fn kernel_of(code: u32) -> Result<KernelKind, (TsStatus, String)> {
    Ok(match code {
        c if c == TsKernel::Softmax as u32 => KernelKind::Softmax,
        c if c == TsKernel::TaylorDirect as u32 => KernelKind::TaylorDirect,
        c if c == TsKernel::TaylorEfficient as u32 => KernelKind::TaylorEfficient,
        c if c == TsKernel::Auto as u32 => KernelKind::Auto,
        c => {
            return Err((
                TsStatus::InvalidArgument,
                format!("unknown kernel code {c}"),
            ))
        }
    })
}

fn norm_of(code: u32) -> Result<NormMode, (TsStatus, String)> {
    Ok(match code {
        c if c == TsNormMode::None as u32 => NormMode::None,
        c if c == TsNormMode::Input as u32 => NormMode::Input,
        c if c == TsNormMode::InputOutput as u32 => NormMode::InputOutput,
        c => {
            return Err((
                TsStatus::InvalidArgument,
                format!("unknown norm mode code {c}"),
            ))
        }
    })
}

/// Opaque matrix handle.
pub struct TsMatrix(Matrix);

/// Per-head counts for `h` heads of width `d`. Counts that do not fit in 64
/// bits make the call return `TS_STATUS_OVERFLOW`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TsCostReport {
    pub n: u64,
    pub d: u64,
    pub h: u64,
    pub ops_direct: u64,
    pub ops_eff: u64,
    pub entries_direct: u64,
    pub entries_eff: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TsTransitionPoints {
    pub d: u64,
    pub n0_exact: f64,
    pub n0: u64,
    pub n1_exact: f64,
    pub n1: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let c = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> TsStatus {
    match e {
        Error::DimensionMismatch { .. }
        | Error::DataLength { .. }
        | Error::HeadDivisibility { .. } => TsStatus::DimensionMismatch,
        Error::NonFinite { .. } | Error::ZeroDivisor { .. } | Error::ZeroRow { .. } => {
            TsStatus::NonFinite
        }
        Error::Overflow(_) => TsStatus::Overflow,
        Error::Allocation { .. } => TsStatus::Allocation,
        _ => TsStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (TsStatus, String)>) -> TsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TsStatus::Panic
        }
    }
}

fn lib(e: Error) -> (TsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (TsStatus, String) {
    (TsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn matrix_ref<'a>(m: *const TsMatrix, what: &str) -> Result<&'a Matrix, (TsStatus, String)> {
    m.as_ref().map(|m| &m.0).ok_or_else(|| null(what))
}

fn narrow(x: u128, what: &'static str) -> Result<u64, (TsStatus, String)> {
    u64::try_from(x).map_err(|_| (TsStatus::Overflow, format!("{what} = {x} exceeds 64 bits")))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ts_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a `rows × cols` matrix. `data` holds `rows·cols` values in
/// row-major order, or is null for zeros.
#[no_mangle]
pub unsafe extern "C" fn ts_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f64,
    out: *mut *mut TsMatrix,
) -> TsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        if rows == 0 || cols == 0 {
            return Err(lib(Error::EmptyMatrix { rows, cols }));
        }
        let len = rows
            .checked_mul(cols)
            .ok_or((TsStatus::Overflow, "rows·cols overflows".to_string()))?;
        let m = if data.is_null() {
            Matrix::try_zeros(rows, cols).map_err(lib)?
        } else {
            let slice = std::slice::from_raw_parts(data, len);
            Matrix::new(rows, cols, slice.to_vec()).map_err(lib)?
        };
        *out = Box::into_raw(Box::new(TsMatrix(m)));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ts_matrix_free(m: *mut TsMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Row count, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ts_matrix_rows(m: *const TsMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.rows())
}

/// Column count, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn ts_matrix_cols(m: *const TsMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.cols())
}

/// Copies all entries in row-major order into `out`, which holds `len`
/// values.
#[no_mangle]
pub unsafe extern "C" fn ts_matrix_copy_data(
    m: *const TsMatrix,
    out: *mut f64,
    len: usize,
) -> TsStatus {
    guard(|| {
        let m = matrix_ref(m, "matrix")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if len < m.len() {
            return Err((
                TsStatus::BufferTooSmall,
                format!("buffer holds {len} values, matrix has {}", m.len()),
            ));
        }
        ptr::copy_nonoverlapping(m.as_slice().as_ptr(), out, m.len());
        Ok(())
    })
}

/// Single-head attention. `kernel` takes a `TsKernel` value and `norm_mode`
/// a `TsNormMode` value. On success `*out` receives a new handle owned by the
/// caller.
#[no_mangle]
pub unsafe extern "C" fn ts_attention(
    q: *const TsMatrix,
    k: *const TsMatrix,
    v: *const TsMatrix,
    tau: f64,
    kernel: u32,
    norm_mode: u32,
    out: *mut *mut TsMatrix,
) -> TsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let (q, k, v) = (
            matrix_ref(q, "q")?,
            matrix_ref(k, "k")?,
            matrix_ref(v, "v")?,
        );
        let y = attention(q, k, v, tau, kernel_of(kernel)?, norm_of(norm_mode)?).map_err(lib)?;
        *out = Box::into_raw(Box::new(TsMatrix(y)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ts_cost_report(
    n: u64,
    d: u64,
    h: u64,
    out: *mut TsCostReport,
) -> TsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = costmodel::CostReport::new(n, d, h).map_err(lib)?;
        *out = TsCostReport {
            n,
            d,
            h,
            ops_direct: narrow(r.ops_direct, "ops_direct")?,
            ops_eff: narrow(r.ops_eff, "ops_eff")?,
            entries_direct: narrow(r.entries_direct, "entries_direct")?,
            entries_eff: narrow(r.entries_eff, "entries_eff")?,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ts_transition_points(d: u64, out: *mut TsTransitionPoints) -> TsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if d == 0 {
            return Err((TsStatus::InvalidArgument, "d must be positive".into()));
        }
        if d > 1 << 20 {
            return Err((TsStatus::Overflow, format!("d = {d} is too large")));
        }
        let t = costmodel::transition_points(d);
        *out = TsTransitionPoints {
            d,
            n0_exact: t.n0_exact,
            n0: t.n0,
            n1_exact: t.n1_exact,
            n1: t.n1,
        };
        Ok(())
    })
}

/// Operation-optimal per-head dimension (the positive root of
/// `9d³ + 10d² = 4`).
#[no_mangle]
pub unsafe extern "C" fn ts_optimal_head_dim_ops(out: *mut f64) -> TsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = costmodel::optimal_head_dim_ops().closed_form;
        Ok(())
    })
}

/// Memory-optimal per-head dimension for sequence length `n`.
#[no_mangle]
pub unsafe extern "C" fn ts_optimal_head_dim_entries(n: u64, out: *mut f64) -> TsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = costmodel::optimal_head_dim_entries(n).map_err(lib)?;
        Ok(())
    })
}

/// Peak simultaneously live entries of one forward call; `kernel` takes a
/// `TsKernel` value.
#[no_mangle]
pub unsafe extern "C" fn ts_peak_entries(
    kernel: u32,
    n: usize,
    d: usize,
    out: *mut u64,
) -> TsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if n == 0 || d == 0 {
            return Err((TsStatus::InvalidArgument, "n and d must be positive".into()));
        }
        *out = narrow(
            bench::peak_entries(kernel_of(kernel)?, n, d).map_err(lib)?,
            "peak entries",
        )?;
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
