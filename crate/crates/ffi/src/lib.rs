//! C ABI over the affclt toolkit.
//!
//! Configs and run results are opaque handles owned by the caller and freed
//! with the matching `_free` function. Every call returns an
//! [`AffcltStatus`]; the message of the last failure on the calling thread is
//! available from [`affclt_last_error`]. Panics never cross the boundary.

use affclt::config::ExperimentConfig;
use affclt::models::{matern_bessel, MaternParams};
use affclt::normality::{ks_distance, w1_distance};
use affclt::runner::{self, EstimateKind, RunOutput};
use affclt::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Status codes returned by every function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AffcltStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    InvalidArgument = 4,
    Numerical = 5,
    Io = 6,
    BufferTooSmall = 7,
    OutOfRange = 8,
    Panic = 9,
}

/// Runnable commands.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AffcltCommand {
    Diagnose = 0,
    Normality = 1,
    EstimateHt = 2,
    EstimateQhat = 3,
    EstimateSocio = 4,
    Gen = 5,
}

/// Parsed and validated experiment config.
pub struct AffcltConfig {
    inner: ExperimentConfig,
}

/// Result files of one run, held in memory.
pub struct AffcltRun {
    inner: RunOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> AffcltStatus {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::Json(_) => AffcltStatus::Config,
        Error::Io(_) | Error::Csv(_) => AffcltStatus::Io,
        Error::NotPositiveDefinite { .. } | Error::CovarianceNotPd { .. } | Error::InsufficientPrecision { .. } => {
            AffcltStatus::Numerical
        }
        _ => AffcltStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), AffcltStatus>) -> AffcltStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AffcltStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            AffcltStatus::Panic
        }
    }
}

fn fail(e: Error) -> AffcltStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null() -> AffcltStatus {
    set_error("null pointer argument");
    AffcltStatus::NullPointer
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, AffcltStatus> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        AffcltStatus::InvalidUtf8
    })
}

/// Copies `s` plus a NUL into `buf`. `*needed` receives the full size
/// including the NUL, also when the buffer is too small.
unsafe fn copy_out(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), AffcltStatus> {
    let bytes = s.as_bytes();
    if !needed.is_null() {
        *needed = bytes.len() + 1;
    }
    if buf.is_null() || len < bytes.len() + 1 {
        set_error(format!(
            "buffer of {len} bytes is too small, {} needed",
            bytes.len() + 1
        ));
        return Err(AffcltStatus::BufferTooSmall);
    }
    std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
    *buf.add(bytes.len()) = 0;
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn affclt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf`.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null; `needed` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn affclt_last_error(buf: *mut c_char, len: usize, needed: *mut usize) -> AffcltStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    guard(|| copy_out(&msg, buf, len, needed))
}

/// Parses a TOML or JSON config.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn affclt_config_parse(text: *const c_char, out: *mut *mut AffcltConfig) -> AffcltStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let cfg = ExperimentConfig::parse(str_arg(text)?).map_err(fail)?;
        *out = Box::into_raw(Box::new(AffcltConfig { inner: cfg }));
        Ok(())
    })
}

/// Overrides the master seed.
///
/// # Safety
/// `cfg` must be a live handle from [`affclt_config_parse`].
#[no_mangle]
pub unsafe extern "C" fn affclt_config_set_seed(cfg: *mut AffcltConfig, seed: u64) -> AffcltStatus {
    guard(|| {
        let c = cfg.as_mut().ok_or_else(null)?;
        c.inner.seed = seed;
        Ok(())
    })
}

/// Copies the hex config hash (64 characters) into `buf`.
///
/// # Safety
/// `cfg` must be a live handle; `buf` valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn affclt_config_hash(
    cfg: *const AffcltConfig,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> AffcltStatus {
    guard(|| {
        let c = cfg.as_ref().ok_or_else(null)?;
        let h = c.inner.hash().map_err(fail)?;
        copy_out(&h, buf, len, needed)
    })
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn affclt_config_free(cfg: *mut AffcltConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs `command` and returns its files in memory.
///
/// # Safety
/// `cfg` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn affclt_run(
    cfg: *const AffcltConfig,
    command: AffcltCommand,
    out: *mut *mut AffcltRun,
) -> AffcltStatus {
    guard(|| {
        let c = cfg.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        let cfg = &c.inner;
        let res = match command {
            AffcltCommand::Diagnose => runner::run_diagnose(cfg),
            AffcltCommand::Normality => runner::run_normality_cfg(cfg),
            AffcltCommand::EstimateHt => runner::run_estimate(cfg, EstimateKind::Ht),
            AffcltCommand::EstimateQhat => runner::run_estimate(cfg, EstimateKind::QHat),
            AffcltCommand::EstimateSocio => runner::run_estimate(cfg, EstimateKind::Socio),
            AffcltCommand::Gen => runner::run_gen(cfg),
        };
        *out = Box::into_raw(Box::new(AffcltRun {
            inner: res.map_err(fail)?,
        }));
        Ok(())
    })
}

/// Process exit code the CLI would use for this run.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn affclt_run_exit_code(run: *const AffcltRun, code: *mut i32) -> AffcltStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(null)?;
        *code.as_mut().ok_or_else(null)? = r.inner.exit_code;
        Ok(())
    })
}

/// # Safety
/// `run` must be a live handle; `count` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn affclt_run_file_count(run: *const AffcltRun, count: *mut usize) -> AffcltStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(null)?;
        *count.as_mut().ok_or_else(null)? = r.inner.files.entries().len();
        Ok(())
    })
}

unsafe fn entry<'a>(run: *const AffcltRun, index: usize) -> Result<&'a (std::path::PathBuf, Vec<u8>), AffcltStatus> {
    let r = run.as_ref().ok_or_else(null)?;
    r.inner.files.entries().get(index).ok_or_else(|| {
        set_error(format!("file index {index} out of range"));
        AffcltStatus::OutOfRange
    })
}

/// Copies the relative name of file `index` into `buf`.
///
/// # Safety
/// `run` must be a live handle; `buf` valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn affclt_run_file_name(
    run: *const AffcltRun,
    index: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> AffcltStatus {
    guard(|| {
        let (name, _) = entry(run, index)?;
        copy_out(&name.display().to_string(), buf, len, needed)
    })
}

/// Borrows the contents of file `index`. The pointer stays valid until the
/// run is freed.
///
/// # Safety
/// `run` must be a live handle; `data` and `len` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn affclt_run_file_data(
    run: *const AffcltRun,
    index: usize,
    data: *mut *const u8,
    len: *mut usize,
) -> AffcltStatus {
    guard(|| {
        let (_, bytes) = entry(run, index)?;
        if data.is_null() || len.is_null() {
            return Err(null());
        }
        *data = bytes.as_ptr();
        *len = bytes.len();
        Ok(())
    })
}

/// Writes every file under `dir`, all or nothing.
///
/// # Safety
/// `run` must be a live handle; `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn affclt_run_write(run: *const AffcltRun, dir: *const c_char) -> AffcltStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(null)?;
        let d = str_arg(dir)?;
        r.inner.files.commit(Path::new(d)).map_err(fail)?;
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn affclt_run_free(run: *mut AffcltRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

unsafe fn samples<'a>(x: *const f64, len: usize) -> Result<&'a [f64], AffcltStatus> {
    if x.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(x, len))
}

/// Two-sided Kolmogorov distance of the sample to `N(0, 1)`.
///
/// # Safety
/// `x` must be valid for `len` reads; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn affclt_ks_distance(x: *const f64, len: usize, out: *mut f64) -> AffcltStatus {
    guard(|| {
        let v = ks_distance(samples(x, len)?).map_err(fail)?;
        *out.as_mut().ok_or_else(null)? = v;
        Ok(())
    })
}

/// Quantile-coupling Wasserstein-1 distance of the sample to `N(0, 1)`.
///
/// # Safety
/// `x` must be valid for `len` reads; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn affclt_w1_distance(x: *const f64, len: usize, out: *mut f64) -> AffcltStatus {
    guard(|| {
        let v = w1_distance(samples(x, len)?).map_err(fail)?;
        *out.as_mut().ok_or_else(null)? = v;
        Ok(())
    })
}

/// Matérn covariance at distance `h`, general `nu`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn affclt_matern_cov(sigma2: f64, phi: f64, nu: f64, h: f64, out: *mut f64) -> AffcltStatus {
    guard(|| {
        let m = MaternParams { sigma2, phi, nu };
        m.validate().map_err(fail)?;
        if h.is_nan() || h < 0.0 {
            return Err(fail(Error::InvalidParameter("distance must be nonnegative".into())));
        }
        *out.as_mut().ok_or_else(null)? = matern_bessel(&m, h);
        Ok(())
    })
}
