//! C interface to the pvflow scene-flow engine.
//!
//! Every fallible function returns a [`PvfStatus`]; on failure a message is
//! available from [`pvf_last_error_message`] on the same thread. Objects are
//! opaque handles created by `*_new`/`*_read`/… functions and released with
//! the matching `*_free`. Passing NULL to a `*_free` function is a no-op.
//!
//! # Safety
//!
//! Every pointer argument must be NULL or valid for the access the function
//! documents: handles must come from this library and not be freed yet,
//! strings must be NUL-terminated, and array arguments must hold the stated
//! number of elements. Handles are not synchronized; do not use one handle
//! from two threads at once.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use pvflow::metrics::EvalReport;
use pvflow::{io, Config, Error, FlowField, FlowStage, PointCloud, Weights};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PvfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    KTooLarge = 4,
    InvalidCloud = 5,
    UnequalSizes = 6,
    Io = 7,
    /// Bad magic, truncated file, unsupported version or unparsable text.
    Format = 8,
    NonFiniteValue = 9,
    Config = 10,
    Weights = 11,
    NonFinite = 12,
    /// A Rust panic was caught at the boundary.
    Internal = 13,
}

fn status_of(e: &Error) -> PvfStatus {
    match e {
        Error::Shape(_) | Error::UnrecordedNode(_) => PvfStatus::Shape,
        Error::KTooLarge { .. } => PvfStatus::KTooLarge,
        Error::InvalidCloud(_) => PvfStatus::InvalidCloud,
        Error::UnequalSizes { .. } => PvfStatus::UnequalSizes,
        Error::NonFinite(_) => PvfStatus::NonFinite,
        Error::BadMagic { .. }
        | Error::TruncatedFile { .. }
        | Error::UnsupportedVersion { .. }
        | Error::Parse { .. } => PvfStatus::Format,
        Error::NonFiniteValue { .. } => PvfStatus::NonFiniteValue,
        Error::Config(_) => PvfStatus::Config,
        Error::Weights(_) => PvfStatus::Weights,
        Error::Io { .. } => PvfStatus::Io,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(PvfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PvfStatus::NullPointer, format!("{what} is NULL"))
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PvfStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PvfStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            PvfStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(PvfStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(PvfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Pipeline configuration.
pub struct PvfConfig {
    inner: Config,
}

/// A point cloud.
pub struct PvfCloud {
    inner: PointCloud,
}

/// Encoder weights.
pub struct PvfWeights {
    inner: Weights,
}

/// A per-point flow field.
pub struct PvfFlow {
    inner: FlowField,
}

/// Flow accuracy against ground truth. Percentages are in [0, 100].
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct PvfEvalReport {
    pub n: usize,
    pub epe: f64,
    pub as_pct: f64,
    pub ar_pct: f64,
    pub out_pct: f64,
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next pvflow call on the same thread.
#[no_mangle]
pub extern "C" fn pvf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pvf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default configuration.
#[no_mangle]
pub unsafe extern "C" fn pvf_config_new(out: *mut *mut PvfConfig) -> PvfStatus {
    guard(|| put(out, PvfConfig { inner: Config::default() }))
}

/// Parses a `key = value` configuration file.
#[no_mangle]
pub unsafe extern "C" fn pvf_config_load(path: *const c_char, out: *mut *mut PvfConfig) -> PvfStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        put(out, PvfConfig { inner: Config::load(&p)? })
    })
}

/// Sets one key; the configuration is left unchanged if the result would be
/// invalid.
#[no_mangle]
pub unsafe extern "C" fn pvf_config_set(config: *mut PvfConfig, key: *const c_char, value: *const c_char) -> PvfStatus {
    guard(|| {
        let c = config.as_mut().ok_or_else(|| null("config"))?;
        let mut next = c.inner.clone();
        next.set(str_arg(key, "key")?, str_arg(value, "value")?)?;
        next.validate()?;
        c.inner = next;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pvf_config_free(config: *mut PvfConfig) {
    free(config)
}

/// Copies `n` points from a row-major `n×3` array.
#[no_mangle]
pub unsafe extern "C" fn pvf_cloud_from_xyz(xyz: *const f64, n: usize, out: *mut *mut PvfCloud) -> PvfStatus {
    guard(|| {
        if xyz.is_null() {
            return Err(null("xyz"));
        }
        let data = std::slice::from_raw_parts(xyz, n.checked_mul(3).ok_or_else(|| {
            Fail(PvfStatus::InvalidArgument, "point count overflows".into())
        })?);
        let pts = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        put(out, PvfCloud { inner: PointCloud::new(pts)? })
    })
}

/// Reads an SFPC or ASCII `.xyz` file.
#[no_mangle]
pub unsafe extern "C" fn pvf_cloud_read(path: *const c_char, out: *mut *mut PvfCloud) -> PvfStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        put(out, PvfCloud { inner: io::read_cloud(&p)? })
    })
}

#[no_mangle]
pub unsafe extern "C" fn pvf_cloud_write(cloud: *const PvfCloud, path: *const c_char) -> PvfStatus {
    guard(|| {
        let c = obj(cloud, "cloud")?;
        Ok(io::write_sfpc(&path_arg(path, "path")?, &c.inner)?)
    })
}

/// Number of points, or 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn pvf_cloud_len(cloud: *const PvfCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.inner.len())
}

#[no_mangle]
pub unsafe extern "C" fn pvf_cloud_free(cloud: *mut PvfCloud) {
    free(cloud)
}

/// Seeded random weights shaped for `config`.
#[no_mangle]
pub unsafe extern "C" fn pvf_weights_init(config: *const PvfConfig, seed: u64, out: *mut *mut PvfWeights) -> PvfStatus {
    guard(|| {
        let c = obj(config, "config")?;
        put(out, PvfWeights { inner: pvflow::init_weights(&c.inner, seed) })
    })
}

/// Loads a PVWT file, checking every tensor against `config`.
#[no_mangle]
pub unsafe extern "C" fn pvf_weights_load(
    path: *const c_char,
    config: *const PvfConfig,
    out: *mut *mut PvfWeights,
) -> PvfStatus {
    guard(|| {
        let c = obj(config, "config")?;
        put(out, PvfWeights { inner: io::load_weights(&path_arg(path, "path")?, &c.inner)? })
    })
}

#[no_mangle]
pub unsafe extern "C" fn pvf_weights_save(weights: *const PvfWeights, path: *const c_char) -> PvfStatus {
    guard(|| {
        let w = obj(weights, "weights")?;
        Ok(io::save_weights(&path_arg(path, "path")?, &w.inner)?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn pvf_weights_free(weights: *mut PvfWeights) {
    free(weights)
}

/// Scene flow from `source` to `target`.
#[no_mangle]
pub unsafe extern "C" fn pvf_estimate(
    source: *const PvfCloud,
    target: *const PvfCloud,
    weights: *const PvfWeights,
    config: *const PvfConfig,
    out: *mut *mut PvfFlow,
) -> PvfStatus {
    guard(|| {
        let s = obj(source, "source")?;
        let t = obj(target, "target")?;
        let w = obj(weights, "weights")?;
        let c = obj(config, "config")?;
        let flow = pvflow::estimate(&s.inner, &t.inner, &w.inner, &c.inner)?;
        put(out, PvfFlow { inner: flow })
    })
}

/// Copies `n` row-major flow vectors.
#[no_mangle]
pub unsafe extern "C" fn pvf_flow_from_xyz(xyz: *const f64, n: usize, out: *mut *mut PvfFlow) -> PvfStatus {
    guard(|| {
        if xyz.is_null() && n > 0 {
            return Err(null("xyz"));
        }
        let vectors = if n == 0 {
            Vec::new()
        } else {
            let len = n
                .checked_mul(3)
                .ok_or_else(|| Fail(PvfStatus::InvalidArgument, "vector count overflows".into()))?;
            std::slice::from_raw_parts(xyz, len)
                .chunks_exact(3)
                .map(|c| [c[0], c[1], c[2]])
                .collect()
        };
        let f = FlowField::new(vectors, FlowStage::Refined);
        if !f.is_finite() {
            return Err(Fail(PvfStatus::NonFinite, "flow contains non-finite values".into()));
        }
        put(out, PvfFlow { inner: f })
    })
}

#[no_mangle]
pub unsafe extern "C" fn pvf_flow_read(path: *const c_char, out: *mut *mut PvfFlow) -> PvfStatus {
    guard(|| put(out, PvfFlow { inner: io::read_flow(&path_arg(path, "path")?)? }))
}

#[no_mangle]
pub unsafe extern "C" fn pvf_flow_write(flow: *const PvfFlow, path: *const c_char) -> PvfStatus {
    guard(|| {
        let f = obj(flow, "flow")?;
        Ok(io::write_flow(&path_arg(path, "path")?, &f.inner)?)
    })
}

/// Number of vectors, or 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn pvf_flow_len(flow: *const PvfFlow) -> usize {
    flow.as_ref().map_or(0, |f| f.inner.len())
}

/// Copies the flow into `out` as row-major `n×3`; `capacity` counts doubles
/// and must be at least `3 * pvf_flow_len(flow)`.
#[no_mangle]
pub unsafe extern "C" fn pvf_flow_copy(flow: *const PvfFlow, out: *mut f64, capacity: usize) -> PvfStatus {
    guard(|| {
        let f = obj(flow, "flow")?;
        let need = 3 * f.inner.len();
        if need == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if capacity < need {
            return Err(Fail(
                PvfStatus::InvalidArgument,
                format!("buffer holds {capacity} doubles, flow needs {need}"),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(out, need);
        for (d, v) in dst.iter_mut().zip(f.inner.vectors.iter().flatten()) {
            *d = *v;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pvf_flow_free(flow: *mut PvfFlow) {
    free(flow)
}

/// End-point error and accuracy percentages of `pred` against `gt`.
#[no_mangle]
pub unsafe extern "C" fn pvf_evaluate(pred: *const PvfFlow, gt: *const PvfFlow, out: *mut PvfEvalReport) -> PvfStatus {
    guard(|| {
        let p = obj(pred, "pred")?;
        let g = obj(gt, "gt")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = EvalReport::new(&p.inner, &g.inner)?;
        *out = PvfEvalReport {
            n: r.n,
            epe: r.epe,
            as_pct: r.as_pct,
            ar_pct: r.ar_pct,
            out_pct: r.out_pct,
        };
        Ok(())
    })
}
