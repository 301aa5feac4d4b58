//! C ABI over the super-resolution model.
//!
//! Models are opaque handles created by `wmsr_model_new` or
//! `wmsr_model_load` and released with `wmsr_model_free`. Every fallible
//! call returns a [`WmsrStatus`]; on failure the message is available from
//! `wmsr_last_error` until the next call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use wmsr::network::{ModelConfig, PdcMode, WmsrModel};
use wmsr::numerics::Grid;
use wmsr::trainer::Checkpoint;
use wmsr::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WmsrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Data = 4,
    Numeric = 5,
    Io = 6,
    Panic = 7,
}

/// Opaque model handle.
pub struct WmsrModelHandle {
    model: WmsrModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> WmsrStatus {
    match e {
        Error::Shape { .. } => WmsrStatus::Shape,
        Error::InvalidArgument { .. } | Error::Config { .. } => WmsrStatus::InvalidArgument,
        Error::NonFinite { .. } => WmsrStatus::Numeric,
        Error::Io { .. } => WmsrStatus::Io,
        _ => WmsrStatus::Data,
    }
}

/// Run `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), (WmsrStatus, String)>) -> WmsrStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WmsrStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            WmsrStatus::Panic
        }
    }
}

fn lift(e: Error) -> (WmsrStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (WmsrStatus, String) {
    (WmsrStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, (WmsrStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (WmsrStatus::InvalidArgument, "path is not UTF-8".to_string()))
}

unsafe fn handle<'a>(m: *const WmsrModelHandle) -> Result<&'a WmsrModelHandle, (WmsrStatus, String)> {
    m.as_ref().ok_or_else(|| null("model"))
}

fn emit(out: *mut *mut WmsrModelHandle, model: WmsrModel) {
    let boxed = Box::new(WmsrModelHandle { model });
    // SAFETY: callers check `out` for null before building the model.
    unsafe { *out = Box::into_raw(boxed) };
}

/// Message of the last failed call on this thread; empty after success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn wmsr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Fresh model from `key = value` configuration text (NUL-terminated).
///
/// # Safety
/// `config` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wmsr_model_new(config: *const c_char, out: *mut *mut WmsrModelHandle) -> WmsrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if config.is_null() {
            return Err(null("config"));
        }
        let text = CStr::from_ptr(config)
            .to_str()
            .map_err(|_| (WmsrStatus::InvalidArgument, "config is not UTF-8".to_string()))?;
        let cfg = ModelConfig::parse(text).map_err(lift)?;
        emit(out, WmsrModel::new(cfg).map_err(lift)?);
        Ok(())
    })
}

/// Load a checkpoint file.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wmsr_model_load(path: *const c_char, out: *mut *mut WmsrModelHandle) -> WmsrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let model = Checkpoint::load(path).and_then(|c| c.to_model()).map_err(lift)?;
        emit(out, model);
        Ok(())
    })
}

/// Write the model's weights as a checkpoint file.
///
/// # Safety
/// `model` must come from this library and `path` be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn wmsr_model_save(model: *const WmsrModelHandle, path: *const c_char) -> WmsrStatus {
    guard(|| {
        let m = handle(model)?;
        let path = path_arg(path)?;
        Checkpoint::from_model(&m.model).save(path).map_err(lift)
    })
}

/// New handle whose difference-convolution gates are collapsed to single
/// kernels; `model` is left unchanged.
///
/// # Safety
/// `model` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wmsr_model_fuse(model: *const WmsrModelHandle, out: *mut *mut WmsrModelHandle) -> WmsrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = handle(model)?;
        emit(out, m.model.fused().map_err(lift)?);
        Ok(())
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wmsr_model_free(model: *mut WmsrModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Upscaling factor, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn wmsr_model_scale(model: *const WmsrModelHandle) -> u32 {
    model.as_ref().map_or(0, |m| m.model.config().scale as u32)
}

/// Number of scalar weights, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn wmsr_model_parameter_count(model: *const WmsrModelHandle) -> u64 {
    model.as_ref().map_or(0, |m| m.model.parameter_count() as u64)
}

/// 1 if the gates are fused, 0 if branched or the handle is null.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn wmsr_model_is_fused(model: *const WmsrModelHandle) -> i32 {
    model.as_ref().map_or(0, |m| (m.model.mode() == PdcMode::Fused) as i32)
}

/// Super-resolve one row-major `height × width` field with values in
/// `[0, 1]`. `output` must hold `out_len = (r·height)·(r·width)` values.
///
/// # Safety
/// `input` must point to `height·width` doubles and `output` to `out_len`.
#[no_mangle]
pub unsafe extern "C" fn wmsr_model_predict(
    model: *const WmsrModelHandle,
    input: *const f64,
    height: usize,
    width: usize,
    output: *mut f64,
    out_len: usize,
) -> WmsrStatus {
    guard(|| {
        let m = handle(model)?;
        if input.is_null() {
            return Err(null("input"));
        }
        if output.is_null() {
            return Err(null("output"));
        }
        let r = m.model.config().scale;
        let need = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(r * r))
            .ok_or_else(|| (WmsrStatus::InvalidArgument, "size overflows".to_string()))?;
        if out_len != need {
            return Err((WmsrStatus::Shape, format!("output holds {out_len} values, need {need}")));
        }
        let data = std::slice::from_raw_parts(input, height * width).to_vec();
        let x = Grid::from_vec([1, 1, height, width], data).map_err(lift)?;
        let y = m.model.predict(&x).map_err(lift)?;
        ptr::copy_nonoverlapping(y.data().as_ptr(), output, need);
        Ok(())
    })
}

/// PSNR in dB of two equally long buffers against `peak`.
///
/// # Safety
/// `a` and `b` must point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn wmsr_psnr(a: *const f64, b: *const f64, len: usize, peak: f64, out: *mut f64) -> WmsrStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(null("buffer"));
        }
        let grid = |p: *const f64| Grid::from_vec([1, 1, 1, len], std::slice::from_raw_parts(p, len).to_vec());
        let v = wmsr::objective::psnr(&grid(a).map_err(lift)?, &grid(b).map_err(lift)?, peak).map_err(lift)?;
        *out = v;
        Ok(())
    })
}
