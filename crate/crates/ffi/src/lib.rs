//! C ABI for densee.
//!
//! Every call returns a [`DenseeStatus`]. On failure a message is kept per
//! thread and can be read with [`densee_last_error`]. Handles are opaque and
//! must be released with their `_free` function.
//!
//! Wavefront masks are `rows × cols × 180` bytes, row-major, one byte per bin.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use densee::densee::{detect_corners, extract_wavefront, DenseeModel, ExtractOptions};
use densee::radon::{canonical_map, dilate_lambda, inverse_canonical_map, FULL_ANGLES};
use densee::shearlet::{ShearletConfig, ShearletSystem};
use densee::wavefront::{WavefrontSet, ORIENTATION_BINS};
use densee::{Error, Image};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DenseeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Format = 5,
    FingerprintMismatch = 6,
    Internal = 7,
}

/// Loaded model with the shearlet system it was trained for.
pub struct DenseeModelHandle {
    model: DenseeModel,
    system: ShearletSystem,
}

/// Shearlet system for square images.
pub struct DenseeShearletHandle {
    system: ShearletSystem,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DenseeStatus {
    match e {
        Error::DimensionMismatch { .. } => DenseeStatus::DimensionMismatch,
        Error::Io(_) => DenseeStatus::Io,
        Error::Format(_) | Error::Json(_) => DenseeStatus::Format,
        Error::FingerprintMismatch { .. } => DenseeStatus::FingerprintMismatch,
        _ => DenseeStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn run(f: impl FnOnce() -> Result<(), Failure>) -> DenseeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DenseeStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            DenseeStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(msg);
            DenseeStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            DenseeStatus::Internal
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn check_len(expected: usize, actual: usize, what: &str) -> Result<(), Failure> {
    if expected != actual {
        return Err(Failure::Lib(Error::DimensionMismatch {
            expected: format!("{expected} {what}"),
            actual: actual.to_string(),
        }));
    }
    Ok(())
}

fn mask_len(rows: usize, cols: usize) -> Result<usize, Failure> {
    rows.checked_mul(cols)
        .and_then(|n| n.checked_mul(ORIENTATION_BINS))
        .ok_or_else(|| Failure::Arg("mask size overflows".into()))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn densee_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn densee_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a model file written by `densee train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn densee_model_load(path: *const c_char, out: *mut *mut DenseeModelHandle) -> DenseeStatus {
    run(|| {
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|_| Failure::Arg("path is not UTF-8".into()))?;
        let model = densee::io::load_model(path)?;
        let system = ShearletSystem::build(model.config().clone())?;
        *out = Box::into_raw(Box::new(DenseeModelHandle { model, system }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`densee_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn densee_model_free(model: *mut DenseeModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input shape the model expects.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn densee_model_shape(
    model: *const DenseeModelHandle,
    rows: *mut usize,
    cols: *mut usize,
) -> DenseeStatus {
    run(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        if rows.is_null() || cols.is_null() {
            return Err(Failure::Null("rows/cols"));
        }
        *rows = m.model.config().rows;
        *cols = m.model.config().cols;
        Ok(())
    })
}

/// Number of trained heads, written to `count`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn densee_model_trained_heads(model: *const DenseeModelHandle, count: *mut usize) -> DenseeStatus {
    run(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        *count.as_mut().ok_or(Failure::Null("count"))? = m.model.trained_heads().len();
        Ok(())
    })
}

/// Extract the wavefront set of a `rows × cols` image into `mask`
/// (`rows · cols · 180` bytes).
///
/// # Safety
/// `image` must hold `rows · cols` doubles and `mask` `mask_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn densee_extract(
    model: *const DenseeModelHandle,
    image: *const f64,
    rows: usize,
    cols: usize,
    threshold: f64,
    mask: *mut u8,
    mask_len: usize,
) -> DenseeStatus {
    run(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let n = rows.checked_mul(cols).ok_or_else(|| Failure::Arg("image size overflows".into()))?;
        check_len(self::mask_len(rows, cols)?, mask_len, "mask bytes")?;
        let pixels = slice(image, n, "image")?;
        let out = slice_mut(mask, mask_len, "mask")?;
        let image = Image::from_vec(rows, cols, pixels.to_vec())?;
        let wf = extract_wavefront(&image, &m.model, &m.system, &ExtractOptions::new(threshold))?;
        out.copy_from_slice(wf.as_bytes());
        Ok(())
    })
}

/// Standard shearlet system for `m × m` images.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn densee_shearlet_new(m: usize, out: *mut *mut DenseeShearletHandle) -> DenseeStatus {
    run(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let system = ShearletSystem::build(ShearletConfig::standard(m)?)?;
        *out = Box::into_raw(Box::new(DenseeShearletHandle { system }));
        Ok(())
    })
}

/// # Safety
/// `system` must come from [`densee_shearlet_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn densee_shearlet_free(system: *mut DenseeShearletHandle) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn densee_shearlet_channels(system: *const DenseeShearletHandle, count: *mut usize) -> DenseeStatus {
    run(|| {
        let s = system.as_ref().ok_or(Failure::Null("system"))?;
        *count.as_mut().ok_or(Failure::Null("count"))? = s.system.channel_count();
        Ok(())
    })
}

/// Shearlet coefficients of an `m × m` image, channel-major into `out`
/// (`channels · m · m` doubles).
///
/// # Safety
/// `image` must hold `image_len` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn densee_shearlet_transform(
    system: *const DenseeShearletHandle,
    image: *const f64,
    image_len: usize,
    out: *mut f64,
    out_len: usize,
) -> DenseeStatus {
    run(|| {
        let s = system.as_ref().ok_or(Failure::Null("system"))?;
        let cfg = s.system.config();
        check_len(cfg.rows * cfg.cols, image_len, "pixels")?;
        check_len(cfg.rows * cfg.cols * s.system.channel_count(), out_len, "coefficients")?;
        let image = Image::from_vec(cfg.rows, cfg.cols, slice(image, image_len, "image")?.to_vec())?;
        let coeffs = s.system.transform(&image)?;
        slice_mut(out, out_len, "out")?.copy_from_slice(coeffs.data());
        Ok(())
    })
}

/// Canonical map of an `n × n` mask into an `n × 180` sinogram mask.
///
/// # Safety
/// `mask` must hold `n · n · 180` bytes and `out` `n · 180 · 180` bytes.
#[no_mangle]
pub unsafe extern "C" fn densee_canonical_map(mask: *const u8, n: usize, out: *mut u8) -> DenseeStatus {
    run(|| {
        let x = WavefrontSet::from_vec(n, n, slice(mask, mask_len(n, n)?, "mask")?.to_vec())?;
        let y = canonical_map(&x)?;
        slice_mut(out, mask_len(n, FULL_ANGLES)?, "out")?.copy_from_slice(y.as_bytes());
        Ok(())
    })
}

/// Inverse canonical map after widening by `dilate` λ bins.
///
/// # Safety
/// `mask` must hold `n · 180 · 180` bytes and `out` `n · n · 180` bytes.
#[no_mangle]
pub unsafe extern "C" fn densee_inverse_canonical_map(
    mask: *const u8,
    n: usize,
    dilate: usize,
    out: *mut u8,
) -> DenseeStatus {
    run(|| {
        let y = WavefrontSet::from_vec(n, FULL_ANGLES, slice(mask, mask_len(n, FULL_ANGLES)?, "mask")?.to_vec())?;
        let x = inverse_canonical_map(&dilate_lambda(&y, dilate))?;
        slice_mut(out, mask_len(n, n)?, "out")?.copy_from_slice(x.as_bytes());
        Ok(())
    })
}

/// Corner pixels of a mask as `(row, col)` pairs in `pixels` (`2 · capacity`
/// entries). `count` receives the total, which may exceed `capacity`.
///
/// # Safety
/// `mask` must hold `rows · cols · 180` bytes; `pixels` may be null when
/// `capacity` is 0.
#[no_mangle]
pub unsafe extern "C" fn densee_detect_corners(
    mask: *const u8,
    rows: usize,
    cols: usize,
    pixels: *mut u32,
    capacity: usize,
    count: *mut usize,
) -> DenseeStatus {
    run(|| {
        let wf = WavefrontSet::from_vec(rows, cols, slice(mask, mask_len(rows, cols)?, "mask")?.to_vec())?;
        let corners = detect_corners(&wf);
        *count.as_mut().ok_or(Failure::Null("count"))? = corners.len();
        if capacity > 0 {
            let out = slice_mut(pixels, 2 * capacity, "pixels")?;
            for (k, &(i, j)) in corners.iter().take(capacity).enumerate() {
                out[2 * k] = i as u32;
                out[2 * k + 1] = j as u32;
            }
        }
        Ok(())
    })
}
