//! C ABI over the inference pipeline. Handles are opaque; every fallible
//! call returns an [`ErrornetStatus`] and leaves a message for
//! [`errornet_last_error`] on failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use errornet::autograd::Tensor;
use errornet::data::{make_batch, Sample};
use errornet::eval::{self, Pipeline};
use errornet::nn::NetKind;
use errornet::report::Variant;
use errornet::train::{checkpoint_spec, load_network};
use errornet::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrornetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Io = 5,
    Format = 6,
    Numerical = 7,
    Panic = 8,
}

/// A loaded segmentation pipeline, optionally with an error predictor.
pub struct ErrornetPipeline {
    inner: Pipeline,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> ErrornetStatus {
    match e {
        Error::Usage(_) | Error::Dimension { .. } => ErrornetStatus::InvalidArgument,
        Error::Config(_) => ErrornetStatus::Config,
        Error::Data(_) | Error::Image { .. } => ErrornetStatus::Data,
        Error::Io { .. } => ErrornetStatus::Io,
        Error::Format { .. } => ErrornetStatus::Format,
        Error::Numerical(_) => ErrornetStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (ErrornetStatus, String)>) -> ErrornetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ErrornetStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ErrornetStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (ErrornetStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (ErrornetStatus, String) {
    (ErrornetStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (ErrornetStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (ErrornetStatus::InvalidArgument, format!("{what} is not utf-8")))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn errornet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a trained run. `variant` is one of `base`, `err-pred`,
/// `err-pred+vae`, `errornet`, or null for `errornet`.
///
/// # Safety
/// `run_dir` and a non-null `variant` must be NUL-terminated strings; `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn errornet_pipeline_load(
    run_dir: *const c_char,
    variant: *const c_char,
    out: *mut *mut ErrornetPipeline,
) -> ErrornetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let dir = Path::new(c_str(run_dir, "run_dir")?);
        let v = if variant.is_null() {
            Variant::JOINT
        } else {
            let name = c_str(variant, "variant")?;
            Variant::from_name(name).ok_or((ErrornetStatus::InvalidArgument, format!("unknown variant {name:?}")))?
        };
        let (seg_file, err_file) = v.files();
        let spec = checkpoint_spec(dir, seg_file).map_err(lib_err)?;
        let seg = load_network(dir, seg_file, NetKind::Segmentation, &spec).map_err(lib_err)?;
        let err = err_file
            .map(|f| load_network(dir, f, NetKind::Prediction, &spec))
            .transpose()
            .map_err(lib_err)?;
        let inner = Pipeline::new(seg, err).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(ErrornetPipeline { inner }));
        Ok(())
    })
}

/// # Safety
/// `p` must come from [`errornet_pipeline_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn errornet_pipeline_free(p: *mut ErrornetPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Side length of the square images the pipeline expects, or 0 for null.
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn errornet_pipeline_resolution(p: *const ErrornetPipeline) -> u32 {
    p.as_ref().map_or(0, |p| p.inner.seg.spec().resolution as u32)
}

/// Whether the pipeline can correct (has an error predictor).
///
/// # Safety
/// `p` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn errornet_pipeline_can_correct(p: *const ErrornetPipeline) -> bool {
    p.as_ref().is_some_and(|p| p.inner.err.is_some())
}

/// Segments one `R x R` row-major image of intensities in `[0, 1]`.
/// `fov` may be null (whole image). Writes the probability map to
/// `out_prob`; with `correct`, the corrected map `clamp(S + E, 0, 1)`.
///
/// # Safety
/// `image`, `out_prob` and a non-null `fov` must each hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn errornet_pipeline_segment(
    p: *mut ErrornetPipeline,
    image: *const f32,
    fov: *const f32,
    len: usize,
    correct: bool,
    out_prob: *mut f32,
) -> ErrornetStatus {
    guard(|| {
        let p = p.as_mut().ok_or_else(|| null("pipeline"))?;
        if image.is_null() {
            return Err(null("image"));
        }
        if out_prob.is_null() {
            return Err(null("out_prob"));
        }
        let r = p.inner.seg.spec().resolution;
        if len != r * r {
            return Err((
                ErrornetStatus::InvalidArgument,
                format!("expected {} pixels, got {len}", r * r),
            ));
        }
        if correct && p.inner.err.is_none() {
            return Err((
                ErrornetStatus::InvalidArgument,
                "pipeline has no error predictor".into(),
            ));
        }
        let shape = vec![1, r, r];
        let img = Tensor::new(shape.clone(), std::slice::from_raw_parts(image, len).to_vec()).map_err(lib_err)?;
        let f = if fov.is_null() {
            Tensor::full(shape.clone(), 1.0)
        } else {
            Tensor::new(shape.clone(), std::slice::from_raw_parts(fov, len).to_vec()).map_err(lib_err)?
        };
        let sample = Sample::new(img, f.map(|_| 0.0), f, "ffi", "image").map_err(lib_err)?;
        let batch = make_batch(&[&sample]).map_err(lib_err)?;
        let mut s = p.inner.segment(&batch.images).map_err(lib_err)?;
        if correct {
            s = p.inner.correct(&batch.images, &s).map_err(lib_err)?;
        }
        std::slice::from_raw_parts_mut(out_prob, len).copy_from_slice(s.data());
        Ok(())
    })
}

/// Dice of two binary masks over `len` pixels, restricted to `fov` when it
/// is non-null. Returns NaN for null masks.
///
/// # Safety
/// Non-null pointers must each hold `len` floats.
#[no_mangle]
pub unsafe extern "C" fn errornet_dice(a: *const f32, b: *const f32, fov: *const f32, len: usize) -> f64 {
    if a.is_null() || b.is_null() {
        return f64::NAN;
    }
    let (a, b) = (std::slice::from_raw_parts(a, len), std::slice::from_raw_parts(b, len));
    let ones;
    let f = if fov.is_null() {
        ones = vec![1.0; len];
        &ones[..]
    } else {
        std::slice::from_raw_parts(fov, len)
    };
    eval::dice(a, b, f)
}
