//! C ABI for diffpose.
//!
//! Objects cross the boundary as opaque handles that the caller frees with the
//! matching `*_free` function. Every fallible call returns a [`DpStatus`]; on
//! failure a message describing the error is available from
//! [`dp_last_error_message`] on the same thread. Arrays are caller-owned:
//! functions take a pointer plus an element count and never keep either.
//! Matrices are row-major, 3D points are packed `x, y, z` triples, and
//! distances come back in millimetres when the inputs are in metres.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use diffpose::bodymodel::{build_default_model, BodyModel};
use diffpose::metrics;
use diffpose::nnet::SHAPE_DIM;
use diffpose::rotmath::{sixd_to_rotmat, Representation, Rot6D};
use diffpose::trainer::{Checkpoint, Predictor};
use diffpose::Error;
use nalgebra::Vector3;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpStatus {
    Ok = 0,
    NullPointer = 1,
    DegenerateInput = 2,
    InvalidSchedule = 3,
    OutOfRange = 4,
    DimensionMismatch = 5,
    InvalidConfig = 6,
    EmptyInput = 7,
    NonFiniteLoss = 8,
    Format = 9,
    Io = 10,
    InvalidArgument = 11,
    Panic = 12,
}

impl From<&Error> for DpStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::DegenerateInput(_) => DpStatus::DegenerateInput,
            Error::InvalidSchedule(_) => DpStatus::InvalidSchedule,
            Error::OutOfRange { .. } => DpStatus::OutOfRange,
            Error::DimensionMismatch { .. } => DpStatus::DimensionMismatch,
            Error::InvalidConfig { .. } => DpStatus::InvalidConfig,
            Error::EmptyInput(_) => DpStatus::EmptyInput,
            Error::NonFiniteLoss { .. } => DpStatus::NonFiniteLoss,
            Error::Format { .. } => DpStatus::Format,
            Error::Io { .. } => DpStatus::Io,
        }
    }
}

/// Joint-rotation layout of pose vectors.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpRepresentation {
    SixD = 0,
    AxisAngle = 1,
}

impl From<DpRepresentation> for Representation {
    fn from(r: DpRepresentation) -> Self {
        match r {
            DpRepresentation::SixD => Representation::SixD,
            DpRepresentation::AxisAngle => Representation::AxisAngle,
        }
    }
}

impl From<Representation> for DpRepresentation {
    fn from(r: Representation) -> Self {
        match r {
            Representation::SixD => DpRepresentation::SixD,
            Representation::AxisAngle => DpRepresentation::AxisAngle,
        }
    }
}

/// Opaque body model.
pub struct DpBodyModel {
    inner: BodyModel,
}

/// Opaque trained model loaded from a checkpoint.
pub struct DpPredictor {
    inner: Predictor,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(DpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(DpStatus::from(&e), e.to_string())
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

fn null(what: &str) -> Failure {
    Failure(DpStatus::NullPointer, format!("{what} is null"))
}

fn bad(msg: impl Into<String>) -> Failure {
    Failure(DpStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> DpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DpStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            DpStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> FfiResult<&'a mut [f64]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg(p: *const c_char) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| bad("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn points(p: *const f64, n: usize, what: &str) -> FfiResult<Vec<Vector3<f64>>> {
    let flat = slice(p, n.checked_mul(3).ok_or_else(|| bad("point count overflows"))?, what)?;
    Ok(flat.chunks(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect())
}

fn expect_len(what: &str, expected: usize, got: usize) -> FfiResult<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what: what.into(),
            expected,
            got,
        }
        .into())
    }
}

fn write_points(out: &mut [f64], pts: &[Vector3<f64>]) {
    for (o, p) in out.chunks_mut(3).zip(pts) {
        o.copy_from_slice(p.as_slice());
    }
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Gram–Schmidt map from a 6D rotation to a row-major 3×3 matrix.
///
/// # Safety
/// `sixd` must point to 6 readable doubles and `out` to 9 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dp_sixd_to_rotmat(sixd: *const f64, out: *mut f64) -> DpStatus {
    guard(|| {
        let r = sixd_to_rotmat(&Rot6D::from_slice(slice(sixd, 6, "sixd")?))?;
        let out = slice_mut(out, 9, "out")?;
        for i in 0..3 {
            for j in 0..3 {
                out[3 * i + j] = r.0[(i, j)];
            }
        }
        Ok(())
    })
}

/// Builds the built-in body model for `seed`.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn dp_body_model_default(seed: u64, out: *mut *mut DpBodyModel) -> DpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(DpBodyModel {
            inner: build_default_model(seed),
        }));
        Ok(())
    })
}

/// Loads a body-model asset written by the library.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn dp_body_model_load(path: *const c_char, out: *mut *mut DpBodyModel) -> DpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = BodyModel::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(DpBodyModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library, not freed before.
#[no_mangle]
pub unsafe extern "C" fn dp_body_model_free(model: *mut DpBodyModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of joints, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dp_body_model_num_joints(model: *const DpBodyModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_joints())
}

/// Number of vertices, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dp_body_model_num_vertices(model: *const DpBodyModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_vertices())
}

/// Posed mesh and its regressed joints. `theta` holds one rotation per joint
/// in `repr`, `beta` ten shape coefficients. `vertices_out` receives
/// `3 · num_vertices` doubles and `joints_out`, if not null, `3 · num_joints`.
///
/// # Safety
/// Every non-null pointer must reference at least the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn dp_body_model_mesh(
    model: *const DpBodyModel,
    repr: DpRepresentation,
    theta: *const f64,
    theta_len: usize,
    beta: *const f64,
    beta_len: usize,
    vertices_out: *mut f64,
    vertices_len: usize,
    joints_out: *mut f64,
    joints_len: usize,
) -> DpStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let theta = slice(theta, theta_len, "theta")?;
        let beta = slice(beta, beta_len, "beta")?;
        expect_len("vertices_out", 3 * m.num_vertices(), vertices_len)?;
        let verts = m.mesh_with(repr.into(), theta, beta)?;
        write_points(slice_mut(vertices_out, vertices_len, "vertices_out")?, &verts);
        if !joints_out.is_null() {
            expect_len("joints_out", 3 * m.num_joints(), joints_len)?;
            let joints = m.joints3d(&verts)?;
            write_points(slice_mut(joints_out, joints_len, "joints_out")?, &joints);
        }
        Ok(())
    })
}

/// Loads a checkpoint for inference.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn dp_predictor_load(path: *const c_char, out: *mut *mut DpPredictor) -> DpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ckpt = Checkpoint::load(&path_arg(path)?)?;
        let inner = Predictor::new(&ckpt)?;
        *out = Box::into_raw(Box::new(DpPredictor { inner }));
        Ok(())
    })
}

/// # Safety
/// `pred` must be null or a handle from this library, not freed before.
#[no_mangle]
pub unsafe extern "C" fn dp_predictor_free(pred: *mut DpPredictor) {
    if !pred.is_null() {
        drop(Box::from_raw(pred));
    }
}

/// Length of one pose hypothesis, or 0 for a null handle.
///
/// # Safety
/// `pred` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dp_predictor_pose_dim(pred: *const DpPredictor) -> usize {
    pred.as_ref().map_or(0, |p| p.inner.net.arch().pose_dim)
}

/// Length of the conditioning vector, or 0 for a null handle.
///
/// # Safety
/// `pred` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dp_predictor_cond_dim(pred: *const DpPredictor) -> usize {
    pred.as_ref().map_or(0, |p| p.inner.net.arch().cond_dim)
}

/// Rotation layout of the hypotheses.
///
/// # Safety
/// `pred` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dp_predictor_representation(
    pred: *const DpPredictor,
    out: *mut DpRepresentation,
) -> DpStatus {
    guard(|| {
        let p = pred.as_ref().ok_or_else(|| null("pred"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = p.inner.repr.into();
        Ok(())
    })
}

/// Draws `n` pose hypotheses for observation `z` into `out`
/// (`n · pose_dim` doubles, hypothesis-major). The same `(seed, index, h)`
/// always yields the same hypothesis `h`.
///
/// # Safety
/// `z` must hold `z_len` doubles and `out` `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dp_predictor_sample(
    pred: *const DpPredictor,
    z: *const f64,
    z_len: usize,
    seed: u64,
    index: usize,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> DpStatus {
    guard(|| {
        let p = &pred.as_ref().ok_or_else(|| null("pred"))?.inner;
        let d = p.net.arch().pose_dim;
        expect_len("out", n.checked_mul(d).ok_or_else(|| bad("n overflows"))?, out_len)?;
        let z = slice(z, z_len, "z")?;
        let hyps = p.hypotheses(z, seed, index, n)?;
        let out = slice_mut(out, out_len, "out")?;
        for (o, h) in out.chunks_mut(d.max(1)).zip(&hyps) {
            o.copy_from_slice(h);
        }
        Ok(())
    })
}

/// Regressed shape (10 coefficients) and camera `(scale, tx, ty)` for `z`.
///
/// # Safety
/// `z` must hold `z_len` doubles, `beta_out` 10 and `cam_out` 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dp_predictor_shape_camera(
    pred: *const DpPredictor,
    z: *const f64,
    z_len: usize,
    beta_out: *mut f64,
    cam_out: *mut f64,
) -> DpStatus {
    guard(|| {
        let p = &pred.as_ref().ok_or_else(|| null("pred"))?.inner;
        let (beta, cam) = p.shape_and_camera(slice(z, z_len, "z")?)?;
        slice_mut(beta_out, SHAPE_DIM, "beta_out")?.copy_from_slice(&beta);
        slice_mut(cam_out, 3, "cam_out")?.copy_from_slice(&cam.to_array());
        Ok(())
    })
}

/// Root-aligned mean per-joint position error in millimetres. Both arrays
/// hold `num_joints` packed points in metres; joint 0 is the root.
///
/// # Safety
/// `pred` and `gt` must each hold `3 · num_joints` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn dp_mpjpe(pred: *const f64, gt: *const f64, num_joints: usize, out: *mut f64) -> DpStatus {
    guard(|| {
        let v = metrics::mpjpe(&points(pred, num_joints, "pred")?, &points(gt, num_joints, "gt")?)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Mean per-joint error in millimetres after the best similarity alignment.
///
/// # Safety
/// `pred` and `gt` must each hold `3 · num_joints` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn dp_pa_mpjpe(pred: *const f64, gt: *const f64, num_joints: usize, out: *mut f64) -> DpStatus {
    guard(|| {
        let v = metrics::pa_mpjpe(&points(pred, num_joints, "pred")?, &points(gt, num_joints, "gt")?)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}
