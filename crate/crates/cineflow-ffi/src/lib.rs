//! C ABI for the cineflow reconstruction library.
//!
//! Every heap object crosses the boundary as an opaque handle created and
//! destroyed by this crate; callers never see the layout. Every fallible
//! call returns a [`CfStatus`] and, on failure, leaves a human-readable
//! message retrievable with [`cf_last_error_message`]. Panics are caught at
//! the boundary and reported as [`CfStatus::Panic`] instead of unwinding
//! into C.
//!
//! Complex arrays cross the boundary as interleaved doubles
//! `(re, im, re, im, ...)` in row-major `(t, x, y)` order.
//!
//! The build script writes the matching C header to `include/cineflow.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ndarray::Array3;
use num_complex::Complex64;

use cineflow::config::ModelsConfig;
use cineflow::grid::{CoilMaps, ImageSequence, KSpaceData, VelocityField};
use cineflow::metrics;
use cineflow::motion::FlowMode;
use cineflow::mri::MriSystem;
use cineflow::objective::ModelParams;
use cineflow::solver::{reconstruct, trace_to_csv, ModelKind, Reconstruction, SolverParams};

// ---------------------------------------------------------------------------
// Status codes and the per-thread error message.
// ---------------------------------------------------------------------------

/// Result of every fallible call in this API.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument was structurally valid but semantically rejected
    /// (bad dimensions, non-finite values, invalid parameters, ...).
    InvalidArgument = 2,
    /// The operating system reported an I/O failure.
    Io = 3,
    /// A file was read but its contents are not a valid artifact.
    BadData = 4,
    /// The iteration diverged to non-finite values.
    Diverged = 5,
    /// An internal panic was caught at the boundary.
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

/// Message describing the most recent failure on the calling thread.
///
/// The pointer stays valid until the next failing call on the same thread.
/// After a successful call the previous message is left in place; inspect
/// it only when a call has just returned something other than `CF_STATUS_OK`.
#[no_mangle]
pub extern "C" fn cf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Version of the library as a static string.
#[no_mangle]
pub extern "C" fn cf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

struct CallError {
    status: CfStatus,
    message: String,
}

impl CallError {
    fn new(status: CfStatus, message: impl Into<String>) -> Self {
        CallError { status, message: message.into() }
    }
}

impl From<cineflow::Error> for CallError {
    fn from(err: cineflow::Error) -> Self {
        let status = match &err {
            cineflow::Error::Io { .. } | cineflow::Error::MissingArtifact { .. } => CfStatus::Io,
            cineflow::Error::MalformedHeader { .. } | cineflow::Error::PayloadMismatch { .. } => {
                CfStatus::BadData
            }
            cineflow::Error::Divergence(_) => CfStatus::Diverged,
            _ => CfStatus::InvalidArgument,
        };
        CallError { status, message: err.to_string() }
    }
}

type CallResult = Result<(), CallError>;

/// Runs an API body, converting failures and panics into status codes.
fn api_call<F: FnOnce() -> CallResult>(f: F) -> CfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CfStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(&e.message);
            e.status
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| (*s).to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal panic: {what}"));
            CfStatus::Panic
        }
    }
}

// ---------------------------------------------------------------------------
// Pointer plumbing.
// ---------------------------------------------------------------------------

fn null_err(what: &str) -> CallError {
    CallError::new(CfStatus::NullArgument, format!("{what} must not be null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, CallError> {
    p.as_ref().ok_or_else(|| null_err(what))
}

unsafe fn borrow_out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, CallError> {
    p.as_mut().ok_or_else(|| null_err(what))
}

unsafe fn path_from(p: *const c_char, what: &str) -> Result<&'static Path, CallError> {
    if p.is_null() {
        return Err(null_err(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| CallError::new(CfStatus::InvalidArgument, format!("{what} is not valid UTF-8")))?;
    Ok(Path::new(s))
}

fn emit<T>(out: &mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

// ---------------------------------------------------------------------------
// Opaque handles.
// ---------------------------------------------------------------------------

/// A complex-valued image sequence (opaque).
pub struct CfImageSequence(ImageSequence);

/// A complex-valued velocity field (opaque).
pub struct CfVelocityField(VelocityField);

/// Undersampled multi-coil k-space measurements with their sampling mask
/// (opaque).
pub struct CfKSpace(KSpaceData);

/// Per-coil complex sensitivity maps (opaque).
pub struct CfCoilMaps(CoilMaps);

/// The output of a reconstruction: image sequence, velocity field, and the
/// iteration trace (opaque).
pub struct CfReconstruction(Reconstruction);

// ---------------------------------------------------------------------------
// Plain-data mirrors of the parameter structs.
// ---------------------------------------------------------------------------

/// How the flow term couples the real and imaginary image channels.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfFlowMode {
    /// Complex transport with real/imaginary interchange (default).
    Complex = 0,
    /// Each channel advected independently by its own velocity part.
    Decoupled = 1,
    /// Both channels advected by the real velocity part only.
    SharedReal = 2,
}

impl From<CfFlowMode> for FlowMode {
    fn from(m: CfFlowMode) -> Self {
        match m {
            CfFlowMode::Complex => FlowMode::Complex,
            CfFlowMode::Decoupled => FlowMode::Decoupled,
            CfFlowMode::SharedReal => FlowMode::SharedReal,
        }
    }
}

impl From<FlowMode> for CfFlowMode {
    fn from(m: FlowMode) -> Self {
        match m {
            FlowMode::Complex => CfFlowMode::Complex,
            FlowMode::Decoupled => CfFlowMode::Decoupled,
            FlowMode::SharedReal => CfFlowMode::SharedReal,
        }
    }
}

/// Which reconstruction model to run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfModel {
    /// Frame-wise: spatial regularization only, frames independent.
    Fw = 0,
    /// Temporal difference: flow term with the velocity frozen at zero.
    Dt = 1,
    /// Joint optical flow: alternates image and velocity estimation.
    Of = 2,
    /// Optical flow with the velocity frozen at a supplied reference field.
    CheatOf = 3,
}

/// Weights and Huber widths of the variational objective.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CfModelParams {
    /// Weight of the spatial image regularizer.
    pub alpha1: f64,
    /// Weight of the spatial velocity regularizer.
    pub alpha2: f64,
    /// Weight of the flow-residual coupling term.
    pub alpha3: f64,
    /// Huber width for the image regularizer.
    pub eps1: f64,
    /// Huber width for the velocity regularizer.
    pub eps2: f64,
    /// Huber width for the flow term.
    pub eps3: f64,
    /// Channel coupling used by the flow term.
    pub flow_mode: CfFlowMode,
}

impl From<CfModelParams> for ModelParams {
    fn from(p: CfModelParams) -> Self {
        ModelParams {
            alpha1: p.alpha1,
            alpha2: p.alpha2,
            alpha3: p.alpha3,
            eps1: p.eps1,
            eps2: p.eps2,
            eps3: p.eps3,
            flow_mode: p.flow_mode.into(),
        }
    }
}

impl From<ModelParams> for CfModelParams {
    fn from(p: ModelParams) -> Self {
        CfModelParams {
            alpha1: p.alpha1,
            alpha2: p.alpha2,
            alpha3: p.alpha3,
            eps1: p.eps1,
            eps2: p.eps2,
            eps3: p.eps3,
            flow_mode: p.flow_mode.into(),
        }
    }
}

/// Iteration budgets and stopping thresholds.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CfSolverParams {
    /// Initial Gaussian smoothing width for the outer schedule (pixels).
    pub sigma: f64,
    /// Maximum outer (alternation) iterations.
    pub n_outer: usize,
    /// Maximum inner iterations per image subproblem.
    pub n_rho: usize,
    /// Maximum inner iterations per velocity subproblem.
    pub n_v: usize,
    /// Relative-change threshold for early stopping.
    pub delta: f64,
}

impl From<CfSolverParams> for SolverParams {
    fn from(p: CfSolverParams) -> Self {
        SolverParams { sigma: p.sigma, n_outer: p.n_outer, n_rho: p.n_rho, n_v: p.n_v, delta: p.delta }
    }
}

/// Writes the tuned default objective parameters for `model` into `out`.
#[no_mangle]
pub extern "C" fn cf_model_params_default(model: CfModel, out: *mut CfModelParams) -> CfStatus {
    api_call(|| {
        let slot = unsafe { borrow_out(out, "out") }?;
        let defaults = ModelsConfig::default();
        let params = match model {
            CfModel::Fw => defaults.fw,
            CfModel::Dt => defaults.dt,
            CfModel::Of => defaults.of,
            CfModel::CheatOf => defaults.cheat_of,
        };
        *slot = params.into();
        Ok(())
    })
}

/// Writes the default solver parameters into `out`.
#[no_mangle]
pub extern "C" fn cf_solver_params_default(out: *mut CfSolverParams) -> CfStatus {
    api_call(|| {
        let slot = unsafe { borrow_out(out, "out") }?;
        let d = SolverParams::default();
        *slot = CfSolverParams { sigma: d.sigma, n_outer: d.n_outer, n_rho: d.n_rho, n_v: d.n_v, delta: d.delta };
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Image sequences.
// ---------------------------------------------------------------------------

/// Creates an image sequence from `2*nt*nx*ny` interleaved doubles.
#[no_mangle]
pub unsafe extern "C" fn cf_image_sequence_new(
    nt: usize,
    nx: usize,
    ny: usize,
    interleaved: *const f64,
    out: *mut *mut CfImageSequence,
) -> CfStatus {
    api_call(|| {
        let slot = borrow_out(out, "out")?;
        if interleaved.is_null() {
            return Err(null_err("interleaved"));
        }
        let len = 2 * nt * nx * ny;
        let values = std::slice::from_raw_parts(interleaved, len);
        let data = Array3::from_shape_fn((nt, nx, ny), |(t, i, j)| {
            let k = 2 * ((t * nx + i) * ny + j);
            Complex64::new(values[k], values[k + 1])
        });
        emit(slot, CfImageSequence(ImageSequence::new(data)?));
        Ok(())
    })
}

/// Loads an image sequence from a file written by this library.
#[no_mangle]
pub unsafe extern "C" fn cf_image_sequence_load(
    path: *const c_char,
    out: *mut *mut CfImageSequence,
) -> CfStatus {
    api_call(|| {
        let slot = borrow_out(out, "out")?;
        let path = path_from(path, "path")?;
        emit(slot, CfImageSequence(ImageSequence::load(path)?));
        Ok(())
    })
}

/// Saves an image sequence to a file.
#[no_mangle]
pub unsafe extern "C" fn cf_image_sequence_save(
    seq: *const CfImageSequence,
    path: *const c_char,
) -> CfStatus {
    api_call(|| {
        let seq = borrow(seq, "seq")?;
        let path = path_from(path, "path")?;
        seq.0.save(path)?;
        Ok(())
    })
}

/// Reports the dimensions `(nt, nx, ny)` of an image sequence.
#[no_mangle]
pub unsafe extern "C" fn cf_image_sequence_dims(
    seq: *const CfImageSequence,
    nt: *mut usize,
    nx: *mut usize,
    ny: *mut usize,
) -> CfStatus {
    api_call(|| {
        let seq = borrow(seq, "seq")?;
        let dims = seq.0.dims();
        *borrow_out(nt, "nt")? = dims.0;
        *borrow_out(nx, "nx")? = dims.1;
        *borrow_out(ny, "ny")? = dims.2;
        Ok(())
    })
}

/// Copies a sequence into `2*nt*nx*ny` interleaved doubles; `len` must be
/// exactly that count.
#[no_mangle]
pub unsafe extern "C" fn cf_image_sequence_copy(
    seq: *const CfImageSequence,
    interleaved: *mut f64,
    len: usize,
) -> CfStatus {
    api_call(|| {
        let seq = borrow(seq, "seq")?;
        if interleaved.is_null() {
            return Err(null_err("interleaved"));
        }
        let (nt, nx, ny) = seq.0.dims();
        let need = 2 * nt * nx * ny;
        if len != need {
            return Err(CallError::new(
                CfStatus::InvalidArgument,
                format!("buffer holds {len} doubles, the sequence needs {need}"),
            ));
        }
        let out = std::slice::from_raw_parts_mut(interleaved, len);
        for (k, z) in seq.0.data().iter().enumerate() {
            out[2 * k] = z.re;
            out[2 * k + 1] = z.im;
        }
        Ok(())
    })
}

/// Releases an image sequence. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cf_image_sequence_free(seq: *mut CfImageSequence) {
    free_handle(seq);
}

// ---------------------------------------------------------------------------
// Velocity fields.
// ---------------------------------------------------------------------------

/// Loads a velocity field from a file written by this library.
#[no_mangle]
pub unsafe extern "C" fn cf_velocity_field_load(
    path: *const c_char,
    out: *mut *mut CfVelocityField,
) -> CfStatus {
    api_call(|| {
        let slot = borrow_out(out, "out")?;
        let path = path_from(path, "path")?;
        emit(slot, CfVelocityField(VelocityField::load(path)?));
        Ok(())
    })
}

/// Saves a velocity field to a file.
#[no_mangle]
pub unsafe extern "C" fn cf_velocity_field_save(
    v: *const CfVelocityField,
    path: *const c_char,
) -> CfStatus {
    api_call(|| {
        let v = borrow(v, "v")?;
        let path = path_from(path, "path")?;
        v.0.save(path)?;
        Ok(())
    })
}

/// Reports the dimensions `(nt, nx, ny)` of a velocity field.
#[no_mangle]
pub unsafe extern "C" fn cf_velocity_field_dims(
    v: *const CfVelocityField,
    nt: *mut usize,
    nx: *mut usize,
    ny: *mut usize,
) -> CfStatus {
    api_call(|| {
        let v = borrow(v, "v")?;
        let dims = v.0.dims();
        *borrow_out(nt, "nt")? = dims.0;
        *borrow_out(nx, "nx")? = dims.1;
        *borrow_out(ny, "ny")? = dims.2;
        Ok(())
    })
}

/// Releases a velocity field. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cf_velocity_field_free(v: *mut CfVelocityField) {
    free_handle(v);
}

// ---------------------------------------------------------------------------
// Measurements and coil maps.
// ---------------------------------------------------------------------------

/// Loads k-space measurements (with their sampling mask) from a file.
#[no_mangle]
pub unsafe extern "C" fn cf_kspace_load(path: *const c_char, out: *mut *mut CfKSpace) -> CfStatus {
    api_call(|| {
        let slot = borrow_out(out, "out")?;
        let path = path_from(path, "path")?;
        emit(slot, CfKSpace(KSpaceData::load(path)?));
        Ok(())
    })
}

/// Reports the dimensions `(nt, nc, nx, ny)` of a k-space object.
#[no_mangle]
pub unsafe extern "C" fn cf_kspace_dims(
    y: *const CfKSpace,
    nt: *mut usize,
    nc: *mut usize,
    nx: *mut usize,
    ny: *mut usize,
) -> CfStatus {
    api_call(|| {
        let y = borrow(y, "y")?;
        let dims = y.0.dims();
        *borrow_out(nt, "nt")? = dims.0;
        *borrow_out(nc, "nc")? = dims.1;
        *borrow_out(nx, "nx")? = dims.2;
        *borrow_out(ny, "ny")? = dims.3;
        Ok(())
    })
}

/// Releases a k-space object. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cf_kspace_free(y: *mut CfKSpace) {
    free_handle(y);
}

/// Loads coil sensitivity maps from a file.
#[no_mangle]
pub unsafe extern "C" fn cf_coil_maps_load(
    path: *const c_char,
    out: *mut *mut CfCoilMaps,
) -> CfStatus {
    api_call(|| {
        let slot = borrow_out(out, "out")?;
        let path = path_from(path, "path")?;
        emit(slot, CfCoilMaps(CoilMaps::load(path)?));
        Ok(())
    })
}

/// Reports the dimensions `(nc, nx, ny)` of a set of coil maps.
#[no_mangle]
pub unsafe extern "C" fn cf_coil_maps_dims(
    coils: *const CfCoilMaps,
    nc: *mut usize,
    nx: *mut usize,
    ny: *mut usize,
) -> CfStatus {
    api_call(|| {
        let coils = borrow(coils, "coils")?;
        let dims = coils.0.dims();
        *borrow_out(nc, "nc")? = dims.0;
        *borrow_out(nx, "nx")? = dims.1;
        *borrow_out(ny, "ny")? = dims.2;
        Ok(())
    })
}

/// Releases coil maps. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cf_coil_maps_free(coils: *mut CfCoilMaps) {
    free_handle(coils);
}

// ---------------------------------------------------------------------------
// Reconstruction.
// ---------------------------------------------------------------------------

/// Reconstructs an image sequence (and, for the joint model, a velocity
/// field) from undersampled measurements.
///
/// `model_params` and `solver_params` may be null to use the tuned defaults
/// for `model`. `reference_velocity` is required by `CF_MODEL_CHEAT_OF` and
/// ignored by every other model.
#[no_mangle]
pub unsafe extern "C" fn cf_reconstruct(
    y: *const CfKSpace,
    coils: *const CfCoilMaps,
    model: CfModel,
    model_params: *const CfModelParams,
    solver_params: *const CfSolverParams,
    reference_velocity: *const CfVelocityField,
    out: *mut *mut CfReconstruction,
) -> CfStatus {
    api_call(|| {
        let slot = borrow_out(out, "out")?;
        let y = borrow(y, "y")?;
        let coils = borrow(coils, "coils")?;
        let defaults = ModelsConfig::default();
        let mp: ModelParams = match model_params.as_ref() {
            Some(p) => (*p).into(),
            None => match model {
                CfModel::Fw => defaults.fw,
                CfModel::Dt => defaults.dt,
                CfModel::Of => defaults.of,
                CfModel::CheatOf => defaults.cheat_of,
            },
        };
        let sp: SolverParams = match solver_params.as_ref() {
            Some(p) => (*p).into(),
            None => SolverParams::default(),
        };
        let kind = match model {
            CfModel::Fw => ModelKind::Fw,
            CfModel::Dt => ModelKind::Dt,
            CfModel::Of => ModelKind::Of,
            CfModel::CheatOf => {
                let v = reference_velocity.as_ref().ok_or_else(|| {
                    CallError::new(
                        CfStatus::NullArgument,
                        "the frozen-velocity model needs reference_velocity",
                    )
                })?;
                ModelKind::CheatOf(v.0.clone())
            }
        };
        let system = MriSystem::new(coils.0.clone(), y.0.mask().clone())?;
        let recon = reconstruct(&y.0, &system, &kind, &mp, &sp)?;
        emit(slot, CfReconstruction(recon));
        Ok(())
    })
}

/// Clones the reconstructed image sequence out of a reconstruction.
#[no_mangle]
pub unsafe extern "C" fn cf_reconstruction_image(
    recon: *const CfReconstruction,
    out: *mut *mut CfImageSequence,
) -> CfStatus {
    api_call(|| {
        let recon = borrow(recon, "recon")?;
        let slot = borrow_out(out, "out")?;
        emit(slot, CfImageSequence(recon.0.rho.clone()));
        Ok(())
    })
}

/// Clones the estimated velocity field out of a reconstruction. Models that
/// do not estimate motion report the zero field.
#[no_mangle]
pub unsafe extern "C" fn cf_reconstruction_velocity(
    recon: *const CfReconstruction,
    out: *mut *mut CfVelocityField,
) -> CfStatus {
    api_call(|| {
        let recon = borrow(recon, "recon")?;
        let slot = borrow_out(out, "out")?;
        emit(slot, CfVelocityField(recon.0.v.clone()));
        Ok(())
    })
}

/// Renders the iteration trace as a CSV string. Free it with
/// `cf_string_free`.
#[no_mangle]
pub unsafe extern "C" fn cf_reconstruction_trace_csv(
    recon: *const CfReconstruction,
    out: *mut *mut c_char,
) -> CfStatus {
    api_call(|| {
        let recon = borrow(recon, "recon")?;
        let slot = borrow_out(out, "out")?;
        let csv = trace_to_csv(&recon.0.trace);
        let c = CString::new(csv)
            .map_err(|_| CallError::new(CfStatus::InvalidArgument, "trace contains NUL"))?;
        *slot = c.into_raw();
        Ok(())
    })
}

/// Releases a reconstruction. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cf_reconstruction_free(recon: *mut CfReconstruction) {
    free_handle(recon);
}

/// Releases a string allocated by this library. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn cf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

/// Per-frame PSNR (dB) and SSIM between the magnitudes of `gt` and `rec`.
///
/// `mask` is either null (score everywhere) or `nx*ny` bytes in row-major
/// order where nonzero marks pixels to score. `psnr` and `ssim` are each
/// either null or an `nt`-element output buffer; at least one must be
/// non-null.
#[no_mangle]
pub unsafe extern "C" fn cf_image_metrics(
    gt: *const CfImageSequence,
    rec: *const CfImageSequence,
    mask: *const u8,
    psnr: *mut f64,
    ssim: *mut f64,
) -> CfStatus {
    api_call(|| {
        let gt = borrow(gt, "gt")?;
        let rec = borrow(rec, "rec")?;
        if psnr.is_null() && ssim.is_null() {
            return Err(null_err("at least one of psnr and ssim"));
        }
        let (nt, nx, ny) = gt.0.dims();
        let mask_arr = if mask.is_null() {
            ndarray::Array2::from_elem((nx, ny), true)
        } else {
            let bytes = std::slice::from_raw_parts(mask, nx * ny);
            ndarray::Array2::from_shape_fn((nx, ny), |(i, j)| bytes[i * ny + j] != 0)
        };
        if !psnr.is_null() {
            let values = metrics::psnr_masked(&gt.0, &rec.0, &mask_arr)?;
            std::slice::from_raw_parts_mut(psnr, nt).copy_from_slice(&values);
        }
        if !ssim.is_null() {
            let values = metrics::ssim_masked(&gt.0, &rec.0, &mask_arr)?;
            std::slice::from_raw_parts_mut(ssim, nt).copy_from_slice(&values);
        }
        Ok(())
    })
}
