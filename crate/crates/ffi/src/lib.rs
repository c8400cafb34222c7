//! C ABI over the `cesn` library.
//!
//! Every fallible function returns a [`CesnStatus`]; on failure the message
//! is available from [`cesn_last_error_message`] on the same thread. Models
//! and trials are opaque handles released with their `_free` function.
//! Matrices cross the boundary row-major: row `k`, column `j` at `k * cols + j`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use cesn::control::{
    blend, effort, ArbitrationPolicy, ControlError, Phase, ReferenceSetup, TrialRunner, Vec2,
};
use cesn::model::{CesnError, CesnModel as Model, Prediction};
use cesn::numerics::{t_critical, NumericsError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CesnStatus {
    CesnOk = 0,
    CesnNullPointer = 1,
    CesnInvalidArgument = 2,
    CesnIo = 3,
    CesnParse = 4,
    CesnDimensionMismatch = 5,
    CesnNumerical = 6,
    CesnBufferTooSmall = 7,
    CesnTrialDone = 8,
    CesnPanic = 9,
}

pub const CESN_POLICY_ADAPTIVE: i32 = 0;
pub const CESN_POLICY_FIXED: i32 = 1;

pub const CESN_PHASE_PRE_CHECKPOINT: i32 = 0;
pub const CESN_PHASE_POST_CHECKPOINT: i32 = 1;
pub const CESN_PHASE_DONE: i32 = 2;

/// Trained model.
pub struct CesnModel {
    inner: Arc<Model>,
}

/// Shared-control trial on the reference plant.
pub struct CesnTrial {
    // Declared before `_model` so it is dropped first. The `'static` borrow
    // points into the `Arc` below, which never moves its contents.
    runner: TrialRunner<'static>,
    _model: Arc<Model>,
}

/// One tick of a trial.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CesnStepRecord {
    pub t: usize,
    pub position: [f64; 2],
    pub u_human: [f64; 2],
    pub u_robot: [f64; 2],
    pub u_shared: [f64; 2],
    pub omega: f64,
    pub half_width: f64,
    /// One of the `CESN_PHASE_*` constants.
    pub phase: i32,
}

/// Outcome of a trial so far.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CesnTrialStatus {
    pub steps: usize,
    pub done: bool,
    pub goal_reached: bool,
    pub collided: bool,
    /// Sum of human command norms; 0 before the first step.
    pub effort: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(CesnStatus, String);

impl Failure {
    fn new(status: CesnStatus, msg: impl Into<String>) -> Self {
        Self(status, msg.into())
    }
}

fn numerics_status(e: &NumericsError) -> CesnStatus {
    match e {
        NumericsError::DimensionMismatch { .. } => CesnStatus::CesnDimensionMismatch,
        NumericsError::InvalidAlpha(_) | NumericsError::InvalidArgument(_) => CesnStatus::CesnInvalidArgument,
        _ => CesnStatus::CesnNumerical,
    }
}

impl From<CesnError> for Failure {
    fn from(e: CesnError) -> Self {
        let status = match &e {
            CesnError::Io(_) => CesnStatus::CesnIo,
            CesnError::CorruptModel(_) | CesnError::VersionMismatch { .. } => CesnStatus::CesnParse,
            CesnError::ContextDimensionMismatch { .. } | CesnError::ContextMismatch { .. } => {
                CesnStatus::CesnDimensionMismatch
            }
            CesnError::Numerics(n) => numerics_status(n),
            CesnError::DegenerateRegression { .. } => CesnStatus::CesnNumerical,
            _ => CesnStatus::CesnInvalidArgument,
        };
        Self(status, e.to_string())
    }
}

impl From<ControlError> for Failure {
    fn from(e: ControlError) -> Self {
        match e {
            ControlError::Model(m) => m.into(),
            ControlError::Numerics(n) => Self(numerics_status(&n), n.to_string()),
            other => Self(CesnStatus::CesnInvalidArgument, other.to_string()),
        }
    }
}

impl From<NumericsError> for Failure {
    fn from(e: NumericsError) -> Self {
        Self(numerics_status(&e), e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CesnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CesnStatus::CesnOk
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            CesnStatus::CesnPanic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(CesnStatus::CesnNullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn model_ref<'a>(model: *const CesnModel) -> Result<&'a Model, Failure> {
    non_null(model, "model")?;
    Ok(&(*model).inner)
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(CesnStatus::CesnInvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn write_prediction(
    pred: &Prediction,
    mean_out: *mut f64,
    half_width_out: *mut f64,
    out_len: usize,
) -> Result<(), Failure> {
    let needed: usize = pred.mean.iter().map(Vec::len).sum();
    if out_len < needed {
        return Err(Failure::new(
            CesnStatus::CesnBufferTooSmall,
            format!("output buffers hold {out_len} values, need {needed}"),
        ));
    }
    if needed == 0 {
        return Ok(());
    }
    non_null(mean_out, "mean_out")?;
    non_null(half_width_out, "half_width_out")?;
    let mean = std::slice::from_raw_parts_mut(mean_out, needed);
    let hw = std::slice::from_raw_parts_mut(half_width_out, needed);
    for (dst, src) in mean.iter_mut().zip(pred.mean.iter().flatten()) {
        *dst = *src;
    }
    for (dst, src) in hw.iter_mut().zip(pred.half_width.iter().flatten()) {
        *dst = *src;
    }
    Ok(())
}

fn install_model(model: Model, out: *mut *mut CesnModel) {
    let handle = Box::new(CesnModel {
        inner: Arc::new(model),
    });
    // SAFETY: callers check `out` for null first.
    unsafe { *out = Box::into_raw(handle) };
}

/// Loads a model file written by `cesn train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cesn_model_load(path: *const c_char, out: *mut *mut CesnModel) -> CesnStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let path = c_str(path, "path")?;
        install_model(Model::load_file(path)?, out);
        Ok(())
    })
}

/// Parses a model from the text of a model file.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cesn_model_load_str(text: *const c_char, out: *mut *mut CesnModel) -> CesnStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let text = c_str(text, "text")?;
        install_model(Model::load(text)?, out);
        Ok(())
    })
}

/// Releases a model. Trials created from it stay valid. Null is ignored.
///
/// # Safety
/// `model` must come from `cesn_model_load*` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cesn_model_free(model: *mut CesnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Context channels, output channels and training duration.
///
/// # Safety
/// All pointers must be valid; any output pointer may be null to skip it.
#[no_mangle]
pub unsafe extern "C" fn cesn_model_dims(
    model: *const CesnModel,
    context_dim: *mut usize,
    output_dim: *mut usize,
    horizon: *mut usize,
) -> CesnStatus {
    guard(|| {
        let m = model_ref(model)?;
        for (p, v) in [(context_dim, m.context_dim()), (output_dim, m.output_dim()), (horizon, m.horizon())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Generates `horizon` steps for `context`.
///
/// `mean_out` and `half_width_out` each need `horizon * output_dim` values.
///
/// # Safety
/// Buffers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn cesn_generate(
    model: *const CesnModel,
    context: *const f64,
    context_len: usize,
    horizon: usize,
    mean_out: *mut f64,
    half_width_out: *mut f64,
    out_len: usize,
) -> CesnStatus {
    guard(|| {
        let m = model_ref(model)?;
        let ctx = slice(context, context_len, "context")?;
        let pred = m.generate(ctx, horizon)?;
        write_prediction(&pred, mean_out, half_width_out, out_len)
    })
}

/// Remaining `remaining` steps conditioned on a captured state at `step`.
///
/// # Safety
/// Buffers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn cesn_condition_at(
    model: *const CesnModel,
    state: *const f64,
    state_len: usize,
    step: usize,
    remaining: usize,
    mean_out: *mut f64,
    half_width_out: *mut f64,
    out_len: usize,
) -> CesnStatus {
    guard(|| {
        let m = model_ref(model)?;
        let s = slice(state, state_len, "state")?;
        let pred = m.condition_at(s, step, remaining)?;
        write_prediction(&pred, mean_out, half_width_out, out_len)
    })
}

/// Human weight in [0, 1] for a half-width vector under the model's calibration.
///
/// # Safety
/// `half_width` must hold `len` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn cesn_pi_to_weight(
    model: *const CesnModel,
    half_width: *const f64,
    len: usize,
    out: *mut f64,
) -> CesnStatus {
    guard(|| {
        let m = model_ref(model)?;
        non_null(out, "out")?;
        let hw = slice(half_width, len, "half_width")?;
        if hw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Failure::new(
                CesnStatus::CesnInvalidArgument,
                "half widths must be finite and non-negative",
            ));
        }
        *out = m.pi_to_weight(hw);
        Ok(())
    })
}

/// `omega * u_h + (1 - omega) * u_r`.
///
/// # Safety
/// Each pointer must reference two doubles.
#[no_mangle]
pub unsafe extern "C" fn cesn_blend(
    u_h: *const f64,
    u_r: *const f64,
    omega: f64,
    out: *mut f64,
) -> CesnStatus {
    guard(|| {
        let h = slice(u_h, 2, "u_h")?;
        let r = slice(u_r, 2, "u_r")?;
        non_null(out, "out")?;
        let v = blend(Vec2::new(h[0], h[1]), Vec2::new(r[0], r[1]), omega)?;
        *out = v.x;
        *out.add(1) = v.y;
        Ok(())
    })
}

/// Two-sided Student-t critical value for `dof` degrees of freedom.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cesn_t_critical(dof: f64, alpha: f64, out: *mut f64) -> CesnStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = t_critical(dof, alpha)?;
        Ok(())
    })
}

/// Starts a trial on the reference plant.
///
/// `policy` is `CESN_POLICY_ADAPTIVE` or `CESN_POLICY_FIXED`; `fixed_omega` is
/// only read for the fixed policy. The trial keeps the model alive.
///
/// # Safety
/// `model` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cesn_trial_new(
    model: *const CesnModel,
    policy: i32,
    fixed_omega: f64,
    out: *mut *mut CesnTrial,
) -> CesnStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        non_null(model, "model")?;
        let arc = Arc::clone(&(*model).inner);
        let policy = match policy {
            CESN_POLICY_ADAPTIVE => ArbitrationPolicy::Adaptive,
            CESN_POLICY_FIXED => ArbitrationPolicy::fixed(fixed_omega)?,
            other => {
                return Err(Failure::new(
                    CesnStatus::CesnInvalidArgument,
                    format!("unknown policy code {other}"),
                ))
            }
        };
        let setup = ReferenceSetup::trial_setup()?;
        // SAFETY: the model lives in `arc`, stored in the same handle and
        // dropped after the runner.
        let model_ref: &'static Model = &*Arc::as_ptr(&arc);
        let runner = TrialRunner::new(model_ref, setup, policy)?;
        *out = Box::into_raw(Box::new(CesnTrial { runner, _model: arc }));
        Ok(())
    })
}

/// Advances one tick with human command `(hx, hy)`.
///
/// Returns `CESN_TRIAL_DONE` without touching `record` once the trial has ended.
///
/// # Safety
/// `trial` must be a live handle; `record` may be null.
#[no_mangle]
pub unsafe extern "C" fn cesn_trial_step(
    trial: *mut CesnTrial,
    hx: f64,
    hy: f64,
    record: *mut CesnStepRecord,
) -> CesnStatus {
    guard(|| {
        non_null(trial, "trial")?;
        let runner = &mut (*trial).runner;
        let u = Vec2::new(hx, hy);
        let mut op = move |_: &cesn::control::Observation| u;
        match runner.step(&mut op)? {
            None => Err(Failure::new(CesnStatus::CesnTrialDone, "trial has ended")),
            Some(r) => {
                if !record.is_null() {
                    *record = CesnStepRecord {
                        t: r.t,
                        position: [r.position.x, r.position.y],
                        u_human: [r.u_human.x, r.u_human.y],
                        u_robot: [r.u_robot.x, r.u_robot.y],
                        u_shared: [r.u_shared.x, r.u_shared.y],
                        omega: r.omega,
                        half_width: r.half_width,
                        phase: match r.phase {
                            Phase::PreCheckpoint => CESN_PHASE_PRE_CHECKPOINT,
                            Phase::PostCheckpoint => CESN_PHASE_POST_CHECKPOINT,
                            Phase::Done => CESN_PHASE_DONE,
                        },
                    };
                }
                Ok(())
            }
        }
    })
}

/// # Safety
/// `trial` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cesn_trial_status(trial: *const CesnTrial, out: *mut CesnTrialStatus) -> CesnStatus {
    guard(|| {
        non_null(trial, "trial")?;
        non_null(out, "out")?;
        let runner = &(*trial).runner;
        let log = runner.log();
        *out = CesnTrialStatus {
            steps: log.steps.len(),
            done: runner.is_done(),
            goal_reached: log.goal_reached,
            collided: log.collided,
            effort: effort(log).unwrap_or(0.0),
        };
        Ok(())
    })
}

/// Releases a trial. Null is ignored.
///
/// # Safety
/// `trial` must come from `cesn_trial_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cesn_trial_free(trial: *mut CesnTrial) {
    if !trial.is_null() {
        drop(Box::from_raw(trial));
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next `cesn_*` call on the same thread.
#[no_mangle]
pub extern "C" fn cesn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, e.g. "0.1.0". Static storage.
#[no_mangle]
pub extern "C" fn cesn_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        unsafe { CStr::from_ptr(cesn_last_error_message()) }
            .to_string_lossy()
            .into_owned()
    }

    #[test]
    fn blend_and_errors() {
        let mut out = [0.0; 2];
        let s = unsafe { cesn_blend([1.0, 0.0].as_ptr(), [0.0, 1.0].as_ptr(), 0.25, out.as_mut_ptr()) };
        assert_eq!(s, CesnStatus::CesnOk);
        assert_eq!(out, [0.25, 0.75]);
        assert!(last_error().is_empty());
        let s = unsafe { cesn_blend([1.0, 0.0].as_ptr(), [0.0, 1.0].as_ptr(), 1.5, out.as_mut_ptr()) };
        assert_eq!(s, CesnStatus::CesnInvalidArgument);
        assert!(last_error().contains("1.5"));
        let s = unsafe { cesn_blend(ptr::null(), [0.0, 1.0].as_ptr(), 0.5, out.as_mut_ptr()) };
        assert_eq!(s, CesnStatus::CesnNullPointer);
    }

    #[test]
    fn panics_become_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, CesnStatus::CesnPanic);
        assert!(last_error().contains("boom"));
    }

    #[test]
    fn version_is_crate_version() {
        let v = unsafe { CStr::from_ptr(cesn_version()) }.to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}
