//! C interface: opaque model and surrogate handles, status codes and a
//! thread-local error message.
//!
//! Every function returns a [`GhbsStatus`] or a handle that is null on
//! failure; [`ghbs_last_error`] then describes the failure. Panics are caught
//! at the boundary and reported as [`GhbsStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ghbs_core::constitutive::{ElasticParams, PlasticParams};
use ghbs_core::inverse::{misfit_from_outputs, NoiseModel};
use ghbs_core::pipeline::io::read_toml;
use ghbs_core::subspace::heuristic_sample_count;
use ghbs_core::surrogate::{QuadraticSurface, SurrogateFit};
use ghbs_core::triax::{LoadingSchedule, TriaxialTest};

/// Number of plasticity parameters.
pub const GHBS_PARAM_COUNT: usize = 8;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GhbsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    SimulationFailed = 3,
    Io = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Elastic constants of the sand/hydrate mixture.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GhbsElastic {
    pub youngs_sand: f64,
    pub youngs_hydrate: f64,
    pub saturation_exponent: f64,
    pub poisson: f64,
    pub hydrate_saturation: f64,
}

/// Drained triaxial loading schedule.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GhbsSchedule {
    pub sigma_c: f64,
    pub eps_a_rate: f64,
    pub n_steps: usize,
    pub dt: f64,
}

/// State after one load step.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GhbsTrajectoryPoint {
    pub step: usize,
    pub axial_strain: f64,
    pub vol_strain: f64,
    pub p: f64,
    pub q: f64,
    pub lambda_acc: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// A configured triaxial test.
pub struct GhbsModel {
    test: TriaxialTest,
}

/// A fitted quadratic surrogate in the active variables.
pub struct GhbsSurrogate {
    surface: QuadraticSurface,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

type Failure = (GhbsStatus, String);

/// Runs `f` behind a panic guard, recording the message of any failure.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> GhbsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GhbsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            GhbsStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    (GhbsStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl ToString) -> Failure {
    (GhbsStatus::InvalidArgument, msg.to_string())
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn plastic(params: *const f64) -> Result<PlasticParams, Failure> {
    let v = slice(params, GHBS_PARAM_COUNT, "params")?;
    let mut a = [0.0; GHBS_PARAM_COUNT];
    a.copy_from_slice(v);
    Ok(PlasticParams::from_array(a))
}

unsafe fn model_ref<'a>(model: *const GhbsModel) -> Result<&'a GhbsModel, Failure> {
    model.as_ref().ok_or_else(|| null("model"))
}

/// Message describing the last failure on this thread; empty after success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ghbs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a model with default elastic constants and loading schedule.
#[no_mangle]
pub extern "C" fn ghbs_model_new() -> *mut GhbsModel {
    let mut out = ptr::null_mut();
    guard(|| {
        let test = TriaxialTest::new(ElasticParams::default(), LoadingSchedule::default());
        out = Box::into_raw(Box::new(GhbsModel { test }));
        Ok(())
    });
    out
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from [`ghbs_model_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ghbs_model_free(model: *mut GhbsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Replaces the elastic constants after validating them.
///
/// # Safety
/// `model` and `elastic` must be valid pointers or null.
#[no_mangle]
pub unsafe extern "C" fn ghbs_model_set_elastic(model: *mut GhbsModel, elastic: *const GhbsElastic) -> GhbsStatus {
    guard(|| {
        let model = model.as_mut().ok_or_else(|| null("model"))?;
        let e = elastic.as_ref().ok_or_else(|| null("elastic"))?;
        let params = ElasticParams {
            youngs_sand: e.youngs_sand,
            youngs_hydrate: e.youngs_hydrate,
            saturation_exponent: e.saturation_exponent,
            poisson: e.poisson,
            hydrate_saturation: e.hydrate_saturation,
        };
        params.validate().map_err(invalid)?;
        model.test.elastic = params;
        Ok(())
    })
}

/// Replaces the loading schedule after validating it.
///
/// # Safety
/// `model` and `schedule` must be valid pointers or null.
#[no_mangle]
pub unsafe extern "C" fn ghbs_model_set_schedule(model: *mut GhbsModel, schedule: *const GhbsSchedule) -> GhbsStatus {
    guard(|| {
        let model = model.as_mut().ok_or_else(|| null("model"))?;
        let s = schedule.as_ref().ok_or_else(|| null("schedule"))?;
        let sched = LoadingSchedule {
            sigma_c: s.sigma_c,
            eps_a_rate: s.eps_a_rate,
            n_steps: s.n_steps,
            dt: s.dt,
        };
        sched.validate().map_err(invalid)?;
        model.test.schedule = sched;
        Ok(())
    })
}

/// Volumetric strain and shear stress at `n_stations` axial strains.
/// `params` holds the eight physical plasticity parameters.
///
/// # Safety
/// `params` must point to 8 values; `stations`, `vol_strain` and
/// `shear_stress` to `n_stations` values each.
#[no_mangle]
pub unsafe extern "C" fn ghbs_model_qoi(
    model: *const GhbsModel,
    params: *const f64,
    stations: *const f64,
    n_stations: usize,
    vol_strain: *mut f64,
    shear_stress: *mut f64,
) -> GhbsStatus {
    guard(|| {
        let model = model_ref(model)?;
        let pp = plastic(params)?;
        let st = slice(stations, n_stations, "stations")?;
        let vol = slice_mut(vol_strain, n_stations, "vol_strain")?;
        let q = slice_mut(shear_stress, n_stations, "shear_stress")?;
        let r = model.test.qoi(&pp, st).map_err(|e| (GhbsStatus::SimulationFailed, e.to_string()))?;
        vol.copy_from_slice(&r.vol_strain);
        q.copy_from_slice(&r.shear_stress);
        Ok(())
    })
}

/// Full trajectory including the initial state. `*len` receives the number
/// of points; when it exceeds `capacity` nothing is written and
/// `BufferTooSmall` is returned, so a null `out` with zero capacity queries
/// the size.
///
/// # Safety
/// `params` must point to 8 values, `out` to `capacity` points and `len` to
/// writable storage.
#[no_mangle]
pub unsafe extern "C" fn ghbs_model_simulate(
    model: *const GhbsModel,
    params: *const f64,
    out: *mut GhbsTrajectoryPoint,
    capacity: usize,
    len: *mut usize,
) -> GhbsStatus {
    guard(|| {
        let model = model_ref(model)?;
        let pp = plastic(params)?;
        let len = len.as_mut().ok_or_else(|| null("len"))?;
        let rec = model.test.simulate(&pp).map_err(|e| (GhbsStatus::SimulationFailed, e.to_string()))?;
        *len = rec.points.len();
        if rec.points.len() > capacity {
            return Err((
                GhbsStatus::BufferTooSmall,
                format!("trajectory has {} points, buffer holds {capacity}", rec.points.len()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let dst = std::slice::from_raw_parts_mut(out, rec.points.len());
        for (d, p) in dst.iter_mut().zip(&rec.points) {
            *d = GhbsTrajectoryPoint {
                step: p.step,
                axial_strain: p.axial_strain,
                vol_strain: p.vol_strain,
                p: p.p,
                q: p.q,
                lambda_acc: p.lambda_acc,
                alpha: p.alpha,
                beta: p.beta,
            };
        }
        Ok(())
    })
}

/// Half the sum of squared noise-weighted residuals. `data` and `sigma` hold
/// the volumetric strains followed by the shear stresses, `2 n_stations`
/// values each.
///
/// # Safety
/// `params` must point to 8 values, `stations` to `n_stations`, `data` and
/// `sigma` to `2 n_stations`, and `out` to one writable value.
#[no_mangle]
pub unsafe extern "C" fn ghbs_model_misfit(
    model: *const GhbsModel,
    params: *const f64,
    stations: *const f64,
    n_stations: usize,
    data: *const f64,
    sigma: *const f64,
    out: *mut f64,
) -> GhbsStatus {
    guard(|| {
        let model = model_ref(model)?;
        let pp = plastic(params)?;
        let st = slice(stations, n_stations, "stations")?;
        let d = slice(data, 2 * n_stations, "data")?;
        let s = slice(sigma, 2 * n_stations, "sigma")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let noise = NoiseModel::new(s.to_vec()).map_err(invalid)?;
        let r = model.test.qoi(&pp, st).map_err(|e| (GhbsStatus::SimulationFailed, e.to_string()))?;
        *out = misfit_from_outputs(d, &r.to_vector(), &noise).map_err(invalid)?;
        Ok(())
    })
}

/// Loads a surrogate written by the pipeline's surrogate stage.
///
/// # Safety
/// `path` must be a NUL-terminated string or null.
#[no_mangle]
pub unsafe extern "C" fn ghbs_surrogate_load(path: *const c_char) -> *mut GhbsSurrogate {
    let mut out = ptr::null_mut();
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(invalid)?;
        let fit: SurrogateFit = read_toml(Path::new(path)).map_err(|e| (GhbsStatus::Io, e.to_string()))?;
        out = Box::into_raw(Box::new(GhbsSurrogate { surface: fit.surface }));
        Ok(())
    });
    out
}

/// Active dimension of a surrogate, or 0 for null.
///
/// # Safety
/// `surrogate` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn ghbs_surrogate_dim(surrogate: *const GhbsSurrogate) -> usize {
    surrogate.as_ref().map_or(0, |s| s.surface.k)
}

/// Evaluates the surrogate at `y` of length `k`.
///
/// # Safety
/// `y` must point to `k` values and `out` to one writable value.
#[no_mangle]
pub unsafe extern "C" fn ghbs_surrogate_eval(
    surrogate: *const GhbsSurrogate,
    y: *const f64,
    k: usize,
    out: *mut f64,
) -> GhbsStatus {
    guard(|| {
        let s = surrogate.as_ref().ok_or_else(|| null("surrogate"))?;
        let y = slice(y, k, "y")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = s.surface.eval(y).map_err(invalid)?;
        Ok(())
    })
}

/// Releases a surrogate; null is ignored.
///
/// # Safety
/// `surrogate` must come from [`ghbs_surrogate_load`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn ghbs_surrogate_free(surrogate: *mut GhbsSurrogate) {
    if !surrogate.is_null() {
        drop(Box::from_raw(surrogate));
    }
}

/// Gradient sample count `ceil(alpha * ell * ln n)`.
///
/// # Safety
/// `out` must point to one writable value.
#[no_mangle]
pub unsafe extern "C" fn ghbs_heuristic_sample_count(alpha: f64, ell: usize, n: f64, out: *mut usize) -> GhbsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = heuristic_sample_count(alpha, ell, n).map_err(invalid)?;
        Ok(())
    })
}
