//! C ABI for embedding the simulator in other languages.
//!
//! The surface is a classic opaque-handle API: create a simulation from a
//! scene config file, step it, read back positions/velocities and per-step
//! statistics, destroy it. All functions return a [`CoarsimStatus`]; the last
//! error message is retrievable per handle (or thread-locally for creation
//! failures). Handles are not thread-safe; callers must serialize access to
//! a handle.
//!
//! The matching header is generated into `include/coarsim.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use coarsim::scene;
use coarsim::stepper::Simulation;

/// Status codes returned by every fallible API call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoarsimStatus {
    CoarsimOk = 0,
    /// A required pointer argument was null.
    CoarsimNullArgument = 1,
    /// A string argument was not valid UTF-8.
    CoarsimInvalidUtf8 = 2,
    /// Config parse/validation or mesh loading failed.
    CoarsimConfigError = 3,
    /// The solver failed (non-convergence, infeasible state, breakdown).
    CoarsimSolverError = 4,
    /// An output buffer was too small.
    CoarsimBufferTooSmall = 5,
}

/// Statistics of the most recently completed step.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct CoarsimStepStats {
    pub newton_iters: u64,
    /// Coarse-system PCG iterations summed over the step.
    pub pcg_iters: u64,
    /// Post-coarsening iterations summed over the step.
    pub post_iters: u64,
    /// Mean active ratio (coarse DoF / fine DoF) over the step's iterations.
    pub active_ratio_mean: f64,
    /// Incremental potential at the start of the step's last iteration.
    pub energy: f64,
}

/// Opaque simulation handle.
pub struct CoarsimSim {
    sim: Simulation,
    configured_frames: u64,
    last_error: Option<CString>,
    last_stats: Option<CoarsimStepStats>,
}

thread_local! {
    static CREATE_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn store_create_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    CREATE_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn set_error(handle: &mut CoarsimSim, msg: String) {
    handle.last_error =
        Some(CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap()));
}

/// Create a simulation from a scene config file (TOML). On success writes the
/// new handle to `out` and returns `CoarsimOk`. On failure the reason is
/// available via `coarsim_last_error(NULL, ...)`.
///
/// # Safety
/// `config_path` must be a valid NUL-terminated string; `out` must be a valid
/// pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn coarsim_sim_create(
    config_path: *const c_char,
    out: *mut *mut CoarsimSim,
) -> CoarsimStatus {
    if config_path.is_null() || out.is_null() {
        return CoarsimStatus::CoarsimNullArgument;
    }
    unsafe { *out = std::ptr::null_mut() };
    let path = match unsafe { CStr::from_ptr(config_path) }.to_str() {
        Ok(s) => Path::new(s),
        Err(_) => return CoarsimStatus::CoarsimInvalidUtf8,
    };
    let cfg = match scene::load_config(path) {
        Ok(cfg) => cfg,
        Err(e) => {
            store_create_error(e.to_string());
            return CoarsimStatus::CoarsimConfigError;
        }
    };
    let base = path.parent().unwrap_or(Path::new("."));
    match scene::build_simulation(&cfg, base, None) {
        Ok(sim) => {
            let handle = Box::new(CoarsimSim {
                sim,
                configured_frames: cfg.scene.frames as u64,
                last_error: None,
                last_stats: None,
            });
            unsafe { *out = Box::into_raw(handle) };
            CoarsimStatus::CoarsimOk
        }
        Err(e) => {
            store_create_error(e.to_string());
            CoarsimStatus::CoarsimConfigError
        }
    }
}

/// Destroy a handle created by `coarsim_sim_create`. Null is a no-op.
///
/// # Safety
/// `sim` must be null or a pointer previously returned by
/// `coarsim_sim_create` that has not been destroyed.
#[no_mangle]
pub unsafe extern "C" fn coarsim_sim_destroy(sim: *mut CoarsimSim) {
    if !sim.is_null() {
        drop(unsafe { Box::from_raw(sim) });
    }
}

/// Advance the simulation by one time step.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn coarsim_sim_step(sim: *mut CoarsimSim) -> CoarsimStatus {
    let Some(handle) = (unsafe { sim.as_mut() }) else {
        return CoarsimStatus::CoarsimNullArgument;
    };
    match handle.sim.step() {
        Ok(report) => {
            let n = report.records.len().max(1) as f64;
            handle.last_stats = Some(CoarsimStepStats {
                newton_iters: report.newton_iters as u64,
                pcg_iters: report.records.iter().map(|r| r.pcg_iters as u64).sum(),
                post_iters: report.records.iter().map(|r| r.post_iters as u64).sum(),
                active_ratio_mean: report.records.iter().map(|r| r.active_ratio).sum::<f64>() / n,
                energy: report.records.last().map(|r| r.energy).unwrap_or(0.0),
            });
            handle.last_error = None;
            CoarsimStatus::CoarsimOk
        }
        Err(e) => {
            set_error(handle, e.to_string());
            CoarsimStatus::CoarsimSolverError
        }
    }
}

/// Number of simulated vertices; 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coarsim_sim_vertex_count(sim: *const CoarsimSim) -> usize {
    unsafe { sim.as_ref() }.map_or(0, |h| h.sim.mesh.vertex_count())
}

/// Current simulation time in seconds; NaN for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coarsim_sim_time(sim: *const CoarsimSim) -> f64 {
    unsafe { sim.as_ref() }.map_or(f64::NAN, |h| h.sim.state.t)
}

/// Frame count configured in the scene file.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coarsim_sim_configured_frames(sim: *const CoarsimSim) -> u64 {
    unsafe { sim.as_ref() }.map_or(0, |h| h.configured_frames)
}

unsafe fn copy_vec3s(src: &[coarsim::math::Vec3], out: *mut f64, len: usize) -> CoarsimStatus {
    if out.is_null() {
        return CoarsimStatus::CoarsimNullArgument;
    }
    if len < 3 * src.len() {
        return CoarsimStatus::CoarsimBufferTooSmall;
    }
    let dst = unsafe { std::slice::from_raw_parts_mut(out, 3 * src.len()) };
    for (i, p) in src.iter().enumerate() {
        dst[3 * i] = p.x;
        dst[3 * i + 1] = p.y;
        dst[3 * i + 2] = p.z;
    }
    CoarsimStatus::CoarsimOk
}

/// Copy current vertex positions into `out` as x0 y0 z0 x1 y1 z1 ...
/// `len` is the capacity of `out` in doubles (at least 3 * vertex count).
///
/// # Safety
/// `sim` must be a live handle and `out` must point to at least `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn coarsim_sim_positions(
    sim: *const CoarsimSim,
    out: *mut f64,
    len: usize,
) -> CoarsimStatus {
    let Some(handle) = (unsafe { sim.as_ref() }) else {
        return CoarsimStatus::CoarsimNullArgument;
    };
    unsafe { copy_vec3s(&handle.sim.state.x, out, len) }
}

/// Copy current vertex velocities into `out`; layout as in
/// `coarsim_sim_positions`.
///
/// # Safety
/// As for `coarsim_sim_positions`.
#[no_mangle]
pub unsafe extern "C" fn coarsim_sim_velocities(
    sim: *const CoarsimSim,
    out: *mut f64,
    len: usize,
) -> CoarsimStatus {
    let Some(handle) = (unsafe { sim.as_ref() }) else {
        return CoarsimStatus::CoarsimNullArgument;
    };
    unsafe { copy_vec3s(&handle.sim.state.v, out, len) }
}

/// Statistics of the most recent completed step. Fails with
/// `CoarsimSolverError` if no step has completed yet.
///
/// # Safety
/// `sim` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn coarsim_sim_last_stats(
    sim: *const CoarsimSim,
    out: *mut CoarsimStepStats,
) -> CoarsimStatus {
    let Some(handle) = (unsafe { sim.as_ref() }) else {
        return CoarsimStatus::CoarsimNullArgument;
    };
    if out.is_null() {
        return CoarsimStatus::CoarsimNullArgument;
    }
    match handle.last_stats {
        Some(stats) => {
            unsafe { *out = stats };
            CoarsimStatus::CoarsimOk
        }
        None => CoarsimStatus::CoarsimSolverError,
    }
}

/// Copy the last error message (for `sim`, or the thread's last creation
/// error when `sim` is null) into `buf` as a NUL-terminated string. Returns
/// the full message length in bytes (excluding the NUL); 0 means no error is
/// stored. Pass `cap = 0` to query the required capacity.
///
/// # Safety
/// `buf` must point to at least `cap` writable bytes when `cap > 0`.
#[no_mangle]
pub unsafe extern "C" fn coarsim_last_error(
    sim: *const CoarsimSim,
    buf: *mut c_char,
    cap: usize,
) -> usize {
    let message: Option<CString> = match unsafe { sim.as_ref() } {
        Some(handle) => handle.last_error.clone(),
        None => CREATE_ERROR.with(|slot| slot.borrow().clone()),
    };
    let Some(message) = message else {
        return 0;
    };
    let bytes = message.as_bytes_with_nul();
    if !buf.is_null() && cap > 0 {
        let n = bytes.len().min(cap);
        let dst = unsafe { std::slice::from_raw_parts_mut(buf as *mut u8, n) };
        dst.copy_from_slice(&bytes[..n]);
        dst[n - 1] = 0;
    }
    bytes.len() - 1
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn coarsim_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}
