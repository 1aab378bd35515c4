//! C interface to `switchdwell`.
//!
//! Every fallible function returns an [`SdStatus`]. On failure the message is
//! kept per thread and read with [`sd_last_error_message`]. Objects are opaque
//! handles owned by the caller and released with the matching `sd_*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nalgebra::{DMatrix, DVector};
use switchdwell::dwell::{self, MuMode};
use switchdwell::runner::run_scenario;
use switchdwell::scenario::{load_scenario_text, parse_scenario};
use switchdwell::sim::{simulate_switched, verify_trapping, Trajectory};
use switchdwell::{
    example_system, make_affine_subsystem, signal_from_dwell, ClassKFn, Dwell, Error, Label, Subsystem, SwitchedSystem,
    SwitchingSignal,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad argument at the C boundary: invalid UTF-8, zero length, short buffer.
    InvalidArgument = 2,
    /// The library rejected the input (model, signal, scenario).
    InputError = 3,
    /// Numerical failure such as a non-finite state.
    NumericError = 4,
    IoError = 5,
    Panic = 6,
}

/// `α(s) = c·s^p`
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SdClassK {
    pub c: f64,
    pub p: f64,
}

/// Switched system under construction or in use.
pub struct SdSystem {
    dimension: usize,
    subsystems: Vec<Subsystem>,
    system: Option<SwitchedSystem>,
}

pub struct SdSignal {
    signal: SwitchingSignal,
}

pub struct SdTrajectory {
    trajectory: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(SdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => SdStatus::IoError,
            _ if e.exit_code() == 4 => SdStatus::NumericError,
            _ => SdStatus::InputError,
        };
        Fail(status, e.to_string())
    }
}

fn bad(msg: impl Into<String>) -> Fail {
    Fail(SdStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SdStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            SdStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(SdStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(SdStatus::NullPointer, format!("{name} is null")))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(SdStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| bad(format!("{name} is not UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(Fail(SdStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, name: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(Fail(SdStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn copy_into(dst: &mut [f64], src: &DVector<f64>) -> Result<(), Fail> {
    if dst.len() < src.len() {
        return Err(bad(format!("buffer holds {} values, {} needed", dst.len(), src.len())));
    }
    dst[..src.len()].copy_from_slice(src.as_slice());
    Ok(())
}

impl SdSystem {
    fn built(&self) -> Result<&SwitchedSystem, Fail> {
        self.system
            .as_ref()
            .ok_or_else(|| Fail(SdStatus::InputError, "system has no subsystems".into()))
    }

    fn sub(&self, label: &str) -> Result<&Subsystem, Fail> {
        Ok(self.built()?.get(&Label::from(label))?)
    }
}

fn class_k(k: SdClassK) -> Result<ClassKFn, Fail> {
    Ok(ClassKFn::new(k.c, k.p)?)
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next library call on the same thread.
#[no_mangle]
pub extern "C" fn sd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Empty system of the given state dimension.
///
/// # Safety
/// `out_system` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sd_system_new(dimension: usize, out_system: *mut *mut SdSystem) -> SdStatus {
    guard(|| {
        let o = out(out_system, "out_system")?;
        if dimension == 0 {
            return Err(bad("dimension must be positive"));
        }
        *o = Box::into_raw(Box::new(SdSystem {
            dimension,
            subsystems: Vec::new(),
            system: None,
        }));
        Ok(())
    })
}

/// The three-mode planar example: rotation-contraction fields with
/// equilibria (0, 1), (−0.5, 0.5) and (−1, 0), labelled u1, u2, u3.
///
/// # Safety
/// `out_system` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sd_system_example(out_system: *mut *mut SdSystem) -> SdStatus {
    guard(|| {
        let o = out(out_system, "out_system")?;
        let sys = example_system();
        *o = Box::into_raw(Box::new(SdSystem {
            dimension: sys.dimension(),
            subsystems: sys.subsystems().cloned().collect(),
            system: Some(sys),
        }));
        Ok(())
    })
}

/// Adds the mode `ẋ = A x + b` with `V = ‖x − x_u‖²`. `a` is row-major
/// `n × n`, `b` has `n` entries.
///
/// # Safety
/// `system` must come from this library; `a` and `b` must hold `n·n` and `n`
/// values; `label` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sd_system_add_affine(
    system: *mut SdSystem,
    label: *const c_char,
    a: *const f64,
    b: *const f64,
) -> SdStatus {
    guard(|| {
        let sys = out(system, "system")?;
        let label = text(label, "label")?;
        let n = sys.dimension;
        let a = DMatrix::from_row_slice(n, n, slice(a, n * n, "a")?);
        let b = DVector::from_column_slice(slice(b, n, "b")?);
        let sub = make_affine_subsystem(a, b, label)?;
        let mut subs = sys.subsystems.clone();
        subs.push(sub);
        sys.system = Some(SwitchedSystem::new(subs.clone())?);
        sys.subsystems = subs;
        Ok(())
    })
}

/// # Safety
/// `system` must be NULL or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sd_system_free(system: *mut SdSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// Number of modes.
///
/// # Safety
/// `system` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn sd_system_len(system: *const SdSystem, out_len: *mut usize) -> SdStatus {
    guard(|| {
        *out(out_len, "out_len")? = get(system, "system")?.subsystems.len();
        Ok(())
    })
}

/// Equilibrium of `label`, written to `out_x` (capacity `len`).
///
/// # Safety
/// `out_x` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn sd_system_equilibrium(
    system: *const SdSystem,
    label: *const c_char,
    out_x: *mut f64,
    len: usize,
) -> SdStatus {
    guard(|| {
        let sub = get(system, "system")?.sub(text(label, "label")?)?;
        copy_into(slice_mut(out_x, len, "out_x")?, sub.equilibrium())
    })
}

/// Dwell time `T_{from,to}(ε)`, clamped at zero.
///
/// # Safety
/// Pointers must be valid; labels NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sd_pairwise_dwell(
    system: *const SdSystem,
    eps: f64,
    from: *const c_char,
    to: *const c_char,
    out_dwell: *mut f64,
) -> SdStatus {
    guard(|| {
        let sys = get(system, "system")?;
        let t = dwell::pairwise_dwell(eps, sys.sub(text(from, "from")?)?, sys.sub(text(to, "to")?)?)?;
        *out(out_dwell, "out_dwell")? = t;
        Ok(())
    })
}

/// Largest pairwise dwell over all ordered pairs of distinct modes.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sd_local_dwell(system: *const SdSystem, eps: f64, out_dwell: *mut f64) -> SdStatus {
    guard(|| {
        let sys = get(system, "system")?.built()?;
        let table = dwell::local_dwell(eps, sys, &dwell::all_transitions(sys))?;
        *out(out_dwell, "out_dwell")? = table.t_loc;
        Ok(())
    })
}

/// `μ(ε)` from the closed form for identity-weighted quadratic certificates.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sd_mu_closed_form(system: *const SdSystem, eps: f64, out_mu: *mut f64) -> SdStatus {
    guard(|| {
        let sys = get(system, "system")?.built()?;
        *out(out_mu, "out_mu")? = dwell::mu_bound(eps, sys, &MuMode::ClosedForm)?;
        Ok(())
    })
}

/// `(1 + margin) · ln μ / k_min`
///
/// # Safety
/// `out_dwell` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sd_global_dwell(mu: f64, k_min: f64, margin: f64, out_dwell: *mut f64) -> SdStatus {
    guard(|| {
        *out(out_dwell, "out_dwell")? = dwell::global_dwell(mu, k_min, margin)?;
        Ok(())
    })
}

/// `T_{u0,u1} − T_{u0,v} − T_{v,u1}` on unclamped travel times. Negative
/// means the detour through `v` is slower.
///
/// # Safety
/// Pointers must be valid; labels NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sd_triangle_gap(
    system: *const SdSystem,
    eps: f64,
    u0: *const c_char,
    v: *const c_char,
    u1: *const c_char,
    out_gap: *mut f64,
) -> SdStatus {
    guard(|| {
        let sys = get(system, "system")?;
        let t = dwell::triangle_gap(
            eps,
            sys.sub(text(u0, "u0")?)?,
            sys.sub(text(v, "v")?)?,
            sys.sub(text(u1, "u1")?)?,
        )?;
        *out(out_gap, "out_gap")? = t.gap;
        Ok(())
    })
}

/// Threshold below which every `(d, r)` configuration has a slower detour.
///
/// # Safety
/// `out_eps0` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sd_epsilon0_search(
    d: f64,
    r: f64,
    alpha: SdClassK,
    beta: SdClassK,
    k: f64,
    out_eps0: *mut f64,
) -> SdStatus {
    guard(|| {
        *out(out_eps0, "out_eps0")? = dwell::epsilon0_search(d, r, class_k(alpha)?, class_k(beta)?, k)?;
        Ok(())
    })
}

/// Signal starting in `initial_mode` at `t0` and visiting `modes[0..n_modes]`
/// in order. `dwell` holds one value (uniform) or `n_modes` values.
///
/// # Safety
/// `modes` must hold `n_modes` NUL-terminated strings and `dwell` `n_dwell`
/// values.
#[no_mangle]
pub unsafe extern "C" fn sd_signal_from_dwell(
    initial_mode: *const c_char,
    modes: *const *const c_char,
    n_modes: usize,
    dwell: *const f64,
    n_dwell: usize,
    t0: f64,
    periodic: bool,
    out_signal: *mut *mut SdSignal,
) -> SdStatus {
    guard(|| {
        let o = out(out_signal, "out_signal")?;
        let initial = text(initial_mode, "initial_mode")?;
        let labels = if n_modes == 0 {
            Vec::new()
        } else {
            if modes.is_null() {
                return Err(Fail(SdStatus::NullPointer, "modes is null".into()));
            }
            std::slice::from_raw_parts(modes, n_modes)
                .iter()
                .map(|&m| text(m, "modes[i]").map(Label::from))
                .collect::<Result<Vec<_>, _>>()?
        };
        let values = slice(dwell, n_dwell, "dwell")?;
        let spec = match n_dwell {
            0 => return Err(bad("dwell needs at least one value")),
            1 => Dwell::Uniform(values[0]),
            _ => Dwell::PerSegment(values.to_vec()),
        };
        let signal = signal_from_dwell(initial, &labels, &spec, t0, periodic)?;
        *o = Box::into_raw(Box::new(SdSignal { signal }));
        Ok(())
    })
}

/// # Safety
/// `signal` must be NULL or come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sd_signal_free(signal: *mut SdSignal) {
    if !signal.is_null() {
        drop(Box::from_raw(signal));
    }
}

/// Mode active at `t`, written NUL-terminated to `buf`. `out_needed`, when
/// not NULL, receives the required size including the terminator.
///
/// # Safety
/// `buf` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sd_signal_mode_at(
    signal: *const SdSignal,
    t: f64,
    buf: *mut c_char,
    len: usize,
    out_needed: *mut usize,
) -> SdStatus {
    guard(|| {
        let mode = get(signal, "signal")?.signal.mode_at(t).as_str().as_bytes();
        if let Some(n) = out_needed.as_mut() {
            *n = mode.len() + 1;
        }
        if buf.is_null() {
            return Err(Fail(SdStatus::NullPointer, "buf is null".into()));
        }
        if len < mode.len() + 1 {
            return Err(bad(format!("buffer holds {len} bytes, {} needed", mode.len() + 1)));
        }
        ptr::copy_nonoverlapping(mode.as_ptr(), buf.cast::<u8>(), mode.len());
        *buf.add(mode.len()) = 0;
        Ok(())
    })
}

/// RK4 simulation from `x0` (length `n`) over `[t0, t_end]`.
///
/// # Safety
/// `x0` must hold `n` values; handles must come from this library.
#[no_mangle]
pub unsafe extern "C" fn sd_simulate(
    system: *const SdSystem,
    signal: *const SdSignal,
    x0: *const f64,
    n: usize,
    t_end: f64,
    step: f64,
    out_trajectory: *mut *mut SdTrajectory,
) -> SdStatus {
    guard(|| {
        let o = out(out_trajectory, "out_trajectory")?;
        let sys = get(system, "system")?.built()?;
        let sig = &get(signal, "signal")?.signal;
        let x0 = DVector::from_column_slice(slice(x0, n, "x0")?);
        let trajectory = simulate_switched(sys, sig, &x0, t_end, step)?;
        *o = Box::into_raw(Box::new(SdTrajectory { trajectory }));
        Ok(())
    })
}

/// # Safety
/// `trajectory` must be NULL or come from this library and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn sd_trajectory_free(trajectory: *mut SdTrajectory) {
    if !trajectory.is_null() {
        drop(Box::from_raw(trajectory));
    }
}

/// Number of samples and number of switch events.
///
/// # Safety
/// Pointers must be valid; either output may be NULL.
#[no_mangle]
pub unsafe extern "C" fn sd_trajectory_counts(
    trajectory: *const SdTrajectory,
    out_samples: *mut usize,
    out_switches: *mut usize,
) -> SdStatus {
    guard(|| {
        let tr = &get(trajectory, "trajectory")?.trajectory;
        if let Some(s) = out_samples.as_mut() {
            *s = tr.samples.len();
        }
        if let Some(s) = out_switches.as_mut() {
            *s = tr.switch_events.len();
        }
        Ok(())
    })
}

/// Sample `index`: time into `out_t`, state into `out_x` (capacity `len`).
///
/// # Safety
/// `out_x` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn sd_trajectory_sample(
    trajectory: *const SdTrajectory,
    index: usize,
    out_t: *mut f64,
    out_x: *mut f64,
    len: usize,
) -> SdStatus {
    guard(|| {
        let tr = &get(trajectory, "trajectory")?.trajectory;
        let s = tr
            .samples
            .get(index)
            .ok_or_else(|| bad(format!("sample {index} out of range ({})", tr.samples.len())))?;
        *out(out_t, "out_t")? = s.t;
        copy_into(slice_mut(out_x, len, "out_x")?, &s.x)
    })
}

/// State at switch `index` (counting from 0) and its time.
///
/// # Safety
/// `out_x` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn sd_trajectory_switch(
    trajectory: *const SdTrajectory,
    index: usize,
    out_t: *mut f64,
    out_x: *mut f64,
    len: usize,
) -> SdStatus {
    guard(|| {
        let tr = &get(trajectory, "trajectory")?.trajectory;
        let ev = tr
            .switch_events
            .get(index)
            .ok_or_else(|| bad(format!("switch {index} out of range ({})", tr.switch_events.len())))?;
        *out(out_t, "out_t")? = ev.time;
        copy_into(slice_mut(out_x, len, "out_x")?, &ev.state)
    })
}

/// Checks `x(t_i) ∈ N^ε_{u_i}` at every switch. `out_pass` is 1 when all
/// switch states are members, else 0. `out_max_value`, when not NULL,
/// receives the largest `V_{u_i}(x(t_i))`.
///
/// # Safety
/// Handles must come from this library.
#[no_mangle]
pub unsafe extern "C" fn sd_verify_trapping(
    trajectory: *const SdTrajectory,
    system: *const SdSystem,
    signal: *const SdSignal,
    eps: f64,
    out_pass: *mut c_int,
    out_max_value: *mut f64,
) -> SdStatus {
    guard(|| {
        let tr = &get(trajectory, "trajectory")?.trajectory;
        let sys = get(system, "system")?.built()?;
        let sig = &get(signal, "signal")?.signal;
        let o = out(out_pass, "out_pass")?;
        let rep = verify_trapping(tr, sys, sig, eps)?;
        *o = c_int::from(rep.overall_pass);
        if let Some(m) = out_max_value.as_mut() {
            *m = rep.records.iter().map(|r| r.value).fold(f64::NEG_INFINITY, f64::max);
        }
        Ok(())
    })
}

/// Runs a scenario file (or `builtin:<name>`) and writes its outputs under
/// `out_dir`. `out_exit_code` receives 0 when every check passed and 2 when
/// a verification failed.
///
/// # Safety
/// Strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sd_scenario_run(
    scenario: *const c_char,
    out_dir: *const c_char,
    out_exit_code: *mut c_int,
) -> SdStatus {
    guard(|| {
        let source = text(scenario, "scenario")?;
        let dir = text(out_dir, "out_dir")?;
        let o = out(out_exit_code, "out_exit_code")?;
        let s = parse_scenario(&load_scenario_text(source)?)?;
        *o = run_scenario(&s, Path::new(dir))?.exit_code;
        Ok(())
    })
}
