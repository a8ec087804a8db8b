//! C ABI over the transpath core: the default potential, unbiased
//! simulation, the step reward and trained-policy rollouts.
//!
//! Every fallible call returns a [`TpStatus`]. On failure a message is kept
//! per thread and can be copied out with [`tp_last_error_message`]. Panics
//! never cross the boundary; they surface as `TP_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use transpath::dynamics::{simulate, SimParams};
use transpath::landscape::{gradient, potential, Position, PotentialSpec};
use transpath::rng::RngStream;
use transpath::tpsrl::{reward, rollout, Actor, ActorCritic, Env};
use transpath::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    CheckpointMismatch = 4,
    NonFinite = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

/// Integration settings mirrored from the core defaults.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TpSimParams {
    pub dt: f64,
    pub beta: f64,
    pub n_steps: u64,
    pub seed: u64,
}

impl From<TpSimParams> for SimParams {
    fn from(p: TpSimParams) -> Self {
        SimParams {
            dt: p.dt,
            beta: p.beta,
            n_steps: p.n_steps as usize,
            seed: p.seed,
        }
    }
}

/// A trained policy plus the environment it acts in.
pub struct TpPolicy {
    actor: Actor,
    env: Env,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: TpStatus, msg: impl Into<String>) -> TpStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> TpStatus {
    match e {
        Error::Io(_) | Error::Json(_) | Error::Format { .. } => TpStatus::Io,
        Error::CheckpointMismatch(_) => TpStatus::CheckpointMismatch,
        Error::NonFinitePosition { .. } | Error::NonFiniteLoss { .. } => TpStatus::NonFinite,
        Error::BufferTooSmall { .. } => TpStatus::BufferTooSmall,
        _ => TpStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), TpStatus>) -> TpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TpStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(TpStatus::Internal, "panic inside transpath"),
    }
}

fn from_core(e: Error) -> TpStatus {
    fail(status_of(&e), e.to_string())
}

fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, TpStatus> {
    // SAFETY: callers pass either null or a valid, aligned, writable pointer.
    unsafe { p.as_mut() }.ok_or_else(|| fail(TpStatus::NullPointer, format!("{name} is null")))
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `capacity` bytes. Returns the full message length without
/// the terminator, so a caller can size its buffer.
///
/// # Safety
/// `buf` is null or points to `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn tp_last_error_message(buf: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            // SAFETY: `buf` holds `capacity > n` bytes.
            unsafe {
                ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// NUL-terminated crate version; static storage.
#[no_mangle]
pub extern "C" fn tp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn tp_sim_params_default() -> TpSimParams {
    let p = SimParams::default();
    TpSimParams {
        dt: p.dt,
        beta: p.beta,
        n_steps: p.n_steps as u64,
        seed: p.seed,
    }
}

/// Default three-well potential at `(x, y)`.
///
/// # Safety
/// `out` is null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn tp_potential(x: f64, y: f64, out: *mut f64) -> TpStatus {
    guard(|| {
        *out_ref(out, "out")? = potential(Position::new(x, y), &PotentialSpec::default());
        Ok(())
    })
}

/// Gradient of the default potential.
///
/// # Safety
/// `gx` and `gy` are null or valid for one write each.
#[no_mangle]
pub unsafe extern "C" fn tp_gradient(x: f64, y: f64, gx: *mut f64, gy: *mut f64) -> TpStatus {
    guard(|| {
        let g = gradient(Position::new(x, y), &PotentialSpec::default());
        *out_ref(gx, "gx")? = g.x;
        *out_ref(gy, "gy")? = g.y;
        Ok(())
    })
}

/// Unbiased path of `params->n_steps` steps from `(x0, y0)` on stream
/// `stream_id` of `params->seed`. Writes `x0, y0, x1, y1, ...` into `out`,
/// which must hold `2 * (n_steps + 1)` doubles; `written` receives the count.
///
/// # Safety
/// `params` and `written` are null or valid; `out` is null or points to
/// `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn tp_simulate(
    x0: f64,
    y0: f64,
    params: *const TpSimParams,
    stream_id: u64,
    out: *mut f64,
    capacity: usize,
    written: *mut usize,
) -> TpStatus {
    guard(|| {
        // SAFETY: null or valid per the contract.
        let params: SimParams = (*unsafe { params.as_ref() }.ok_or_else(|| fail(TpStatus::NullPointer, "params is null"))?).into();
        let written = out_ref(written, "written")?;
        *written = 0;
        if out.is_null() {
            return Err(fail(TpStatus::NullPointer, "out is null"));
        }
        let need = 2 * (params.n_steps + 1);
        if capacity < need {
            return Err(fail(
                TpStatus::BufferTooSmall,
                format!("need {need} doubles, buffer holds {capacity}"),
            ));
        }
        params.validate().map_err(from_core)?;
        let mut rng = RngStream::new(params.seed, stream_id);
        let t = simulate(Position::new(x0, y0), &params, &PotentialSpec::default(), None, &mut rng, false)
            .map_err(|b| from_core(b.into()))?;
        // SAFETY: `capacity >= need` doubles are writable.
        let dst = unsafe { std::slice::from_raw_parts_mut(out, need) };
        for (k, q) in t.positions.iter().enumerate() {
            dst[2 * k] = q.x;
            dst[2 * k + 1] = q.y;
        }
        *written = need;
        Ok(())
    })
}

/// Step reward of the default environment for a move from `q` to `q_next`
/// under force `a` (clamped to the action box first).
///
/// # Safety
/// `out` is null or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn tp_reward(qx: f64, qy: f64, nx: f64, ny: f64, ax: f64, ay: f64, out: *mut f64) -> TpStatus {
    guard(|| {
        let env = Env::default();
        let a = env.clamp_action([ax, ay]);
        *out_ref(out, "out")? = reward(Position::new(qx, qy), Position::new(nx, ny), a, [0.0, 0.0], &env);
        Ok(())
    })
}

/// Loads the policy of a TD3 checkpoint directory. The handle is released
/// with [`tp_policy_free`].
///
/// # Safety
/// `path` is null or a NUL-terminated string; `out` is null or valid.
#[no_mangle]
pub unsafe extern "C" fn tp_policy_load(path: *const c_char, out: *mut *mut TpPolicy) -> TpStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(fail(TpStatus::NullPointer, "path is null"));
        }
        // SAFETY: non-null and NUL-terminated per the contract.
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| fail(TpStatus::InvalidArgument, "path is not UTF-8"))?;
        let (ac, extra) = ActorCritic::load(Path::new(path)).map_err(from_core)?;
        let env = match extra.get("env") {
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| from_core(e.into()))?,
            None => Env::default(),
        };
        *out = Box::into_raw(Box::new(TpPolicy { actor: ac.actor, env }));
        Ok(())
    })
}

/// Releases a policy handle; null is ignored.
///
/// # Safety
/// `policy` is null or came from [`tp_policy_load`] and is not used again.
#[no_mangle]
pub unsafe extern "C" fn tp_policy_free(policy: *mut TpPolicy) {
    if !policy.is_null() {
        // SAFETY: allocated by `Box::into_raw` in `tp_policy_load`.
        drop(unsafe { Box::from_raw(policy) });
    }
}

/// Deterministic force at `(x, y)`.
///
/// # Safety
/// `policy` is null or a live handle; `ax` and `ay` are null or valid.
#[no_mangle]
pub unsafe extern "C" fn tp_policy_action(policy: *const TpPolicy, x: f64, y: f64, ax: *mut f64, ay: *mut f64) -> TpStatus {
    guard(|| {
        // SAFETY: null or live per the contract.
        let p = unsafe { policy.as_ref() }.ok_or_else(|| fail(TpStatus::NullPointer, "policy is null"))?;
        let a = p.actor.act(Position::new(x, y));
        *out_ref(ax, "ax")? = a[0];
        *out_ref(ay, "ay")? = a[1];
        Ok(())
    })
}

/// Number of doubles a rollout writes: `2 * (episode_length + 1)`.
///
/// # Safety
/// `policy` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tp_policy_rollout_len(policy: *const TpPolicy) -> usize {
    // SAFETY: null or live per the contract.
    unsafe { policy.as_ref() }.map_or(0, |p| 2 * (p.env.episode_length + 1))
}

/// One policy-driven episode from the environment start on stream
/// `stream_id` of `seed`. Writes the path as in [`tp_simulate`]; `success`
/// is set to 1 if the path crossed into the transition half-plane.
///
/// # Safety
/// `policy` is null or live; `out` is null or points to `capacity` doubles;
/// `written` and `success` are null or valid.
#[no_mangle]
pub unsafe extern "C" fn tp_policy_rollout(
    policy: *const TpPolicy,
    seed: u64,
    stream_id: u64,
    out: *mut f64,
    capacity: usize,
    written: *mut usize,
    success: *mut i32,
) -> TpStatus {
    guard(|| {
        // SAFETY: null or live per the contract.
        let p = unsafe { policy.as_ref() }.ok_or_else(|| fail(TpStatus::NullPointer, "policy is null"))?;
        let written = out_ref(written, "written")?;
        let success = out_ref(success, "success")?;
        *written = 0;
        *success = 0;
        if out.is_null() {
            return Err(fail(TpStatus::NullPointer, "out is null"));
        }
        let max = 2 * (p.env.episode_length + 1);
        if capacity < max {
            return Err(fail(
                TpStatus::BufferTooSmall,
                format!("need {max} doubles, buffer holds {capacity}"),
            ));
        }
        let r = rollout(&p.actor, &p.env, &mut RngStream::new(seed, stream_id));
        // SAFETY: `capacity >= max >= 2 * positions` doubles are writable.
        let dst = unsafe { std::slice::from_raw_parts_mut(out, max) };
        for (k, q) in r.trajectory.positions.iter().enumerate() {
            dst[2 * k] = q.x;
            dst[2 * k + 1] = q.y;
        }
        *written = 2 * r.trajectory.positions.len();
        *success = i32::from(r.success);
        if r.blew_up {
            return Err(fail(TpStatus::NonFinite, "rollout left the finite range"));
        }
        Ok(())
    })
}
