use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use transpath::dynamics::{simulate, SimParams};
use transpath::landscape::{gradient, potential, Position, PotentialSpec};
use transpath::rng::RngStream;
use transpath::tpsrl::{rollout, ActorCritic, Env};
use transpath_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { tp_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n < buf.len());
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn potential_and_gradient_match_core() {
    let q = Position::new(-0.3, 0.8);
    let mut v = 0.0;
    let (mut gx, mut gy) = (0.0, 0.0);
    assert_eq!(unsafe { tp_potential(q.x, q.y, &mut v) }, TpStatus::Ok);
    assert_eq!(unsafe { tp_gradient(q.x, q.y, &mut gx, &mut gy) }, TpStatus::Ok);
    let spec = PotentialSpec::default();
    assert_eq!(v, potential(q, &spec));
    assert_eq!([gx, gy], gradient(q, &spec).as_array());
}

#[test]
fn null_outputs_are_reported() {
    assert_eq!(unsafe { tp_potential(0.0, 0.0, ptr::null_mut()) }, TpStatus::NullPointer);
    assert!(last_error().contains("out is null"));
    let mut gx = 0.0;
    assert_eq!(
        unsafe { tp_gradient(0.0, 0.0, &mut gx, ptr::null_mut()) },
        TpStatus::NullPointer
    );
}

#[test]
fn error_message_reports_full_length() {
    unsafe { tp_potential(0.0, 0.0, ptr::null_mut()) };
    let full = unsafe { tp_last_error_message(ptr::null_mut(), 0) };
    let mut small = [0 as std::ffi::c_char; 4];
    let n = unsafe { tp_last_error_message(small.as_mut_ptr(), small.len()) };
    assert_eq!(n, full);
    assert_eq!(unsafe { CStr::from_ptr(small.as_ptr()) }.to_bytes().len(), 3);
}

#[test]
fn simulate_matches_core_stream() {
    let mut p = tp_sim_params_default();
    assert_eq!(p.dt, 5e-3);
    p.n_steps = 50;
    p.seed = 9;
    let mut out = vec![0.0; 2 * 51];
    let mut written = 0;
    let s = unsafe { tp_simulate(-1.05, -0.04, &p, 3, out.as_mut_ptr(), out.len(), &mut written) };
    assert_eq!(s, TpStatus::Ok);
    assert_eq!(written, 102);
    let params = SimParams {
        n_steps: 50,
        seed: 9,
        ..SimParams::default()
    };
    let t = simulate(
        Position::new(-1.05, -0.04),
        &params,
        &PotentialSpec::default(),
        None,
        &mut RngStream::new(9, 3),
        false,
    )
    .unwrap();
    let flat: Vec<f64> = t.positions.iter().flat_map(|q| [q.x, q.y]).collect();
    assert_eq!(out, flat);
}

#[test]
fn simulate_checks_capacity_and_params() {
    let mut p = tp_sim_params_default();
    p.n_steps = 10;
    let mut out = vec![0.0; 5];
    let mut written = 7;
    let s = unsafe { tp_simulate(0.0, 0.0, &p, 0, out.as_mut_ptr(), out.len(), &mut written) };
    assert_eq!(s, TpStatus::BufferTooSmall);
    assert_eq!(written, 0);
    p.dt = -1.0;
    let mut out = vec![0.0; 22];
    let s = unsafe { tp_simulate(0.0, 0.0, &p, 0, out.as_mut_ptr(), out.len(), &mut written) };
    assert_eq!(s, TpStatus::InvalidArgument);
    let s = unsafe { tp_simulate(0.0, 0.0, ptr::null(), 0, out.as_mut_ptr(), out.len(), &mut written) };
    assert_eq!(s, TpStatus::NullPointer);
}

#[test]
fn reward_of_zero_force_is_distance_bonus() {
    let mut r = 1.0;
    assert_eq!(unsafe { tp_reward(-1.5, 0.5, -1.4, 0.4, 0.0, 0.0, &mut r) }, TpStatus::Ok);
    assert!((r - 0.0355).abs() < 1e-12);
}

#[test]
fn policy_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let env = Env {
        episode_length: 80,
        ..Env::default()
    };
    let ac = ActorCritic::new(10.0, &mut RngStream::new(4, 0));
    ac.save(dir.path(), serde_json::json!({ "env": env })).unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut policy = ptr::null_mut();
    assert_eq!(unsafe { tp_policy_load(path.as_ptr(), &mut policy) }, TpStatus::Ok);
    assert!(!policy.is_null());

    let (mut ax, mut ay) = (0.0, 0.0);
    assert_eq!(unsafe { tp_policy_action(policy, 0.2, 0.3, &mut ax, &mut ay) }, TpStatus::Ok);
    assert_eq!([ax, ay], ac.actor.act(Position::new(0.2, 0.3)));

    let len = unsafe { tp_policy_rollout_len(policy) };
    assert_eq!(len, 2 * 81);
    let mut out = vec![0.0; len];
    let (mut written, mut success) = (0, -1);
    let s = unsafe { tp_policy_rollout(policy, 5, 6, out.as_mut_ptr(), out.len(), &mut written, &mut success) };
    assert_eq!(s, TpStatus::Ok);
    let r = rollout(&ac.actor, &env, &mut RngStream::new(5, 6));
    let flat: Vec<f64> = r.trajectory.positions.iter().flat_map(|q| [q.x, q.y]).collect();
    assert_eq!(&out[..written], &flat[..]);
    assert_eq!(success, i32::from(r.success));
    unsafe { tp_policy_free(policy) };
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("absent").to_str().unwrap()).unwrap();
    let mut policy = ptr::null_mut();
    assert_eq!(unsafe { tp_policy_load(path.as_ptr(), &mut policy) }, TpStatus::Io);
    assert!(policy.is_null());
    assert!(!last_error().is_empty());
    unsafe { tp_policy_free(ptr::null_mut()) };
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(tp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/transpath.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "tp_last_error_message",
        "tp_potential",
        "tp_gradient",
        "tp_simulate",
        "tp_reward",
        "tp_policy_load",
        "tp_policy_free",
        "tp_policy_action",
        "tp_policy_rollout",
        "TP_STATUS_BUFFER_TOO_SMALL",
        "typedef struct TpPolicy TpPolicy",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    // Syntax check with the system C compiler when one is present.
    if let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&header).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
