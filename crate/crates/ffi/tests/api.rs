use std::ffi::{CStr, CString};
use std::ptr;

use switchdwell_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = sd_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

struct Example(*mut SdSystem);

impl Example {
    fn new() -> Self {
        let mut sys = ptr::null_mut();
        assert_eq!(unsafe { sd_system_example(&mut sys) }, SdStatus::Ok);
        Example(sys)
    }
}

impl Drop for Example {
    fn drop(&mut self) {
        unsafe { sd_system_free(self.0) }
    }
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(sd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn dwell_quantities() {
    let sys = Example::new();
    let (u1, u2, u3) = (c("u1"), c("u2"), c("u3"));
    let mut t = 0.0;
    unsafe {
        assert_eq!(
            sd_pairwise_dwell(sys.0, 0.05, u1.as_ptr(), u2.as_ptr(), &mut t),
            SdStatus::Ok
        );
        assert!((t - 1.426062438905368).abs() < 1e-12);
        assert_eq!(
            sd_pairwise_dwell(sys.0, 0.05, u1.as_ptr(), u3.as_ptr(), &mut t),
            SdStatus::Ok
        );
        assert!((t - 1.9912324459391175).abs() < 1e-12);
        assert_eq!(sd_local_dwell(sys.0, 0.05, &mut t), SdStatus::Ok);
        assert!((t - 1.9912324459391175).abs() < 1e-12);

        let mut mu = 0.0;
        assert_eq!(sd_mu_closed_form(sys.0, 0.05, &mut mu), SdStatus::Ok);
        assert!((mu - 53.64911064067352).abs() < 1e-9);
        assert_eq!(sd_global_dwell(mu, 2.0, 0.01, &mut t), SdStatus::Ok);
        assert!((t - 2.011144770398509).abs() < 1e-12);

        let mut gap = 0.0;
        assert_eq!(
            sd_triangle_gap(sys.0, 0.05, u1.as_ptr(), u2.as_ptr(), u3.as_ptr(), &mut gap),
            SdStatus::Ok
        );
        assert!((gap + 0.8608924318716).abs() < 1e-10);

        let sq = SdClassK { c: 1.0, p: 2.0 };
        let mut e0 = 0.0;
        assert_eq!(
            sd_epsilon0_search(1.0, 0.5f64.sqrt(), sq, sq, 2.0, &mut e0),
            SdStatus::Ok
        );
        assert!((e0 / 0.72855339059327 - 1.0).abs() < 1e-5);
    }
}

#[test]
fn simulate_and_verify() {
    let sys = Example::new();
    let (u1, u2, u3) = (c("u1"), c("u2"), c("u3"));
    let modes = [u2.as_ptr(), u3.as_ptr()];
    let dwell = [1.43];
    let mut sig = ptr::null_mut();
    let mut traj = ptr::null_mut();
    unsafe {
        assert_eq!(
            sd_signal_from_dwell(u1.as_ptr(), modes.as_ptr(), 2, dwell.as_ptr(), 1, 0.0, false, &mut sig),
            SdStatus::Ok
        );
        let mut buf = [0 as std::ffi::c_char; 8];
        let mut needed = 0;
        assert_eq!(
            sd_signal_mode_at(sig, 1.5, buf.as_mut_ptr(), buf.len(), &mut needed),
            SdStatus::Ok
        );
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), "u2");
        assert_eq!(needed, 3);
        assert_eq!(
            sd_signal_mode_at(sig, 1.5, buf.as_mut_ptr(), 2, ptr::null_mut()),
            SdStatus::InvalidArgument
        );

        let mut eq = [0.0; 2];
        assert_eq!(
            sd_system_equilibrium(sys.0, u1.as_ptr(), eq.as_mut_ptr(), 2),
            SdStatus::Ok
        );
        let x0 = [eq[0] + 0.1, eq[1]];
        assert_eq!(
            sd_simulate(sys.0, sig, x0.as_ptr(), 2, 2.86, 1e-3, &mut traj),
            SdStatus::Ok
        );

        let (mut n, mut k) = (0, 0);
        assert_eq!(sd_trajectory_counts(traj, &mut n, &mut k), SdStatus::Ok);
        assert_eq!(k, 2);
        assert!(n > 2860);
        let (mut t, mut x) = (0.0, [0.0; 2]);
        assert_eq!(sd_trajectory_sample(traj, 0, &mut t, x.as_mut_ptr(), 2), SdStatus::Ok);
        assert_eq!((t, x), (0.0, x0));
        assert_eq!(sd_trajectory_switch(traj, 0, &mut t, x.as_mut_ptr(), 2), SdStatus::Ok);
        assert!((t - 1.43).abs() < 1e-12);
        assert_eq!(
            sd_trajectory_switch(traj, 5, &mut t, x.as_mut_ptr(), 2),
            SdStatus::InvalidArgument
        );

        let (mut pass, mut vmax) = (0, 0.0);
        assert_eq!(
            sd_verify_trapping(traj, sys.0, sig, 0.05, &mut pass, &mut vmax),
            SdStatus::Ok
        );
        assert_eq!(pass, 1);
        assert!(vmax < 0.05);

        sd_trajectory_free(traj);
        sd_signal_free(sig);
    }
}

#[test]
fn custom_system() {
    let mut sys = ptr::null_mut();
    let a = [-1.0, -1.0, 1.0, -1.0];
    unsafe {
        assert_eq!(sd_system_new(2, &mut sys), SdStatus::Ok);
        let mut t = 0.0;
        assert_eq!(sd_local_dwell(sys, 0.05, &mut t), SdStatus::InputError);
        for (name, b) in [("p", [2.0, 0.0]), ("q", [-2.0, 0.0])] {
            let l = c(name);
            assert_eq!(
                sd_system_add_affine(sys, l.as_ptr(), a.as_ptr(), b.as_ptr()),
                SdStatus::Ok
            );
        }
        let mut len = 0;
        assert_eq!(sd_system_len(sys, &mut len), SdStatus::Ok);
        assert_eq!(len, 2);
        let dup = c("p");
        let b = [0.0, 0.0];
        assert_eq!(
            sd_system_add_affine(sys, dup.as_ptr(), a.as_ptr(), b.as_ptr()),
            SdStatus::InputError
        );
        assert_eq!(sd_system_len(sys, &mut len), SdStatus::Ok);
        assert_eq!(len, 2);
        let unstable = [1.0, 0.0, 0.0, 1.0];
        let r = c("r");
        assert_eq!(
            sd_system_add_affine(sys, r.as_ptr(), unstable.as_ptr(), b.as_ptr()),
            SdStatus::InputError
        );
        assert!(last_error().contains("nonnegative eigenvalue"));
        assert_eq!(sd_local_dwell(sys, 0.05, &mut t), SdStatus::Ok);
        assert!(t > 0.0);
        sd_system_free(sys);
    }
}

#[test]
fn errors_are_reported() {
    let sys = Example::new();
    let (u1, nope) = (c("u1"), c("nope"));
    let mut t = 0.0;
    unsafe {
        assert_eq!(
            sd_pairwise_dwell(sys.0, 0.05, u1.as_ptr(), nope.as_ptr(), &mut t),
            SdStatus::InputError
        );
        assert!(last_error().contains("nope"));
        assert_eq!(
            sd_pairwise_dwell(sys.0, -1.0, u1.as_ptr(), u1.as_ptr(), &mut t),
            SdStatus::InputError
        );
        assert_eq!(
            sd_pairwise_dwell(ptr::null(), 0.05, u1.as_ptr(), u1.as_ptr(), &mut t),
            SdStatus::NullPointer
        );
        assert_eq!(sd_global_dwell(0.5, 2.0, 0.0, &mut t), SdStatus::InputError);
        assert_eq!(
            sd_pairwise_dwell(sys.0, 0.05, u1.as_ptr(), u1.as_ptr(), &mut t),
            SdStatus::Ok
        );
        assert!(sd_last_error_message().is_null());

        let bad = [0xffu8, 0];
        assert_eq!(
            sd_pairwise_dwell(sys.0, 0.05, bad.as_ptr().cast(), u1.as_ptr(), &mut t),
            SdStatus::InvalidArgument
        );
        sd_system_free(ptr::null_mut());
    }
}

#[test]
fn scenario_run_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut code = -1;
    unsafe {
        let out = c(dir.path().join("a").to_str().unwrap());
        let s = c("builtin:example2");
        assert_eq!(sd_scenario_run(s.as_ptr(), out.as_ptr(), &mut code), SdStatus::Ok);
        assert_eq!(code, 0);
        assert!(dir.path().join("a/manifest.json").exists());

        let out = c(dir.path().join("b").to_str().unwrap());
        let s = c("builtin:sharpness");
        assert_eq!(sd_scenario_run(s.as_ptr(), out.as_ptr(), &mut code), SdStatus::Ok);
        assert_eq!(code, 2);

        let s = c("/does/not/exist.scenario");
        assert_eq!(sd_scenario_run(s.as_ptr(), out.as_ptr(), &mut code), SdStatus::IoError);
    }
}

#[test]
fn header_declares_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/switchdwell.h")).unwrap();
    for name in [
        "sd_version",
        "sd_last_error_message",
        "sd_system_free",
        "sd_signal_free",
        "sd_trajectory_free",
        "sd_scenario_run",
        "SD_STATUS_PANIC",
        "typedef struct SdSystem SdSystem;",
    ] {
        assert!(header.contains(name), "{name}");
    }
}
