use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use fbsde_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(fbsde_last_error()) }.to_string_lossy().into_owned()
}

fn problem(name: &str) -> *mut FbsdeProblem {
    let name = CString::new(name).unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { fbsde_problem_preset(name.as_ptr(), &mut p) }, FbsdeStatus::Ok);
    p
}

fn solve(p: *const FbsdeProblem, delta: f64) -> *mut FbsdeField {
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { fbsde_solve(p, delta, 121, 6.0, 0, &mut f) }, FbsdeStatus::Ok, "{}", last_error());
    f
}

#[test]
fn unknown_preset_sets_code_and_message() {
    let name = CString::new("nope").unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { fbsde_problem_preset(name.as_ptr(), &mut p) }, FbsdeStatus::UnknownPreset);
    assert!(p.is_null());
    assert!(last_error().contains("nope"));
}

#[test]
fn null_arguments_are_rejected() {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { fbsde_problem_preset(ptr::null(), &mut p) }, FbsdeStatus::NullPointer);
    let mut out = 0.0;
    assert_eq!(unsafe { fbsde_problem_horizon(ptr::null(), &mut out) }, FbsdeStatus::NullPointer);
    assert_eq!(unsafe { fbsde_problem_dim(ptr::null()) }, 0);
    unsafe {
        fbsde_problem_free(ptr::null_mut());
        fbsde_field_free(ptr::null_mut());
        fbsde_policy_free(ptr::null_mut());
    }
}

#[test]
fn solve_evaluate_and_round_trip() {
    let p = problem("uncontrolled-linear");
    assert_eq!(unsafe { fbsde_problem_dim(p) }, 1);
    let f = solve(p, 0.1);
    let x = [0.0];
    let (mut v, mut g) = (1.0, [0.0]);
    unsafe {
        assert_eq!(fbsde_field_eval(f, 0.0, x.as_ptr(), 1, &mut v), FbsdeStatus::Ok);
        assert_eq!(fbsde_field_grad(f, 0.0, x.as_ptr(), 1, g.as_mut_ptr()), FbsdeStatus::Ok);
    }
    assert!(v.abs() < 1e-12);
    assert!(g[0] > 0.5 && g[0] < 1.0);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("f.txt").to_str().unwrap()).unwrap();
    let mut back = ptr::null_mut();
    let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
    let y = [1.3];
    unsafe {
        assert_eq!(fbsde_field_save(f, path.as_ptr()), FbsdeStatus::Ok);
        assert_eq!(fbsde_field_load(path.as_ptr(), &mut back), FbsdeStatus::Ok);
        fbsde_field_eval(f, 0.25, y.as_ptr(), 1, &mut a);
        fbsde_field_eval(back, 0.25, y.as_ptr(), 1, &mut b);
        fbsde_field_delta(back, &mut d);
    }
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(d, 0.1);

    let far = [100.0];
    assert_eq!(unsafe { fbsde_field_eval(f, 0.0, far.as_ptr(), 1, &mut v) }, FbsdeStatus::OutOfDomain);
    assert_eq!(unsafe { fbsde_field_eval(f, 0.0, far.as_ptr(), 3, &mut v) }, FbsdeStatus::InvalidArgument);
    unsafe {
        fbsde_field_free(back);
        fbsde_field_free(f);
        fbsde_problem_free(p);
    }
}

#[test]
fn bad_radius_and_missing_file() {
    let p = problem("B1");
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { fbsde_solve(p, 0.0, 61, 6.0, 0, &mut f) }, FbsdeStatus::InvalidArgument);
    assert_eq!(unsafe { fbsde_solve(p, 0.2, 61, 6.0, 2, &mut f) }, FbsdeStatus::CflViolation);
    assert!(f.is_null());
    let path = CString::new("/nonexistent/field.txt").unwrap();
    assert_eq!(unsafe { fbsde_field_load(path.as_ptr(), &mut f) }, FbsdeStatus::Io);
    unsafe { fbsde_problem_free(p) };
}

#[test]
fn policy_and_constant_cost() {
    let p = problem("B1");
    let f = solve(p, 0.2);
    let mut pol = ptr::null_mut();
    assert_eq!(unsafe { fbsde_policy_extract(p, f, &mut pol) }, FbsdeStatus::Ok);
    let mut u = 1.0;
    let x = [0.3];
    assert_eq!(unsafe { fbsde_policy_lookup(pol, 0.5, x.as_ptr(), 1, &mut u) }, FbsdeStatus::Ok);
    assert_eq!(u, 0.0);

    let (mut mean, mut se) = (0.0, 0.0);
    let origin = [0.0];
    let s = unsafe { fbsde_constant_cost(p, f, 0.0, 0.0, origin.as_ptr(), 1, 2000, 20, 5, &mut mean, &mut se) };
    assert_eq!(s, FbsdeStatus::Ok, "{}", last_error());
    let mut v = 0.0;
    unsafe { fbsde_field_eval(f, 0.0, origin.as_ptr(), 1, &mut v) };
    assert!(se > 0.0);
    assert!((mean - v).abs() < 4.0 * se + 2e-2, "{mean} vs {v} (se {se})");
    let s = unsafe { fbsde_constant_cost(p, f, 7.0, 0.0, origin.as_ptr(), 1, 200, 10, 5, &mut mean, &mut se) };
    assert_eq!(s, FbsdeStatus::InvalidArgument);
    unsafe {
        fbsde_policy_free(pol);
        fbsde_field_free(f);
        fbsde_problem_free(p);
    }
}

#[test]
fn chattering_symmetric_pair() {
    let p = problem("B2");
    let x = [0.4];
    let (u, w, weights) = ([0.0, 0.0], [0.5, -0.5], [0.5, 0.5]);
    let mut out = FbsdeChattering::default();
    let s = unsafe { fbsde_chattering(p, x.as_ptr(), 1, 0.1, u.as_ptr(), w.as_ptr(), weights.as_ptr(), 2, &mut out) };
    assert_eq!(s, FbsdeStatus::Ok, "{}", last_error());
    assert_eq!(out.w_bar[0], 0.0);
    assert!(out.theta_bar > 0.0);
    assert!((out.theta_bar.powi(2) - out.alpha).abs() < 1e-12);

    let bad = [0.7, 0.7];
    let s = unsafe { fbsde_chattering(p, x.as_ptr(), 1, 0.1, u.as_ptr(), w.as_ptr(), bad.as_ptr(), 2, &mut out) };
    assert_eq!(s, FbsdeStatus::InvalidArgument);
    unsafe { fbsde_problem_free(p) };
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/fbsde.h")).unwrap();
    let source = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", "-"])
        .arg(concat!("-I", env!("CARGO_MANIFEST_DIR"), "/include"))
        .stdin(std::process::Stdio::piped())
        .spawn()
        .and_then(|mut child| {
            use std::io::Write;
            child.stdin.take().unwrap().write_all(b"#include <fbsde.h>\nint main(void){return FBSDE_STATUS_OK;}\n")?;
            child.wait()
        })
    else {
        return;
    };
    assert!(status.success());
}
