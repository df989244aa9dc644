use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use nikodym_lab_ffi::*;

fn patch(family: NlFamily, n: usize, profile: NlProfile, k: u32) -> *mut NlPatch {
    let mut p = ptr::null_mut();
    let status = unsafe { nl_patch_new(family, n, profile, k, &mut p) };
    assert_eq!(status, NlStatus::Ok);
    assert!(!p.is_null());
    p
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(nl_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn patch_lifecycle_and_cometric() {
    let p = patch(NlFamily::ThreeD, 3, NlProfile::Monomial, 1);
    assert_eq!(unsafe { nl_patch_dim(p) }, 3);
    let x = [0.0, 0.5, 0.0];
    let mut g = [0.0; 9];
    assert_eq!(unsafe { nl_cometric(p, x.as_ptr(), 3, g.as_mut_ptr()) }, NlStatus::Ok);
    assert_eq!(g[2], 0.5);
    assert_eq!(g[2 * 3], 0.5);
    assert_eq!(g[0], 1.0);
    let mut v = 0.0;
    assert_eq!(unsafe { nl_volume_density(p, x.as_ptr(), 3, &mut v) }, NlStatus::Ok);
    assert!((v - 1.0 / (1.0f64 - 0.25).sqrt()).abs() < 1e-12);
    unsafe { nl_patch_free(p) };
}

#[test]
fn errors_map_to_status_codes() {
    let mut p = ptr::null_mut();
    let status = unsafe { nl_patch_new(NlFamily::OddFocus, 4, NlProfile::ExpFlat, 0, &mut p) };
    assert_eq!(status, NlStatus::Domain);
    assert!(p.is_null());
    assert!(!last_error().is_empty());

    let p = patch(NlFamily::ThreeD, 3, NlProfile::ExpFlat, 0);
    let x = [0.0; 3];
    let mut out = 0.0;
    assert_eq!(unsafe { nl_hamiltonian(p, x.as_ptr(), ptr::null(), 3, &mut out) }, NlStatus::NullPointer);
    assert_eq!(unsafe { nl_hamiltonian(p, x.as_ptr(), x.as_ptr(), 2, &mut out) }, NlStatus::Domain);
    assert_eq!(unsafe { nl_hamiltonian(ptr::null(), x.as_ptr(), x.as_ptr(), 3, &mut out) }, NlStatus::NullPointer);
    let start = [0.0, 0.0, 0.0];
    let xi = [0.0, 1.0, 0.0];
    let (mut xe, mut xie) = ([0.0; 3], [0.0; 3]);
    let s = unsafe { nl_flow_endpoint(p, start.as_ptr(), xi.as_ptr(), 3, 5.0, 1e-3, xe.as_mut_ptr(), xie.as_mut_ptr()) };
    assert_eq!(s, NlStatus::LeftBox);
    unsafe { nl_patch_free(p) };
}

#[test]
fn flow_matches_the_closed_form_fan() {
    let p = patch(NlFamily::ThreeD, 3, NlProfile::Monomial, 1);
    let theta = 0.4f64;
    let base = [0.0];
    let start = [0.0; 3];
    let xi = [theta.sin(), theta.cos(), 0.0];
    for t in [-0.6, 0.6] {
        let (mut xe, mut xie) = ([0.0; 3], [0.0; 3]);
        let s = unsafe { nl_flow_endpoint(p, start.as_ptr(), xi.as_ptr(), 3, t, 1e-3, xe.as_mut_ptr(), xie.as_mut_ptr()) };
        assert_eq!(s, NlStatus::Ok, "{}", last_error());
        let mut fan = [0.0; 3];
        let s = unsafe { nl_closed_form_fan(p, base.as_ptr(), 1, [theta].as_ptr(), 1, t, fan.as_mut_ptr(), 3) };
        assert_eq!(s, NlStatus::Ok);
        for k in 0..3 {
            assert!((xe[k] - fan[k]).abs() < 1e-6);
        }
    }
    let mut j = 0.0;
    assert_eq!(unsafe { nl_fan_jacobian(p, base.as_ptr(), 1, [0.0].as_ptr(), 1, -0.6, &mut j) }, NlStatus::Ok);
    assert!((j - 0.18).abs() < 1e-6);
    let a = [0.0, -0.5, 0.0];
    let b = [0.0, 0.2, 0.0];
    let mut d = 0.0;
    assert_eq!(unsafe { nl_dist(p, a.as_ptr(), b.as_ptr(), 3, &mut d) }, NlStatus::Ok);
    assert!((d - 0.7).abs() < 1e-9);
    let mut r = 0.0;
    let lower = [1usize, 2, 1];
    assert_eq!(unsafe { nl_curvature_component(p, 2, lower.as_ptr(), [0.0; 3].as_ptr(), 3, 1e-3, &mut r) }, NlStatus::Ok);
    assert!((r + 0.75).abs() < 1e-4);
    unsafe { nl_patch_free(p) };
}

#[test]
fn thresholds_are_reduced_fractions() {
    let (mut num, mut den) = (0i64, 0i64);
    assert_eq!(unsafe { nl_exponent_threshold(4, &mut num, &mut den) }, NlStatus::Ok);
    assert_eq!((num, den), (14, 5));
    assert_eq!(unsafe { nl_exponent_threshold(2, &mut num, &mut den) }, NlStatus::Domain);
}

#[test]
fn harness_run_through_the_c_interface() {
    let cfg = CString::new("experiment = \"thresholds\"\nseed = 5\n").unwrap();
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { nl_run_toml(cfg.as_ptr(), &mut run) }, NlStatus::Ok);
    assert_eq!(unsafe { nl_run_passed(run) }, 1);
    let json = unsafe { CStr::from_ptr(nl_run_summary_json(run)) }.to_str().unwrap().to_owned();
    assert!(json.contains("\"10/3\""));
    let csv = unsafe { CStr::from_ptr(nl_run_csv(run)) }.to_str().unwrap().to_owned();
    assert!(csv.is_empty() || csv.starts_with("experiment,"));
    unsafe { nl_run_free(run) };

    let bad = CString::new("experiment = \"thresholds\"\ndelta_range = \"9..2\"\n").unwrap();
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { nl_run_toml(bad.as_ptr(), &mut run) }, NlStatus::Config);
    assert!(run.is_null());
}

#[test]
fn header_declares_every_export() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/nikodym_lab.h")).unwrap();
    for name in [
        "nl_patch_new",
        "nl_patch_free",
        "nl_cometric",
        "nl_hamiltonian",
        "nl_volume_density",
        "nl_closed_form_fan",
        "nl_fan_jacobian",
        "nl_flow_endpoint",
        "nl_dist",
        "nl_curvature_component",
        "nl_exponent_threshold",
        "nl_run_toml",
        "nl_run_summary_json",
        "nl_run_csv",
        "nl_run_free",
        "nl_last_error_message",
        "typedef struct NlPatch NlPatch",
        "NL_STATUS_LEFT_BOX = 4",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

/// Compiles `smoke.c` against the static library when a C compiler and the
/// archive are available.
#[test]
fn c_program_links_and_runs() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap().to_path_buf();
    let archive = profile_dir.join("libnikodym_lab_ffi.a");
    if !archive.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static archive at {}", archive.display());
        return;
    }
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("nikodym_smoke");
    let status = Command::new("cc")
        .arg(dir.join("tests/smoke.c"))
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&archive)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let run = Command::new(&out).output().unwrap();
    assert!(run.status.success(), "smoke program exited with {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
