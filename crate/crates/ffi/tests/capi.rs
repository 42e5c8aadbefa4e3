use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use defaultlab_ffi::*;

const BOND: &str = r#"
[grid]
T = 1.0
n_steps = 50
[market]
sigma = 1.0
phi = 0.2
S0 = 1.0
alpha = 1.0
[default]
lambda = 0.3
[claim]
kind = "survival"
params = { notional = 1.0 }
[solver]
n_paths = 20000
seed = 7
[experiment]
kind = "indifference"
"#;

const BINOMIAL: &str = r#"
[grid]
T = 1.0
n_steps = 1
[market]
sigma = 1.0
phi = 0.2
S0 = 1.0
alpha = 1.0
[experiment]
kind = "oracle"
"#;

fn model(text: &str) -> *mut DlModel {
    let c = CString::new(text).unwrap();
    let mut m = ptr::null_mut();
    let status = unsafe { dl_model_new(c.as_ptr(), &mut m) };
    assert_eq!(status, DlStatus::Ok, "{}", last_error());
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    let n = unsafe { dl_last_error_message(buf.as_mut_ptr(), buf.len()) };
    if n == 0 {
        return String::new();
    }
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(dl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn bond_price_and_ode_solution() {
    let m = model(BOND);
    unsafe {
        let (mut d, mut n_atoms) = (0usize, 9usize);
        assert_eq!(dl_model_dims(m, &mut d, &mut n_atoms), DlStatus::Ok);
        assert_eq!((d, n_atoms), (1, 0));

        let mut g = 0.0;
        assert_eq!(dl_azema(m, 1.0, &mut g), DlStatus::Ok);
        assert!((g - (-0.3f64).exp()).abs() < 1e-15);

        let (mut price, mut se) = (0.0, -1.0);
        assert_eq!(dl_indifference_price(m, DlSolverMode::Ode, &mut price, &mut se), DlStatus::Ok);
        assert!((price - 0.8210717221).abs() < 1e-9, "{price}");
        let mut ce = 0.0;
        assert_eq!(dl_certainty_equivalent(m, &mut ce), DlStatus::Ok);
        assert!((ce - price).abs() < 1e-9);

        let mut sol = ptr::null_mut();
        assert_eq!(dl_solve(m, DlSolverMode::Ode, DlHorizon::Fixed, &mut sol), DlStatus::Ok);
        let mut y0 = 0.0;
        assert_eq!(dl_solution_y0(sol, &mut y0, ptr::null_mut()), DlStatus::Ok);
        assert!((y0 - (0.8210717221 - 0.02)).abs() < 1e-9, "{y0}");
        dl_solution_free(sol);

        let mut lsmc = ptr::null_mut();
        assert_eq!(dl_solve(m, DlSolverMode::Lsmc, DlHorizon::Fixed, &mut lsmc), DlStatus::Ok);
        let (mut ly, mut lse) = (0.0, 0.0);
        assert_eq!(dl_solution_y0(lsmc, &mut ly, &mut lse), DlStatus::Ok);
        assert!((ly - y0).abs() < 0.01, "{ly} {y0}");
        dl_solution_free(lsmc);
        dl_model_free(m);
    }
}

#[test]
fn generator_and_value_function() {
    let m = model(BOND);
    unsafe {
        let z = [0.0];
        let mut f = 1.0;
        assert_eq!(
            dl_generator(m, DlHorizon::Fixed, 0.5, z.as_ptr(), 1, ptr::null(), 0, 0.0, true, &mut f),
            DlStatus::Ok
        );
        assert!((f + 0.02).abs() < 1e-15);
        let status = dl_generator(m, DlHorizon::Fixed, 0.5, z.as_ptr(), 2, ptr::null(), 0, 0.0, true, &mut f);
        assert_eq!(status, DlStatus::Validation);
        assert!(last_error().contains("expected 1 z"));

        let mut v = 0.0;
        assert_eq!(dl_value_function(-0.02, 0.0, 1.0, &mut v), DlStatus::Ok);
        assert!((v + 0.9801986733).abs() < 1e-9);
        assert!(last_error().is_empty());
        dl_model_free(m);
    }
}

#[test]
fn one_step_tree_dp() {
    let m = model(BINOMIAL);
    unsafe {
        let (mut value, mut y0, mut theta) = (0.0, 0.0, 0.0);
        assert_eq!(dl_tree_dp(m, &mut value, &mut y0, &mut theta), DlStatus::Ok);
        assert!((theta - 0.2027325541).abs() < 1e-9);
        assert!((value + 0.9800658521).abs() < 1e-9);
        dl_model_free(m);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut m = ptr::null_mut();
        let bad = CString::new("[grid]\nT = 1.0\n").unwrap();
        assert_eq!(dl_model_new(bad.as_ptr(), &mut m), DlStatus::Config);
        assert!(m.is_null());
        assert!(!last_error().is_empty());

        let singular = CString::new(BOND.replace("sigma = 1.0", "sigma = 0.0")).unwrap();
        assert_eq!(dl_model_new(singular.as_ptr(), &mut m), DlStatus::Validation);
        assert!(last_error().contains("singular"), "{}", last_error());

        assert_eq!(dl_model_new(ptr::null(), &mut m), DlStatus::NullPointer);
        let mut out = 0.0;
        assert_eq!(dl_azema(ptr::null(), 1.0, &mut out), DlStatus::NullPointer);
        assert!(last_error().contains("model"));

        let mm = model(BOND);
        assert_eq!(dl_azema(mm, -1.0, &mut out), DlStatus::Validation);
        assert_eq!(dl_azema(mm, 1.0, ptr::null_mut()), DlStatus::NullPointer);
        // truncation keeps the terminator and reports the full size
        let mut small = [0 as std::ffi::c_char; 4];
        let full = dl_last_error_message(small.as_mut_ptr(), small.len());
        assert!(full > small.len());
        assert_eq!(small[3], 0);
        dl_model_free(mm);
        dl_model_free(ptr::null_mut());
        dl_solution_free(ptr::null_mut());
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/defaultlab.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in ["dl_model_new", "dl_solve", "dl_tree_dp", "dl_last_error_message"] {
        assert!(text.contains(f), "{f} missing from the header");
    }
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-std=c11", "-Wall", "-Werror"])
        .arg(&header)
        .output()
    else {
        return; // no C compiler available
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
