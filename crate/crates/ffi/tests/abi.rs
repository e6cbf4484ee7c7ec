use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use dlmc_ffi::*;

fn fixture(name: &str) -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../core/fixtures/{name}.json"));
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(dlmc_last_error()) }
        .to_str()
        .unwrap()
        .to_owned()
}

fn load(name: &str) -> *mut DlmcFeeder {
    let mut f = ptr::null_mut();
    assert_eq!(
        unsafe { dlmc_feeder_load(fixture(name).as_ptr(), &mut f) },
        DlmcStatus::Ok
    );
    f
}

#[test]
fn run_and_query_chain6() {
    let f = load("chain6");
    unsafe {
        assert_eq!(dlmc_feeder_node_count(f), 6);
        let periods = dlmc_feeder_period_count(f);
        assert!(periods > 0);
        assert!(dlmc_feeder_node_id(f, 6).is_null());
        let root = CStr::from_ptr(dlmc_feeder_node_id(f, 0)).to_str().unwrap();
        assert!(!root.is_empty());

        let mut r = ptr::null_mut();
        let cycle = CString::new("cycle").unwrap();
        assert_eq!(
            dlmc_run(f, cycle.as_ptr(), &mut r),
            DlmcStatus::Ok,
            "{}",
            last_error()
        );
        assert_eq!(last_error(), "");
        assert!(dlmc_result_objective(r).is_finite());
        assert!(dlmc_result_max_gap(r) <= 1e-4);

        let mut c = DlmcComponents::default();
        for kind in [DlmcKind::P, DlmcKind::Q] {
            assert_eq!(
                dlmc_result_components(r, 5, periods, kind, &mut c),
                DlmcStatus::Ok
            );
            let sum = c.substation
                + c.real_loss
                + c.reactive_loss
                + c.voltage
                + c.ampacity
                + c.transformer;
            assert_eq!(sum, c.total);
            assert!(c.gap <= 1e-4);
        }
        assert_eq!(
            dlmc_result_components(r, 0, 1, DlmcKind::P, &mut c),
            DlmcStatus::OutOfRange
        );
        assert_eq!(
            dlmc_result_components(r, 1, periods + 1, DlmcKind::P, &mut c),
            DlmcStatus::OutOfRange
        );
        assert!(last_error().contains("period"));

        let dir = tempfile::tempdir().unwrap();
        let out = CString::new(dir.path().join("bundle").to_str().unwrap()).unwrap();
        assert_eq!(dlmc_result_write(r, out.as_ptr()), DlmcStatus::Ok);
        assert!(dir.path().join("bundle/dlmc.csv").is_file());

        dlmc_result_free(r);
        dlmc_feeder_free(f);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut f = ptr::null_mut();
        let missing = CString::new("/nonexistent/feeder.json").unwrap();
        assert_eq!(dlmc_feeder_load(missing.as_ptr(), &mut f), DlmcStatus::Io);
        assert!(f.is_null());
        assert!(!last_error().is_empty());

        let junk = CString::new("{ nope").unwrap();
        assert_eq!(dlmc_feeder_parse(junk.as_ptr(), &mut f), DlmcStatus::Parse);
        assert_eq!(
            dlmc_feeder_load(ptr::null(), &mut f),
            DlmcStatus::NullArgument
        );
        assert_eq!(
            dlmc_feeder_load(missing.as_ptr(), ptr::null_mut()),
            DlmcStatus::NullArgument
        );

        let f = load("two_node");
        let mut r = ptr::null_mut();
        let bad = CString::new("forever").unwrap();
        assert_eq!(dlmc_run(f, bad.as_ptr(), &mut r), DlmcStatus::Validation);
        assert!(r.is_null());
        assert_eq!(
            dlmc_run(ptr::null(), ptr::null(), &mut r),
            DlmcStatus::NullArgument
        );
        assert!(dlmc_result_objective(ptr::null()).is_nan());
        assert_eq!(dlmc_feeder_node_count(ptr::null()), 0);
        dlmc_feeder_free(f);
        dlmc_feeder_free(ptr::null_mut());
        dlmc_result_free(ptr::null_mut());
    }
}

#[test]
fn parse_from_string_matches_file() {
    let text = std::fs::read_to_string(fixture("two_node").to_str().unwrap()).unwrap();
    let json = CString::new(text).unwrap();
    unsafe {
        let mut f = ptr::null_mut();
        assert_eq!(dlmc_feeder_parse(json.as_ptr(), &mut f), DlmcStatus::Ok);
        let g = load("two_node");
        assert_eq!(dlmc_feeder_node_count(f), dlmc_feeder_node_count(g));
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(dlmc_run(f, ptr::null(), &mut a), DlmcStatus::Ok);
        assert_eq!(dlmc_run(g, ptr::null(), &mut b), DlmcStatus::Ok);
        assert_eq!(
            dlmc_result_objective(a).to_bits(),
            dlmc_result_objective(b).to_bits()
        );
        dlmc_result_free(a);
        dlmc_result_free(b);
        dlmc_feeder_free(f);
        dlmc_feeder_free(g);
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(dlmc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include/dlmc.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "dlmc_feeder_load",
        "dlmc_run",
        "dlmc_result_components",
        "dlmc_last_error",
        "DLMC_STATUS_INFEASIBLE = 12",
    ] {
        assert!(text.contains(sym), "{sym}");
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"dlmc.h\"\n\
         int probe(const char *path) {\n\
           DlmcFeeder *f = NULL; DlmcResult *r = NULL; DlmcComponents c;\n\
           if (dlmc_feeder_load(path, &f) != DLMC_STATUS_OK) return 1;\n\
           DlmcStatus s = dlmc_run(f, \"cycle\", &r);\n\
           if (s == DLMC_STATUS_OK) s = dlmc_result_components(r, 1, 1, DLMC_KIND_Q, &c);\n\
           dlmc_result_free(r); dlmc_feeder_free(f);\n\
           return s == DLMC_STATUS_OK ? 0 : (int)s;\n\
         }\n",
    )
    .unwrap();
    for (cc, extra) in [("cc", &["-std=c99"][..]), ("c++", &["-x", "c++"][..])] {
        let status = Command::new(cc)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-pedantic"])
            .args(extra)
            .arg("-I")
            .arg(header.parent().unwrap())
            .arg(&src)
            .status();
        match status {
            Ok(s) => assert!(s.success(), "{cc} rejected the header"),
            Err(e) => eprintln!("skipping {cc}: {e}"),
        }
    }
}
