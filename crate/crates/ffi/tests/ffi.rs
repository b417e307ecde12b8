use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use rule_tpp::event_store::save_sequences;
use rule_tpp::simulator::{group_preset, simulate_corpus};
use rule_tpp_ffi::*;

fn c(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = rtpp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn write_fixture(dir: &Path) -> (CString, CString, CString) {
    let gt = group_preset(1, 4).unwrap();
    let sim = simulate_corpus(&gt, 60, 3, 100).unwrap();
    let corpus = dir.join("corpus.jsonl");
    let catalog = dir.join("catalog.json");
    save_sequences(&corpus, &gt.catalog, &sim.sequences).unwrap();
    std::fs::write(&catalog, serde_json::to_string(&gt.catalog).unwrap()).unwrap();
    let config = dir.join("train.toml");
    std::fs::write(&config, "H = 1\nK = 3\nem_max_iters = 2\npolish = \"none\"\n").unwrap();
    (c(&corpus), c(&catalog), c(&config))
}

#[test]
fn round_trip_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus_path, catalog_path, config_path) = write_fixture(dir.path());
    unsafe {
        let mut corpus = ptr::null_mut();
        assert_eq!(rtpp_corpus_load(corpus_path.as_ptr(), catalog_path.as_ptr(), true, &mut corpus), RtppStatus::Ok);
        let mut n = 0usize;
        assert_eq!(rtpp_corpus_len(corpus, &mut n), RtppStatus::Ok);
        assert_eq!(n, 60);

        let mut model = ptr::null_mut();
        assert_eq!(rtpp_fit(corpus, config_path.as_ptr(), 5, &mut model), RtppStatus::Ok, "{}", last_error());
        let mut h = 0usize;
        assert_eq!(rtpp_model_rule_count(model, &mut h), RtppStatus::Ok);
        assert_eq!(h, 1);

        let mut b0 = 0.0;
        assert_eq!(rtpp_model_base_rate(model, &mut b0), RtppStatus::Ok);
        assert!(b0 > 0.0);
        let mut pi = [0.0; 2];
        assert_eq!(rtpp_model_priors(model, pi.as_mut_ptr(), 2), RtppStatus::Ok);
        assert!((pi[0] + pi[1] - 1.0).abs() < 1e-9);
        let mut short = [0.0; 1];
        assert_eq!(rtpp_model_priors(model, short.as_mut_ptr(), 1), RtppStatus::OutOfRange);

        let mut text = ptr::null_mut();
        assert_eq!(rtpp_model_rule_text(model, 0, &mut text), RtppStatus::Ok);
        assert!(CStr::from_ptr(text).to_str().unwrap().contains('Y'));
        rtpp_string_free(text);
        assert_eq!(rtpp_model_rule_text(model, 9, &mut text), RtppStatus::OutOfRange);
        assert!(text.is_null());

        let mut json = ptr::null_mut();
        assert_eq!(rtpp_explain_json(model, corpus, 0, &mut json), RtppStatus::Ok);
        let value: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(value["sequence"], 0);
        rtpp_string_free(json);
        assert_eq!(rtpp_explain_json(model, corpus, 60, &mut json), RtppStatus::OutOfRange);

        let saved = c(&dir.path().join("model.json"));
        assert_eq!(rtpp_model_save(model, saved.as_ptr()), RtppStatus::Ok);
        let mut reloaded = ptr::null_mut();
        assert_eq!(rtpp_model_load(saved.as_ptr(), &mut reloaded), RtppStatus::Ok);
        let mut b0_again = 0.0;
        rtpp_model_base_rate(reloaded, &mut b0_again);
        assert_eq!(b0.to_bits(), b0_again.to_bits());

        rtpp_model_free(reloaded);
        rtpp_model_free(model);
        rtpp_corpus_free(corpus);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (_, catalog_path, _) = write_fixture(dir.path());
    let missing = c(&dir.path().join("absent.jsonl"));
    unsafe {
        let mut corpus = ptr::null_mut();
        assert_eq!(rtpp_corpus_load(missing.as_ptr(), catalog_path.as_ptr(), true, &mut corpus), RtppStatus::Io);
        assert!(corpus.is_null());
        assert!(last_error().contains("absent.jsonl"));

        assert_eq!(rtpp_corpus_load(ptr::null(), catalog_path.as_ptr(), true, &mut corpus), RtppStatus::NullPointer);
        assert_eq!(rtpp_corpus_len(ptr::null(), ptr::null_mut()), RtppStatus::NullPointer);

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(&bad, "{\"body\":{},\"target\":[2.0,1.0],\"horizon\":5.0}\n").unwrap();
        let bad = c(&bad);
        assert_eq!(rtpp_corpus_load(bad.as_ptr(), catalog_path.as_ptr(), true, &mut corpus), RtppStatus::Data);
        assert_eq!(rtpp_corpus_load(bad.as_ptr(), catalog_path.as_ptr(), false, &mut corpus), RtppStatus::Ok);
        rtpp_corpus_free(corpus);

        rtpp_string_free(ptr::null_mut());
        rtpp_model_free(ptr::null_mut());
        rtpp_corpus_free(ptr::null_mut());
    }
    assert!(rtpp_last_error().is_null());
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(rtpp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("rule_tpp.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["rtpp_corpus_load", "rtpp_fit", "rtpp_explain_json", "rtpp_last_error", "RTPP_STATUS_OK"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(out) = Command::new("cc").args(["-fsyntax-only", "-x", "c", "-Wall", "-Werror"]).arg(&header).output() else {
        eprintln!("no C compiler found; syntax check skipped");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
