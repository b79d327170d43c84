use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use svam::inference;
use svam::model::{self, ModelConfig, ModelParams, Variant};
use svam::{SaliencyMap, Tensor};
use svam_ffi::*;

fn last_error() -> String {
    let p = svam_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_toy(seed: u64) -> *mut SvamModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { svam_model_new(64, 1, 8, seed, &mut m) }, SvamStatus::Ok);
    assert!(!m.is_null());
    m
}

fn image(seed: u32) -> Vec<f32> {
    (0..64 * 64 * 3).map(|i| (((i as u32).wrapping_mul(2654435761) ^ seed) % 1000) as f32 / 999.0).collect()
}

#[test]
fn predict_matches_library_bitwise() {
    let m = new_toy(3);
    let params: ModelParams = model::build_model(&ModelConfig::toy(), 3).unwrap();
    for (variant, v) in [(SvamVariant::Full, Variant::Full), (SvamVariant::Light, Variant::Light)] {
        let mut p = ptr::null_mut();
        assert_eq!(unsafe { svam_pipeline_new(m, variant, &mut p) }, SvamStatus::Ok);
        assert_eq!(unsafe { svam_pipeline_input_size(p) }, 64);
        let x = image(7);
        let mut out = vec![0f32; 64 * 64];
        let st = unsafe { svam_pipeline_predict(p, x.as_ptr(), x.len(), out.as_mut_ptr(), out.len()) };
        assert_eq!(st, SvamStatus::Ok);
        let lib = inference::decouple(&params, &ModelConfig::toy(), v).unwrap();
        let expect = lib.predict(&Tensor::from_vec([64, 64, 3], x).unwrap()).unwrap();
        let got: Vec<f64> = out.iter().map(|&v| v as f64).collect();
        assert_eq!(got, expect.data());
        unsafe { svam_pipeline_free(p) };
    }
    unsafe { svam_model_free(m) };
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("toy.weights").to_str().unwrap()).unwrap();
    let m = new_toy(5);
    assert_eq!(unsafe { svam_model_save(m, path.as_ptr()) }, SvamStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { svam_model_load(path.as_ptr(), 64, 1, 8, &mut loaded) }, SvamStatus::Ok);
    let (mut a, mut b) = (0usize, 0usize);
    for v in [SvamVariant::Full, SvamVariant::Light] {
        unsafe {
            assert_eq!(svam_model_param_count(m, v, &mut a), SvamStatus::Ok);
            assert_eq!(svam_model_param_count(loaded, v, &mut b), SvamStatus::Ok);
        }
        assert_eq!(a, b);
    }
    let (mut full, mut light) = (0usize, 0usize);
    unsafe {
        svam_model_param_count(m, SvamVariant::Full, &mut full);
        svam_model_param_count(m, SvamVariant::Light, &mut light);
    }
    assert!(light < full);

    let mut wrong = ptr::null_mut();
    let st = unsafe { svam_model_load(path.as_ptr(), 64, 1, 4, &mut wrong) };
    assert_eq!(st, SvamStatus::Format);
    assert!(last_error().contains("shape"), "{}", last_error());
    assert!(wrong.is_null());
    unsafe {
        svam_model_free(m);
        svam_model_free(loaded);
    }
}

#[test]
fn errors_are_reported() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { svam_model_new(48, 1, 8, 0, &mut m) }, SvamStatus::InvalidArgument);
    assert!(last_error().contains("48"));
    assert_eq!(unsafe { svam_model_new(64, 0, 8, 0, &mut m) }, SvamStatus::InvalidArgument);
    assert_eq!(unsafe { svam_model_new(64, 1, 8, 0, ptr::null_mut()) }, SvamStatus::NullPointer);

    let missing = CString::new("/nonexistent/x.weights").unwrap();
    assert_eq!(unsafe { svam_model_load(missing.as_ptr(), 64, 1, 8, &mut m) }, SvamStatus::Io);

    let model = new_toy(0);
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { svam_pipeline_new(model, SvamVariant::Light, &mut p) }, SvamStatus::Ok);
    let x = vec![0.5f32; 10];
    let mut out = vec![0f32; 64 * 64];
    let st = unsafe { svam_pipeline_predict(p, x.as_ptr(), x.len(), out.as_mut_ptr(), out.len()) };
    assert_eq!(st, SvamStatus::InvalidArgument);
    let st = unsafe { svam_pipeline_predict(ptr::null(), x.as_ptr(), x.len(), out.as_mut_ptr(), out.len()) };
    assert_eq!(st, SvamStatus::NullPointer);
    assert_eq!(unsafe { svam_pipeline_input_size(ptr::null()) }, 0);
    unsafe {
        svam_pipeline_free(p);
        svam_model_free(model);
        svam_model_free(ptr::null_mut());
        svam_pipeline_free(ptr::null_mut());
    }
}

#[test]
fn metrics_match_library() {
    let (h, w) = (6, 7);
    let gt: Vec<f64> = (0..h * w).map(|i| ((i % 5) < 2) as u8 as f64).collect();
    let pred: Vec<f64> = (0..h * w).map(|i| (i * 37 % 101) as f64 / 100.0).collect();
    let mut out = SvamMetrics::default();
    assert_eq!(unsafe { svam_metrics(pred.as_ptr(), gt.as_ptr(), h, w, &mut out) }, SvamStatus::Ok);
    let p = SaliencyMap::new(h, w, pred.clone()).unwrap();
    let g = SaliencyMap::new(h, w, gt.clone()).unwrap();
    assert_eq!(out.mae, svam::metrics::mae(&p, &g).unwrap());
    assert_eq!(out.s_measure, svam::metrics::s_measure(&p, &g).unwrap());
    assert_eq!(out.f_beta_max, svam::metrics::image_pr(&p, &g).unwrap().f_beta_max().0);

    let mut same = SvamMetrics::default();
    assert_eq!(unsafe { svam_metrics(gt.as_ptr(), gt.as_ptr(), h, w, &mut same) }, SvamStatus::Ok);
    assert_eq!((same.mae, same.f_beta_max), (0.0, 1.0));
    assert!((same.s_measure - 1.0).abs() < 1e-12, "{}", same.s_measure);

    let bad = vec![2.0; h * w];
    let st = unsafe { svam_metrics(bad.as_ptr(), gt.as_ptr(), h, w, &mut out) };
    assert_ne!(st, SvamStatus::Ok);
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("svam.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["svam_model_new", "svam_pipeline_predict", "svam_metrics", "SVAM_STATUS_OK", "typedef struct SvamModel SvamModel"] {
        assert!(text.contains(sym), "{sym}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"svam.h\"\nint main(void) { SvamModel *m = 0; SvamStatus s = svam_model_new(64, 1, 8, 0, &m); svam_model_free(m); return (int)s; }\n",
    )
    .unwrap();
    for (compiler, extra) in [("cc", &["-std=c99"][..]), ("c++", &["-x", "c++"][..])] {
        let status = Command::new(compiler)
            .args(extra)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
            .arg(header.parent().unwrap())
            .arg(&src)
            .status();
        match status {
            Ok(s) => assert!(s.success(), "{compiler} rejected the header"),
            Err(_) => eprintln!("{compiler} not available; skipped"),
        }
    }
}
