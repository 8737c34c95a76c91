use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use dvs_core::ensemble::EnsembleModel;
use dvs_core::features::{FeatureConfig, NormalizerStats};
use dvs_core::siggen::{render_scenario, ScenarioSpec};
use dvs_core::tensornet::{LayerSpec, Network, NetworkSpec};
use dvs_ffi::*;

fn tiny_model(dir: &Path) {
    let shape = FeatureConfig::default().blob_shape();
    let member = |seed| {
        let spec = NetworkSpec {
            input: shape,
            layers: vec![LayerSpec::Dense { units: 8 }, LayerSpec::Relu, LayerSpec::Dense { units: 7 }],
        };
        Network::seeded(spec, seed).unwrap()
    };
    let stats = NormalizerStats {
        mean: vec![0.0; shape.1],
        std: vec![1.0; shape.1],
        clip: 8.0,
    };
    EnsembleModel::new([member(1), member(2), member(3)], stats).unwrap().save(dir).unwrap();
}

fn load(dir: &Path) -> *mut DvsEnsemble {
    let p = CString::new(dir.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { dvs_ensemble_load(p.as_ptr(), &mut h) }, DvsStatus::Ok);
    assert!(!h.is_null());
    h
}

#[test]
fn load_classify_free() {
    let dir = tempfile::tempdir().unwrap();
    tiny_model(dir.path());
    let h = load(dir.path());
    let (mut r, mut c) = (0, 0);
    unsafe {
        assert_eq!(dvs_ensemble_input_shape(h, &mut r, &mut c), DvsStatus::Ok);
        let blob = vec![0.25; r * c];
        let mut fused = [0.0; 7];
        let mut d = 99;
        assert_eq!(dvs_ensemble_classify(h, blob.as_ptr(), blob.len(), DvsFusionRule::L2, fused.as_mut_ptr(), &mut d), DvsStatus::Ok);
        assert!((fused.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(d < 7);
        let st = dvs_ensemble_classify(h, blob.as_ptr(), 3, DvsFusionRule::L2, fused.as_mut_ptr(), &mut d);
        assert_eq!(st, DvsStatus::InvalidConfig);
        assert!(!dvs_last_error_message().is_null());
        dvs_ensemble_free(h);
    }
}

#[test]
fn missing_model_reports_missing_file() {
    let p = CString::new("/nonexistent/model").unwrap();
    let mut h = ptr::null_mut();
    let st = unsafe { dvs_ensemble_load(p.as_ptr(), &mut h) };
    assert_eq!(st, DvsStatus::MissingFile);
    assert!(h.is_null());
    let msg = unsafe { CStr::from_ptr(dvs_last_error_message()) }.to_str().unwrap();
    assert!(msg.contains("missing"), "{msg}");
    assert_eq!(unsafe { dvs_ensemble_load(ptr::null(), &mut h) }, DvsStatus::NullPointer);
}

#[test]
fn stream_decision_map() {
    let dir = tempfile::tempdir().unwrap();
    tiny_model(dir.path());
    let h = load(dir.path());
    let (stream, _) = render_scenario(&ScenarioSpec::background_only(10.0 * 2048.0 / 1666.0, 3, 4)).unwrap();
    let samples: Vec<i16> = stream.channels().iter().flatten().map(|&v| v as i16).collect();
    let len = stream.len();
    let mut frames = 0;
    unsafe {
        let st = dvs_ensemble_infer_stream(h, samples.as_ptr(), 3, len, ptr::null_mut(), 0, &mut frames);
        assert_eq!(st, DvsStatus::BufferTooSmall);
        assert_eq!(frames, 19);
        let mut map = vec![255u8; frames * 3];
        let st = dvs_ensemble_infer_stream(h, samples.as_ptr(), 3, len, map.as_mut_ptr(), map.len(), &mut frames);
        assert_eq!(st, DvsStatus::Ok);
        assert!(map.iter().all(|&d| d < 7));
        dvs_ensemble_free(h);
    }
}

#[test]
fn pure_functions() {
    let mut n = 0;
    unsafe {
        assert_eq!(dvs_frame_count(20480, 2048, 2, &mut n), DvsStatus::Ok);
        assert_eq!(n, 19);
        assert_eq!(dvs_frame_count(20480, 2048, 9, &mut n), DvsStatus::InvalidConfig);
    }
    assert_eq!(dvs_vote(3, 3, 5), 3);
    assert_eq!(dvs_vote(1, 2, 3), 0);
    let scores = [[0.7, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0], [0.2, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0], [0.1, 0.0, 0.9, 0.0, 0.0, 0.0, 0.0]].concat();
    let mut out = [0.0; 7];
    unsafe {
        assert_eq!(dvs_fuse(scores.as_ptr(), DvsFusionRule::MaxConfidence, out.as_mut_ptr()), DvsStatus::Ok);
        assert_eq!(out.to_vec(), scores[14..21].to_vec());
        let mut d = 0;
        assert_eq!(dvs_threshold_decide(out.as_ptr(), [0.95; 7].as_ptr(), &mut d), DvsStatus::Ok);
        assert_eq!(d, 0);
        let mut eye = [0.0; 49];
        for i in 0..7 {
            eye[i * 8] = 100.0;
        }
        let (mut p, mut f) = ([0.0; 7], [0.0; 7]);
        assert_eq!(dvs_precision_f1(eye.as_ptr(), p.as_mut_ptr(), f.as_mut_ptr()), DvsStatus::Ok);
        assert!(p.iter().chain(&f).all(|v| (v - 100.0).abs() < 1e-9));
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/dvs.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["dvs_ensemble_load", "dvs_ensemble_free", "dvs_last_error_message", "DVS_STATUS_MISSING_FILE", "DvsEnsemble"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"dvs.h\"\nint main(void) { DvsEnsemble *h = 0; size_t n = 0;\n\
         DvsStatus s = dvs_frame_count(10, 4, 2, &n); dvs_ensemble_free(h); return s == DVS_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
        .expect("cc available");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
