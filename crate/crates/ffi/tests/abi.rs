use std::ffi::{CStr, CString};
use std::ptr;

use chrono_dce::model::{ModelConfig, RecognizerModel};
use chrono_dce::pipeline::{Encoding, FeatureStream, Pipeline};
use chrono_dce::skeleton::{self, synth_generate, SkeletonGraph, SyntheticSpec};
use chrono_dce_ffi::*;

fn last_error() -> String {
    let p = cdce_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn dct_round_trip_and_losses() {
    let x = [0.5, -1.0, 2.0, 0.25, 3.0];
    let mut d = [0.0; 5];
    let mut back = [0.0; 5];
    unsafe {
        assert_eq!(cdce_dct2(x.as_ptr(), 5, d.as_mut_ptr()), CdceStatus::Ok);
        assert_eq!(cdce_idct2(d.as_ptr(), 5, back.as_mut_ptr()), CdceStatus::Ok);
    }
    assert!((d[0] - x.iter().sum::<f64>()).abs() < 1e-12);
    for (a, b) in x.iter().zip(&back) {
        assert!((a - b).abs() < 1e-12);
    }

    let v = [3.0, 1.0, 2.0, 0.0];
    let mut crl = 0.0;
    let mut naive = 0.0;
    unsafe {
        assert_eq!(cdce_crl_loss(v.as_ptr(), 4, &mut crl), CdceStatus::Ok);
        assert_eq!(cdce_naive_chron_loss(v.as_ptr(), 4, &mut naive), CdceStatus::Ok);
    }
    assert_eq!(crl, 4.0);
    assert_eq!(naive, 3.0);
}

#[test]
fn errors_set_status_and_message() {
    let mut out = 0.0;
    unsafe {
        assert_eq!(cdce_crl_loss(ptr::null(), 3, &mut out), CdceStatus::NullPointer);
        assert!(last_error().contains("null"));
        let one = [1.0];
        assert_eq!(cdce_crl_loss(one.as_ptr(), 1, &mut out), CdceStatus::InvalidArgument);
        assert_eq!(cdce_dct2(one.as_ptr(), 0, &mut out), CdceStatus::InvalidArgument);
        let path = CString::new("/nonexistent/model.json").unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(cdce_model_load(path.as_ptr(), &mut m), CdceStatus::Io);
        assert!(m.is_null());
        assert!(last_error().contains("/nonexistent/model.json"));
        cdce_model_free(ptr::null_mut());
        cdce_sequence_free(ptr::null_mut());
        assert_eq!(cdce_model_num_classes(ptr::null()), 0);
    }
    let v = unsafe { CStr::from_ptr(cdce_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn sequence_encoding_matches_library() {
    let data = synth_generate(&SyntheticSpec::new(1, &[], 12, 1, 4).unwrap()).unwrap();
    let seq = &data.samples[0];
    let s = seq.coords.shape().to_vec();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(
            cdce_sequence_new(seq.coords.data().as_ptr(), s[0], s[1], s[2], s[3], seq.valid_len, seq.persons, &mut h),
            CdceStatus::Ok
        );
        assert_eq!(cdce_sequence_frames(h), 12);

        let mut need = 0;
        assert_eq!(cdce_dce_encode(h, 4, true, ptr::null_mut(), 0, &mut need), CdceStatus::BufferTooSmall);
        assert_eq!(need, 5 * seq.coords.numel());
        let mut buf = vec![0.0; need];
        assert_eq!(cdce_dce_encode(h, 4, true, buf.as_mut_ptr(), buf.len(), &mut need), CdceStatus::Ok);
        let expect = chrono_dce::dct::dce_encode(
            seq,
            &chrono_dce::dct::DceConfig {
                k: 4,
                include_original: true,
            },
        )
        .unwrap();
        assert_eq!(buf, expect.data());

        assert_eq!(
            cdce_sequence_new(seq.coords.data().as_ptr(), s[0], s[1], s[2], s[3], 0, 1, &mut h),
            CdceStatus::InvalidArgument
        );
        cdce_sequence_free(h);
    }
}

#[test]
fn model_logits_match_library() {
    let dir = tempfile::tempdir().unwrap();
    let graph = SkeletonGraph::body9();
    let pipeline = Pipeline::new(FeatureStream::Joint, Encoding::dce(2));
    let cfg = ModelConfig {
        widths: vec![4, 6],
        strides: vec![1, 2],
        dilations: vec![1, 2],
        ..ModelConfig::new(pipeline.in_channels(), 9, 3)
    };
    let model = RecognizerModel::new(cfg, graph.clone(), 9).unwrap();
    let path = dir.path().join("model.json");
    model.save_with(&path, Some(&pipeline)).unwrap();
    let data = synth_generate(&SyntheticSpec::new(1, &[2.0], 16, 1, 5).unwrap()).unwrap();
    let seq_path = dir.path().join("seq.json");
    skeleton::save(&data.samples[2], &seq_path).unwrap();

    let x = pipeline.prepare(&data.samples[2], &graph, None).unwrap();
    let (emb, expect) = model.forward(&x).unwrap();
    let expect_chron = model.chron_head(&emb).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let spath = CString::new(seq_path.to_str().unwrap()).unwrap();
    let (mut m, mut s) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(cdce_model_load(cpath.as_ptr(), &mut m), CdceStatus::Ok);
        assert_eq!(cdce_sequence_load(spath.as_ptr(), &mut s), CdceStatus::Ok);
        assert_eq!(cdce_model_num_classes(m), 3);
        let mut logits = [0.0; 3];
        let mut n = 0;
        assert_eq!(cdce_model_logits(m, s, logits.as_mut_ptr(), 3, &mut n), CdceStatus::Ok);
        assert_eq!(n, 3);
        assert_eq!(logits.to_vec(), expect);
        let mut scores = vec![0.0; 8];
        assert_eq!(cdce_model_chron_scores(m, s, scores.as_mut_ptr(), 8, &mut n), CdceStatus::Ok);
        assert_eq!(n, 8);
        assert_eq!(scores, expect_chron);
        cdce_sequence_free(s);
        cdce_model_free(m);
    }

    let bin = path.with_extension("bin");
    let mut bytes = std::fs::read(&bin).unwrap();
    bytes[0] ^= 1;
    std::fs::write(&bin, bytes).unwrap();
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(cdce_model_load(cpath.as_ptr(), &mut m), CdceStatus::HashMismatch);
    }
}
