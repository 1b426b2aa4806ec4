use mdc_track_ffi::*;
use std::ffi::{CStr, CString};
use std::ptr;

fn last_error() -> String {
    let p = mdc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn pipeline_round_trip() {
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(mdc_config_new(&mut cfg), MdcStatus::Ok);
        let mut ds = ptr::null_mut();
        assert_eq!(mdc_dataset_generate(cfg, &mut ds), MdcStatus::Config);
        assert!(last_error().contains("seed"));

        assert_eq!(mdc_config_set_seed(cfg, 17), MdcStatus::Ok);
        assert_eq!(mdc_config_set_events(cfg, MdcCategory::ConventionalTwo, 50), MdcStatus::Ok);
        assert_eq!(mdc_config_set_detector(cfg, -1.0, 0.013), MdcStatus::Config);
        assert_eq!(mdc_config_set_detector(cfg, 10.0, 0.013), MdcStatus::Ok);
        assert_eq!(mdc_dataset_generate(cfg, &mut ds), MdcStatus::Ok);
        let (mut events, mut hits) = (0usize, 0usize);
        assert_eq!(mdc_dataset_size(ds, &mut events, &mut hits), MdcStatus::Ok);
        assert_eq!(events, 50);
        assert!(hits > 50 * 20);

        let dir = tempfile::tempdir().unwrap();
        let file = cstr(dir.path().join("d.csv").to_str().unwrap());
        let mut rows = 0usize;
        assert_eq!(mdc_dataset_write(ds, file.as_ptr(), &mut rows), MdcStatus::Ok);
        assert_eq!(rows, hits);
        let mut back = ptr::null_mut();
        assert_eq!(mdc_dataset_read(cfg, file.as_ptr(), true, &mut back), MdcStatus::Ok);

        let mut reco = ptr::null_mut();
        assert_eq!(mdc_reconstruct(cfg, back, true, &mut reco), MdcStatus::Ok);
        let mut len = 0usize;
        assert_eq!(mdc_reco_len(reco, &mut len), MdcStatus::Ok);
        assert!(len >= 2 * 90);
        let mut t = std::mem::zeroed::<MdcTrack>();
        assert_eq!(mdc_reco_get(reco, 0, &mut t), MdcStatus::Ok);
        assert_eq!(t.stage, MdcStage::Finder);
        assert!(t.chi2.is_nan() && t.n_hits >= 6);
        assert_eq!(mdc_reco_get(reco, len, &mut t), MdcStatus::OutOfRange);

        let mut eval = ptr::null_mut();
        assert_eq!(mdc_evaluate(cfg, back, reco, &mut eval), MdcStatus::Ok);
        let mut s = MdcSummary::default();
        assert_eq!(mdc_evaluation_summary(eval, MdcStage::Fitter, &mut s), MdcStatus::Ok);
        assert_eq!(s.n_detectable, 100);
        assert!(s.eps_track.valid && s.eps_track.value > 0.9);
        assert!(s.eps_track.lo <= s.eps_track.value && s.eps_track.value <= s.eps_track.hi);
        let mut kv = ptr::null_mut();
        assert_eq!(mdc_evaluation_key_values(eval, MdcStage::Finder, &mut kv), MdcStatus::Ok);
        let text = CStr::from_ptr(kv).to_str().unwrap().to_owned();
        mdc_string_free(kv);
        assert!(text.contains("finding.pt[8].n_detectable="));

        mdc_evaluation_free(eval);
        mdc_reco_free(reco);
        mdc_dataset_free(back);
        mdc_dataset_free(ds);
        mdc_config_free(cfg);
    }
}

#[test]
fn errors_and_null_handles() {
    unsafe {
        let mut cfg = ptr::null_mut();
        let bad = cstr("[finder]\nnot_a_key = 1\n");
        assert_eq!(mdc_config_parse(bad.as_ptr(), &mut cfg), MdcStatus::Config);
        assert!(cfg.is_null());
        assert_eq!(mdc_config_parse(ptr::null(), &mut cfg), MdcStatus::NullPointer);
        let ok = cstr("seed = 3\n");
        assert_eq!(mdc_config_parse(ok.as_ptr(), ptr::null_mut()), MdcStatus::NullPointer);
        assert_eq!(mdc_config_parse(ok.as_ptr(), &mut cfg), MdcStatus::Ok);

        let missing = cstr("/nonexistent/dir/file.csv");
        let mut ds = ptr::null_mut();
        assert_eq!(mdc_dataset_read(cfg, missing.as_ptr(), false, &mut ds), MdcStatus::Io);
        let mut len = 0usize;
        assert_eq!(mdc_reco_len(ptr::null(), &mut len), MdcStatus::NullPointer);
        assert!(last_error().contains("reco"));

        // Fitter summary without fitter rows.
        assert_eq!(mdc_config_set_events(cfg, MdcCategory::Single, 5), MdcStatus::Ok);
        assert_eq!(mdc_dataset_generate(cfg, &mut ds), MdcStatus::Ok);
        let mut reco = ptr::null_mut();
        assert_eq!(mdc_reconstruct(cfg, ds, false, &mut reco), MdcStatus::Ok);
        let mut eval = ptr::null_mut();
        assert_eq!(mdc_evaluate(cfg, ds, reco, &mut eval), MdcStatus::Ok);
        let mut s = MdcSummary::default();
        assert_eq!(mdc_evaluation_summary(eval, MdcStage::Fitter, &mut s), MdcStatus::OutOfRange);
        assert_eq!(mdc_evaluation_summary(eval, MdcStage::Finder, &mut s), MdcStatus::Ok);

        mdc_evaluation_free(eval);
        mdc_reco_free(reco);
        mdc_dataset_free(ds);
        mdc_config_free(cfg);
        mdc_config_free(ptr::null_mut());
    }
}

#[test]
fn helix_conversion() {
    unsafe {
        let pos = [0.0, 0.0, 0.0];
        let mom = [1.0, 0.0, 0.0];
        let mut h = MdcHelix::default();
        assert_eq!(mdc_helix_from_state(pos.as_ptr(), mom.as_ptr(), -1, 1.0, &mut h), MdcStatus::Ok);
        assert_eq!(h.kappa, -1.0);
        assert_eq!((h.d_r, h.d_z, h.tan_lambda), (0.0, 0.0, 0.0));
        let (mut p, mut m, mut q) = ([0.0; 3], [0.0; 3], 0);
        assert_eq!(mdc_helix_to_state(&h, 1.0, p.as_mut_ptr(), m.as_mut_ptr(), &mut q), MdcStatus::Ok);
        assert_eq!(q, -1);
        assert!((m[0] - 1.0).abs() < 1e-12 && m[1].abs() < 1e-12);
        assert!(p.iter().all(|x| x.abs() < 1e-12));
        assert_eq!(
            mdc_helix_from_state(pos.as_ptr(), mom.as_ptr(), 2, 1.0, &mut h),
            MdcStatus::InvalidArgument
        );
        let v = CStr::from_ptr(mdc_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}
