use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use speechunits_ffi::*;

fn last_error() -> String {
    let p = su_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn features(rows: &[[f32; 2]]) -> *mut SuFeatures {
    let flat: Vec<f32> = rows.iter().flatten().copied().collect();
    let mut out = ptr::null_mut();
    let st = unsafe { su_features_new(flat.as_ptr(), rows.len(), 2, 50.0, &mut out) };
    assert_eq!(st, SuStatus::Ok);
    out
}

#[test]
fn fit_assign_segment_round_trip() {
    let rows: Vec<[f32; 2]> = (0..40)
        .map(|i| {
            if (i / 10) % 2 == 0 {
                [0.0, 0.0]
            } else {
                [10.0, 10.0]
            }
        })
        .collect();
    let m = features(&rows);
    unsafe {
        assert_eq!(su_features_rows(m), 40);
        assert_eq!(su_features_cols(m), 2);

        let mut cb = ptr::null_mut();
        let mats = [m as *const SuFeatures];
        assert_eq!(
            su_codebook_fit(mats.as_ptr(), 1, 2, 7, 100, 1e-4, &mut cb),
            SuStatus::Ok
        );
        assert_eq!(su_codebook_k(cb), 2);
        assert_eq!(su_codebook_dim(cb), 2);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("cb.kmcb").to_str().unwrap()).unwrap();
        assert_eq!(su_codebook_write(cb, path.as_ptr()), SuStatus::Ok);
        let mut cb2 = ptr::null_mut();
        assert_eq!(su_codebook_read(path.as_ptr(), &mut cb2), SuStatus::Ok);

        let mut framewise = ptr::null_mut();
        assert_eq!(su_kmeans_assign(m, cb2, &mut framewise), SuStatus::Ok);
        assert_eq!(su_units_len(framewise), 40);
        let mut dd = ptr::null_mut();
        assert_eq!(su_units_dedup(framewise, &mut dd), SuStatus::Ok);
        assert_eq!(su_units_len(dd), 4);

        let mut seg = ptr::null_mut();
        assert_eq!(su_dpdp_segment(m, cb2, 1.0, 50, &mut seg), SuStatus::Ok);
        assert_eq!(su_units_len(seg), 40);
        su_units_free(seg);
        assert_eq!(su_units_dedup(framewise, &mut seg), SuStatus::Ok);
        assert_eq!(su_units_len(seg), 4);
        let (mut u, mut d) = (0u32, 0u32);
        let mut total = 0;
        for i in 0..4 {
            assert_eq!(su_units_get(seg, i, &mut u, &mut d), SuStatus::Ok);
            assert_eq!(d, 10);
            total += d;
        }
        assert_eq!(total, 40);
        assert_eq!(
            su_units_get(seg, 4, &mut u, &mut d),
            SuStatus::InvalidArgument
        );
        assert!(last_error().contains("out of range"));

        su_units_free(seg);
        su_units_free(dd);
        su_units_free(framewise);
        su_codebook_free(cb2);
        su_codebook_free(cb);
        su_features_free(m);
    }
}

#[test]
fn status_codes() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(
            su_features_read(ptr::null(), &mut out),
            SuStatus::NullPointer
        );
        let missing = CString::new("/nonexistent/x.fmat").unwrap();
        assert_eq!(su_features_read(missing.as_ptr(), &mut out), SuStatus::Io);
        assert!(last_error().contains("/nonexistent/x.fmat"));

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.fmat");
        std::fs::write(&bad, b"NOPE0000000000000000000000").unwrap();
        let bad = CString::new(bad.to_str().unwrap()).unwrap();
        assert_eq!(su_features_read(bad.as_ptr(), &mut out), SuStatus::Format);

        let m = features(&[[0.0, 0.0], [1.0, 1.0]]);
        let mut cb = ptr::null_mut();
        let mats = [m as *const SuFeatures];
        assert_eq!(
            su_codebook_fit(mats.as_ptr(), 1, 5, 0, 10, 1e-4, &mut cb),
            SuStatus::Compute
        );
        assert!(!su_last_error().is_null());

        let data = [1.0f32, 2.0];
        assert_eq!(
            su_features_new(data.as_ptr(), 1, 2, 50.0, ptr::null_mut()),
            SuStatus::NullPointer
        );
        assert_eq!(
            su_features_new(data.as_ptr(), 1, 2, 50.0, &mut out),
            SuStatus::Ok
        );
        assert!(su_last_error().is_null());
        su_features_free(out);
        su_features_free(m);
        su_features_free(ptr::null_mut());
    }
}

#[test]
fn purity_and_mixing() {
    let units = [0u32, 0, 1, 1, 1, 2];
    let phones = [5u32, 5, 5, 6, 6, 6];
    let (mut pp, mut cp) = (0.0, 0.0);
    unsafe {
        assert_eq!(
            su_purity(units.as_ptr(), phones.as_ptr(), 6, &mut pp, &mut cp),
            SuStatus::Ok
        );
    }
    assert!((pp - 5.0 / 6.0).abs() < 1e-12);
    assert!((cp - 4.0 / 6.0).abs() < 1e-12);

    let signal: Vec<f32> = (0..4000).map(|i| 0.3 * ((i as f32) * 0.05).sin()).collect();
    let noise: Vec<f32> = (0..1000)
        .map(|i| if i % 2 == 0 { 0.1 } else { -0.1 })
        .collect();
    let mut out = vec![0f32; signal.len()];
    let mut gain = 0.0;
    let mut clipped = usize::MAX;
    let st = unsafe {
        su_mix_noise_at_snr(
            signal.as_ptr(),
            signal.len(),
            noise.as_ptr(),
            noise.len(),
            10.0,
            3,
            1,
            out.as_mut_ptr(),
            &mut gain,
            &mut clipped,
        )
    };
    assert_eq!(st, SuStatus::Ok);
    assert_eq!(clipped, 0);
    let added: Vec<f32> = out.iter().zip(&signal).map(|(o, s)| o - s).collect();
    let ps: f64 = signal.iter().map(|&x| (x as f64).powi(2)).sum();
    let pn: f64 = added.iter().map(|&x| (x as f64).powi(2)).sum();
    let snr = 10.0 * (ps / pn).log10();
    assert!((snr - 10.0).abs() < 0.01, "snr {snr}");
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(su_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("include/speechunits.h"),
    )
    .unwrap();
    for name in [
        "su_last_error",
        "su_version",
        "su_features_read",
        "su_features_new",
        "su_features_free",
        "su_codebook_read",
        "su_codebook_write",
        "su_codebook_fit",
        "su_codebook_free",
        "su_kmeans_assign",
        "su_dpdp_segment",
        "su_units_dedup",
        "su_units_get",
        "su_units_free",
        "su_purity",
        "su_mix_noise_at_snr",
    ] {
        assert!(
            header.contains(&format!("{name}(")),
            "{name} missing from header"
        );
    }
}

#[test]
fn header_compiles_as_c() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        "#include \"speechunits.h\"\nint main(void) { SuFeatures *m = 0; (void)su_features_rows(m); return SU_STATUS_OK; }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "C compiler rejected the header"),
        Err(_) => eprintln!("no C compiler available; header syntax check skipped"),
    }
}
