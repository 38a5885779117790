use std::ffi::CStr;
use std::process::Command;
use std::ptr;

use gmsp_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(gmsp_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn handle_lifecycle_and_fit() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(gmsp_model_new(c"normal".as_ptr(), &mut model), GmspStatus::Ok);
        assert_eq!(gmsp_model_n_params(model), 2);
        assert_eq!(gmsp_model_dim(model), 1);

        let theta = [1.0, 2.0];
        let mut data = vec![0.0; 400];
        assert_eq!(gmsp_model_sample(model, theta.as_ptr(), 2, 400, 11, data.as_mut_ptr(), data.len()), GmspStatus::Ok);
        let mut cloud = ptr::null_mut();
        assert_eq!(gmsp_cloud_new(data.as_ptr(), 400, 1, &mut cloud), GmspStatus::Ok);
        assert_eq!(gmsp_cloud_len(cloud), 400);

        let mut est = [0.0; 2];
        let mut fit = GmspFit::default();
        assert_eq!(gmsp_fit(model, cloud, c"h1".as_ptr(), 3, est.as_mut_ptr(), 2, &mut fit), GmspStatus::Ok, "{}", last_error());
        assert!((est[0] - 1.0).abs() < 0.4 && (est[1] - 2.0).abs() < 0.4, "{est:?}");

        let mut s_hat = 0.0;
        let mut s_true = 0.0;
        assert_eq!(gmsp_score(model, cloud, c"h1".as_ptr(), est.as_ptr(), 2, &mut s_hat), GmspStatus::Ok);
        assert_eq!(gmsp_score(model, cloud, c"h1".as_ptr(), theta.as_ptr(), 2, &mut s_true), GmspStatus::Ok);
        assert!((s_hat - fit.score).abs() < 1e-12);
        assert!(s_hat >= s_true);

        gmsp_cloud_free(cloud);
        gmsp_model_free(model);
    }
}

#[test]
fn error_codes() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(gmsp_model_new(ptr::null(), &mut model), GmspStatus::NullPointer);
        assert_eq!(gmsp_model_new(c"mvnormal:2".as_ptr(), ptr::null_mut()), GmspStatus::NullPointer);
        assert_eq!(gmsp_model_new(c"mvnormal:2".as_ptr(), &mut model), GmspStatus::Ok);

        let mut out = 0.0;
        let bad = [0.0, 0.0, 1.0, 1.0, 1.5];
        let x = [0.0, 0.0];
        assert_eq!(gmsp_model_density(model, bad.as_ptr(), 5, x.as_ptr(), 2, &mut out), GmspStatus::OutOfBounds);
        assert!(last_error().contains("outside"));
        let good = [0.0, 0.0, 1.0, 1.0, 0.0];
        assert_eq!(gmsp_model_density(model, good.as_ptr(), 4, x.as_ptr(), 2, &mut out), GmspStatus::OutOfBounds);
        assert_eq!(gmsp_model_density(model, good.as_ptr(), 5, x.as_ptr(), 1, &mut out), GmspStatus::DimensionMismatch);
        assert_eq!(gmsp_model_density(model, good.as_ptr(), 5, x.as_ptr(), 2, &mut out), GmspStatus::Ok);
        assert!((out - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-14);

        let mut buf = [0.0; 3];
        assert_eq!(gmsp_model_sample(model, good.as_ptr(), 5, 2, 0, buf.as_mut_ptr(), 3), GmspStatus::BufferTooSmall);

        let mut cloud = ptr::null_mut();
        let one = [0.0, 0.0];
        assert_eq!(gmsp_cloud_new(one.as_ptr(), 1, 2, &mut cloud), GmspStatus::InvalidArgument);
        let nan = [0.0, f64::NAN, 1.0, 1.0];
        assert_eq!(gmsp_cloud_new(nan.as_ptr(), 2, 2, &mut cloud), GmspStatus::InvalidArgument);

        assert_eq!(gmsp_variance_constant(c"h9".as_ptr(), 2, &mut out), GmspStatus::InvalidArgument);
        assert_eq!(gmsp_variance_constant(c"h1".as_ptr(), 1, &mut out), GmspStatus::Ok);
        assert!((out - 5.0 / 3.0).abs() < 1e-6);

        gmsp_model_free(model);
        gmsp_model_free(ptr::null_mut());
        gmsp_cloud_free(ptr::null_mut());
        assert_eq!(gmsp_model_n_params(ptr::null()), 0);
    }
}

#[test]
fn header_compiles_as_c() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let header = format!("{dir}/include/gmsp.h");
    assert!(std::path::Path::new(&header).exists());
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"gmsp.h\"\nint main(void) { GmspModel *m = 0; GmspStatus s = gmsp_model_new(\"normal\", &m); \
         (void)s; gmsp_model_free(m); return GMSP_STATUS_OK; }\n",
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match Command::new(&cc).args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"]).arg(format!("{dir}/include")).arg(&src).output() {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(e) => eprintln!("skipping C compile check: {cc} unavailable ({e})"),
    }
}
