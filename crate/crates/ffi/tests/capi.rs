use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use diffpose::trainer::{initial_checkpoint, TrainConfig};
use diffpose_ffi::*;

fn last_error() -> String {
    let p = dp_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn sixd_identity_and_degenerate() {
    let mut out = [0.0; 9];
    let s = unsafe { dp_sixd_to_rotmat([2.0, 0.0, 0.0, 0.5, 3.0, 0.0].as_ptr(), out.as_mut_ptr()) };
    assert_eq!(s, DpStatus::Ok);
    let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    for (a, b) in out.iter().zip(eye) {
        assert!((a - b).abs() < 1e-12);
    }

    let s = unsafe { dp_sixd_to_rotmat([1.0, 0.0, 0.0, 2.0, 0.0, 0.0].as_ptr(), out.as_mut_ptr()) };
    assert_eq!(s, DpStatus::DegenerateInput);
    assert!(last_error().contains("degenerate"));
}

#[test]
fn null_pointers_are_reported() {
    let s = unsafe { dp_sixd_to_rotmat(ptr::null(), ptr::null_mut()) };
    assert_eq!(s, DpStatus::NullPointer);
    assert!(last_error().contains("sixd"));
    assert_eq!(unsafe { dp_body_model_num_joints(ptr::null()) }, 0);
    unsafe {
        dp_body_model_free(ptr::null_mut());
        dp_predictor_free(ptr::null_mut());
    }
}

#[test]
fn rest_mesh_and_metrics() {
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { dp_body_model_default(0, &mut model) }, DpStatus::Ok);
    let (k, v) = unsafe { (dp_body_model_num_joints(model), dp_body_model_num_vertices(model)) };
    assert_eq!((k, v), (24, 200));

    let theta: Vec<f64> = (0..k).flat_map(|_| [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).collect();
    let beta = [0.0; 10];
    let mut verts = vec![0.0; 3 * v];
    let mut joints = vec![0.0; 3 * k];
    let s = unsafe {
        dp_body_model_mesh(
            model,
            DpRepresentation::SixD,
            theta.as_ptr(),
            theta.len(),
            beta.as_ptr(),
            10,
            verts.as_mut_ptr(),
            verts.len(),
            joints.as_mut_ptr(),
            joints.len(),
        )
    };
    assert_eq!(s, DpStatus::Ok);
    let mut err = f64::NAN;
    assert_eq!(unsafe { dp_mpjpe(joints.as_ptr(), joints.as_ptr(), k, &mut err) }, DpStatus::Ok);
    assert_eq!(err, 0.0);

    // A uniformly scaled copy is perfect after alignment but not before.
    let scaled: Vec<f64> = joints.iter().map(|x| 1.5 * x).collect();
    let mut pa = f64::NAN;
    assert_eq!(unsafe { dp_pa_mpjpe(scaled.as_ptr(), joints.as_ptr(), k, &mut pa) }, DpStatus::Ok);
    assert_eq!(unsafe { dp_mpjpe(scaled.as_ptr(), joints.as_ptr(), k, &mut err) }, DpStatus::Ok);
    assert!(pa < 1e-6 && err > 1.0, "pa {pa} mpjpe {err}");

    // Wrong output length.
    let s = unsafe {
        dp_body_model_mesh(
            model,
            DpRepresentation::SixD,
            theta.as_ptr(),
            theta.len(),
            beta.as_ptr(),
            10,
            verts.as_mut_ptr(),
            3,
            ptr::null_mut(),
            0,
        )
    };
    assert_eq!(s, DpStatus::DimensionMismatch);
    unsafe { dp_body_model_free(model) };
}

#[test]
fn predictor_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("init.json");
    let cfg = TrainConfig::default();
    initial_checkpoint(&cfg, 24).unwrap().save(&path).unwrap();

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut pred = ptr::null_mut();
    assert_eq!(unsafe { dp_predictor_load(c_path.as_ptr(), &mut pred) }, DpStatus::Ok);
    let (d, c) = unsafe { (dp_predictor_pose_dim(pred), dp_predictor_cond_dim(pred)) };
    assert_eq!((d, c), (144, 72));
    let mut repr = DpRepresentation::AxisAngle;
    assert_eq!(unsafe { dp_predictor_representation(pred, &mut repr) }, DpStatus::Ok);
    assert_eq!(repr, DpRepresentation::SixD);

    let z = vec![0.1; c];
    let mut a = vec![0.0; 3 * d];
    let mut b = vec![0.0; 3 * d];
    for out in [&mut a, &mut b] {
        let s = unsafe { dp_predictor_sample(pred, z.as_ptr(), c, 5, 2, 3, out.as_mut_ptr(), out.len()) };
        assert_eq!(s, DpStatus::Ok);
    }
    assert_eq!(a, b);
    assert!(a.iter().all(|x| x.is_finite()));
    assert_ne!(a[..d], a[d..2 * d]);

    let (mut beta, mut cam) = ([f64::NAN; 10], [f64::NAN; 3]);
    let s = unsafe { dp_predictor_shape_camera(pred, z.as_ptr(), c, beta.as_mut_ptr(), cam.as_mut_ptr()) };
    assert_eq!(s, DpStatus::Ok);
    assert!(beta.iter().chain(&cam).all(|x| x.is_finite()));

    let s = unsafe { dp_predictor_sample(pred, z.as_ptr(), c - 1, 5, 2, 1, a.as_mut_ptr(), d) };
    assert_eq!(s, DpStatus::DimensionMismatch);
    unsafe { dp_predictor_free(pred) };
}

#[test]
fn missing_file_is_io_error() {
    let p = CString::new("/nonexistent/ckpt.json").unwrap();
    let mut pred = ptr::null_mut();
    assert_eq!(unsafe { dp_predictor_load(p.as_ptr(), &mut pred) }, DpStatus::Io);
    assert!(pred.is_null());
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/diffpose.h");
    let src = std::env::temp_dir().join(format!("diffpose_header_{}.c", std::process::id()));
    std::fs::write(&src, format!("#include \"{header}\"\nint main(void) {{ return DP_STATUS_OK; }}\n")).unwrap();
    let status = match Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).status() {
        Ok(s) => s,
        Err(_) => {
            eprintln!("no C compiler; skipping");
            return;
        }
    };
    std::fs::remove_file(&src).ok();
    assert!(status.success());
}
