//! Property tests for the geometric and diffusion invariants.

use diffpose::diffusion::{forward_sample, predict_x0, NoiseSample, PoseState};
use diffpose::metrics::{pa_mpjpe, procrustes};
use diffpose::rotmath::{
    axisangle_to_rotmat, geodesic_distance, rotmat_to_axisangle, rotmat_to_sixd, sixd_to_rotmat, AxisAngle, Rot6D,
};
use diffpose::schedule::ScheduleConfig;
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

fn vec3() -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-1.0f64..1.0).prop_map(Vector3::from)
}

/// Two column vectors that are far from parallel and from zero.
fn sixd() -> impl Strategy<Value = Rot6D> {
    (vec3(), vec3()).prop_filter_map("nearly parallel", |(a, b)| {
        let ok = a.norm() > 0.1 && b.norm() > 0.1 && a.cross(&b).norm() > 0.05 * a.norm() * b.norm();
        ok.then(|| Rot6D::new(a, b))
    })
}

fn cloud(n: usize) -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec(vec3(), n)
}

fn rms(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / a.len() as f64).sqrt()
}

fn centred(p: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let c = p.iter().sum::<Vector3<f64>>() / p.len() as f64;
    p.iter().map(|x| x - c).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn sixd_maps_onto_rotations(r6 in sixd()) {
        let r = sixd_to_rotmat(&r6).unwrap();
        prop_assert!(r.orthogonality_error() < 1e-10);
        prop_assert!((r.det() - 1.0).abs() < 1e-10);
        // The first column is the normalised first input.
        let a = Vector3::from_column_slice(&r6.to_array()[..3]).normalize();
        prop_assert!((r.0.column(0) - a).norm() < 1e-12);
    }

    #[test]
    fn sixd_ignores_positive_rescaling(r6 in sixd(), s in 0.01f64..100.0, u in 0.01f64..100.0) {
        let [a0, a1, a2, b0, b1, b2] = r6.to_array();
        let scaled = Rot6D::from_slice(&[s * a0, s * a1, s * a2, u * b0, u * b1, u * b2]);
        let d = sixd_to_rotmat(&scaled).unwrap().0 - sixd_to_rotmat(&r6).unwrap().0;
        prop_assert!(d.abs().max() < 1e-12);
    }

    #[test]
    fn sixd_round_trip(r6 in sixd()) {
        let r = sixd_to_rotmat(&r6).unwrap();
        let back = sixd_to_rotmat(&rotmat_to_sixd(&r)).unwrap();
        prop_assert!((back.0 - r.0).abs().max() < 1e-12);
    }

    #[test]
    fn axis_angle_round_trip(axis in vec3(), angle in 0.0f64..3.1) {
        prop_assume!(axis.norm() > 0.1);
        let v = axis.normalize() * angle;
        let back = rotmat_to_axisangle(&axisangle_to_rotmat(&AxisAngle(v)));
        prop_assert!((back.0 - v).norm() < 1e-8, "{:?} vs {:?}", back.0, v);
    }

    #[test]
    fn geodesic_is_a_metric(a in sixd(), b in sixd(), c in sixd()) {
        let (a, b, c) = (sixd_to_rotmat(&a).unwrap(), sixd_to_rotmat(&b).unwrap(), sixd_to_rotmat(&c).unwrap());
        let ab = geodesic_distance(&a, &b);
        prop_assert!((ab - geodesic_distance(&b, &a)).abs() < 1e-12);
        prop_assert!(geodesic_distance(&a, &a) < 1e-6);
        prop_assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&ab));
        prop_assert!(ab <= geodesic_distance(&a, &c) + geodesic_distance(&c, &b) + 1e-6);
    }

    #[test]
    fn alignment_never_increases_rms(pred in cloud(24), gt in cloud(24)) {
        // Procrustes minimises the squared error, so its RMS is bounded by the
        // RMS after centring alone (identity rotation, unit scale).
        let sim = procrustes(&pred, &gt).unwrap();
        let aligned: Vec<_> = pred.iter().map(|p| sim.apply(p)).collect();
        prop_assert!(rms(&aligned, &gt) <= rms(&centred(&pred), &centred(&gt)) + 1e-12);
    }

    #[test]
    fn pa_ignores_similarity_of_prediction(pred in cloud(24), gt in cloud(24), r6 in sixd(),
                                           s in 0.1f64..10.0, t in vec3()) {
        let r: Matrix3<f64> = sixd_to_rotmat(&r6).unwrap().0;
        let moved: Vec<_> = pred.iter().map(|p| r * p * s + t).collect();
        let (a, b) = (pa_mpjpe(&pred, &gt).unwrap(), pa_mpjpe(&moved, &gt).unwrap());
        prop_assert!((a - b).abs() < 1e-6 * (1.0 + a), "{} vs {}", a, b);
    }

    #[test]
    fn predict_x0_inverts_forward(x0 in prop::collection::vec(-3.0f64..3.0, 12),
                                  eps in prop::collection::vec(-3.0f64..3.0, 12),
                                  t in 1usize..=1000) {
        let s = ScheduleConfig::STANDARD.build().unwrap();
        let xt = forward_sample(&PoseState(x0.clone()), t, &NoiseSample(eps.clone()), &s).unwrap();
        let back = predict_x0(&xt, t, &NoiseSample(eps), &s).unwrap();
        // Error grows like 1/√ᾱ_t times rounding of x_t.
        let tol = 1e-12 / s.alpha_bar(t).unwrap().sqrt();
        for (a, b) in back.0.iter().zip(&x0) {
            prop_assert!((a - b).abs() < tol);
        }
    }
}
