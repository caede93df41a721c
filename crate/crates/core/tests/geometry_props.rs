use mvdp::geometry::{
    backproject, project, sym_eigenvalues, CameraIntrinsics, CameraParams, RigidTransform, SymMat3,
};
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn camera(rot: Vector3<f64>, t: Vector3<f64>) -> CameraParams {
    let k = CameraIntrinsics::new(110.0, 112.0, 63.5, 62.0, 128, 128).unwrap();
    CameraParams::new(k, RigidTransform::from_rotation_vector(rot, t)).unwrap()
}

proptest! {
    #[test]
    fn backproject_then_project_recovers_pixel(
        rot in vec3(3.0),
        t in vec3(5.0),
        u in 0.0..128.0f64,
        v in 0.0..128.0f64,
        depth in 0.3..8.0f64,
    ) {
        let cam = camera(rot, t);
        let world = backproject(Vector2::new(u, v), depth, &cam).unwrap();
        let (pixel, z) = project(&world, &cam).unwrap();
        prop_assert!((pixel.x - u).abs() < 1e-9 && (pixel.y - v).abs() < 1e-9);
        prop_assert!((z - depth).abs() < 1e-9);
    }

    #[test]
    fn transform_inverse_composes_to_identity(rot in vec3(3.0), t in vec3(5.0), p in vec3(10.0)) {
        let a = RigidTransform::from_rotation_vector(rot, t);
        let back = a.inverse().compose(&a).apply(&p);
        prop_assert!((back - p).norm() < 1e-9);
    }

    #[test]
    fn jacobi_eigenvalues_match_nalgebra(
        d in (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64),
        o in (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64),
    ) {
        let m = SymMat3::new(d.0, o.0, o.1, d.1, o.2, d.2);
        let ours = sym_eigenvalues(&m);
        let mut reference: Vec<f64> = m.to_matrix().symmetric_eigenvalues().iter().copied().collect();
        reference.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let scale = m.frobenius_norm().max(1.0);
        for (a, b) in ours.iter().zip(&reference) {
            prop_assert!((a - b).abs() < 1e-10 * scale, "{ours:?} vs {reference:?}");
        }
    }
}
