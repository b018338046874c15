use ads_core::alignment::{estimate_affine, estimate_tps, Correspondences};
use ads_core::geometry::{
    decompose_affine, deformation_magnitude, tps_from_control_points, TpsTransform, LATTICE,
    LATTICE_SIZE,
};
use ads_core::synthscene::{oracle_correspondences, pose_only_pairs, SceneConfig};
use ads_core::{Error, Point};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    (0..n)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect()
}

#[test]
fn tps_generate_then_recover() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let truth =
            LATTICE.map(|[x, y]| [x + rng.gen_range(-0.2..0.2), y + rng.gen_range(-0.2..0.2)]);
        let t = tps_from_control_points(truth).unwrap();
        let pairs: Vec<(Point, Point)> = random_points(&mut rng, 40)
            .into_iter()
            .map(|p| (p, t.apply(p)))
            .collect();
        let est = estimate_tps(&Correspondences::new(pairs), 0.0).unwrap();
        for (a, b) in est.control_points().iter().zip(&truth) {
            assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);
        }
    }
}

/// Ridge solution from a dense design matrix whose columns are the spline
/// responses to unit control perturbations, built without the cardinal
/// basis used by the estimator.
fn dense_ridge(pairs: &[(Point, Point)], lambda: f64) -> [Point; LATTICE_SIZE] {
    let n = pairs.len();
    let mut design = DMatrix::<f64>::zeros(n, LATTICE_SIZE);
    for j in 0..LATTICE_SIZE {
        let mut ctrl = LATTICE;
        ctrl[j][0] += 1.0;
        let t = tps_from_control_points(ctrl).unwrap();
        for (i, (p, _)) in pairs.iter().enumerate() {
            design[(i, j)] = t.apply(*p)[0] - p[0];
        }
    }
    let normal = design.transpose() * &design
        + DMatrix::<f64>::identity(LATTICE_SIZE, LATTICE_SIZE) * lambda;
    let mut out = LATTICE;
    for k in 0..2 {
        let rhs = DVector::from_iterator(n, pairs.iter().map(|(p, q)| q[k] - p[k]));
        let delta = normal
            .clone()
            .lu()
            .solve(&(design.transpose() * rhs))
            .unwrap();
        for j in 0..LATTICE_SIZE {
            out[j][k] += delta[j];
        }
    }
    out
}

#[test]
fn five_point_ridge_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let pairs: Vec<(Point, Point)> = random_points(&mut rng, 5)
            .into_iter()
            .map(|p| {
                (
                    p,
                    [
                        p[0] + rng.gen_range(-0.1..0.1),
                        p[1] + rng.gen_range(-0.1..0.1),
                    ],
                )
            })
            .collect();
        let c = Correspondences::new(pairs.clone());
        let est = estimate_tps(&c, 1e-3).unwrap();
        let oracle = dense_ridge(&pairs, 1e-3);
        for (a, b) in est.control_points().iter().zip(&oracle) {
            assert!(
                (a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9,
                "{a:?} vs {b:?}"
            );
        }
        // Ridge optimality against a nearly unregularized fit x0:
        // residual(xλ) ≤ residual(x0) + λ‖x0 − ℓ‖².
        let residual = |t: &TpsTransform| -> f64 {
            pairs
                .iter()
                .map(|(p, q)| {
                    let m = t.apply(*p);
                    (m[0] - q[0]).powi(2) + (m[1] - q[1]).powi(2)
                })
                .sum()
        };
        let loose = estimate_tps(&c, 1e-9).unwrap();
        let penalty: f64 = loose
            .control_points()
            .iter()
            .zip(&LATTICE)
            .map(|(a, l)| (a[0] - l[0]).powi(2) + (a[1] - l[1]).powi(2))
            .sum();
        assert!(residual(&est) <= residual(&loose) + 1e-3 * penalty + 1e-12);
    }
}

#[test]
fn large_lambda_shrinks_to_lattice() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pairs: Vec<(Point, Point)> = random_points(&mut rng, 12)
        .into_iter()
        .map(|p| (p, [p[0] + 0.2, p[1] - 0.1]))
        .collect();
    let c = Correspondences::new(pairs);
    let mut last = f64::INFINITY;
    for lambda in [1e-2, 1.0, 1e2, 1e4, 1e8] {
        let t = estimate_tps(&c, lambda).unwrap();
        let d = deformation_magnitude(&t, 32, 32).unwrap();
        assert!(d < last);
        last = d;
    }
    assert!(last < 1e-7);
}

#[test]
fn too_few_points_without_ridge_is_ill_posed() {
    let pairs = vec![([0.0, 0.0], [0.1, 0.0]), ([0.5, 0.5], [0.5, 0.6])];
    assert!(matches!(
        estimate_tps(&Correspondences::new(pairs.clone()), 0.0),
        Err(Error::IllPosed)
    ));
    assert!(estimate_tps(&Correspondences::new(pairs), 1e-3).is_ok());
}

#[test]
fn oracle_keypoints_recover_ground_truth_pose() {
    let cfg = SceneConfig::default();
    for (src, tar) in pose_only_pairs(50, 3, &cfg) {
        let a = estimate_affine(&oracle_correspondences(&src, &tar, &cfg)).unwrap();
        let d = decompose_affine(&a).unwrap();
        assert!((d.theta_deg - (tar.theta - src.theta)).abs() < 1e-6);
        assert!((d.sx - tar.sx / src.sx).abs() < 1e-6);
        assert!((d.sy - tar.sy / src.sy).abs() < 1e-6);
        assert!(d.shear.abs() < 1e-6);
        // The translation carries the pivot: t = c_tar − R·S·c_src.
        let moved = a.apply([src.tx, src.ty]);
        assert!((moved[0] - tar.tx).abs() < 1e-6 && (moved[1] - tar.ty).abs() < 1e-6);
    }
}
