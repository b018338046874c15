//! Affine and TPS estimation from point correspondences.
//!
//! Both estimators are least-squares fits in normalized grid coordinates.
//! The affine is fitted between raw source and target points; the TPS is
//! fitted afterwards between affine-aligned source points and the targets.

use std::path::Path;

use nalgebra::{Matrix2, SMatrix, SVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    lattice_basis, tps_from_control_points, AffineTransform, TpsTransform, LATTICE, LATTICE_SIZE,
};
use crate::imaging::pixel_to_norm;
use crate::{Error, Point, Result};

pub const DEFAULT_TPS_LAMBDA: f64 = 1e-3;

/// Relative scatter determinant below which source points count as collinear.
const COLLINEAR_TOL: f64 = 1e-10;

/// Source/target point pairs with optional non-negative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondences {
    pairs: Vec<(Point, Point)>,
    weights: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct KeypointFile {
    pairs: Vec<[Point; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

impl Correspondences {
    pub fn new(pairs: Vec<(Point, Point)>) -> Self {
        Correspondences {
            pairs,
            weights: None,
        }
    }

    pub fn with_weights(pairs: Vec<(Point, Point)>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != pairs.len() {
            return Err(Error::InvalidArgument(format!(
                "{} weights for {} pairs",
                weights.len(),
                pairs.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "weight {w} is not a finite value >= 0"
            )));
        }
        Ok(Correspondences {
            pairs,
            weights: Some(weights),
        })
    }

    pub fn from_points(sources: &[Point], targets: &[Point]) -> Result<Self> {
        if sources.len() != targets.len() {
            return Err(Error::InvalidArgument(format!(
                "{} source points vs {} target points",
                sources.len(),
                targets.len()
            )));
        }
        Ok(Self::new(
            sources
                .iter()
                .copied()
                .zip(targets.iter().copied())
                .collect(),
        ))
    }

    pub fn pairs(&self) -> &[(Point, Point)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    /// Copy with every source point passed through `f`.
    pub fn map_sources(&self, f: impl Fn(Point) -> Point) -> Self {
        Correspondences {
            pairs: self.pairs.iter().map(|(p, q)| (f(*p), *q)).collect(),
            weights: self.weights.clone(),
        }
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Correspondences {
            pairs: idx.iter().map(|i| self.pairs[*i]).collect(),
            weights: self
                .weights
                .as_ref()
                .map(|w| idx.iter().map(|i| w[*i]).collect()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&KeypointFile {
            pairs: self.pairs.iter().map(|(p, q)| [*p, *q]).collect(),
            weights: self.weights.clone(),
        })
        .expect("keypoints serialize")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let raw: KeypointFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let pairs = raw.pairs.into_iter().map(|[p, q]| (p, q)).collect();
        match raw.weights {
            Some(w) => Self::with_weights(pairs, w).map_err(|e| e.to_string()),
            None => Ok(Self::new(pairs)),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|m| Error::format(path, m))
    }

    /// Loads a keypoint file whose coordinates are pixel positions
    /// (`(col, row)` = centre of that pixel) and converts them to
    /// normalized units.
    pub fn load_pixels(path: impl AsRef<Path>, width: usize, height: usize) -> Result<Self> {
        let px = Self::load(path)?;
        let conv = |[x, y]: Point| [pixel_to_norm(x, width), pixel_to_norm(y, height)];
        Ok(Correspondences {
            pairs: px.pairs.iter().map(|(p, q)| (conv(*p), conv(*q))).collect(),
            weights: px.weights,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Weighted least-squares affine `q ≈ A p + t`.
pub fn estimate_affine(c: &Correspondences) -> Result<AffineTransform> {
    let total_w: f64 = (0..c.len()).map(|i| c.weight(i)).sum();
    let active = (0..c.len()).filter(|i| c.weight(*i) > 0.0).count();
    if active < 3 || total_w <= 0.0 {
        return Err(Error::DegenerateCorrespondences(format!(
            "need at least 3 weighted pairs, got {active}"
        )));
    }
    let (mut pm, mut qm) = ([0.0; 2], [0.0; 2]);
    for (i, (p, q)) in c.pairs().iter().enumerate() {
        let w = c.weight(i);
        for k in 0..2 {
            pm[k] += w * p[k];
            qm[k] += w * q[k];
        }
    }
    pm = pm.map(|v| v / total_w);
    qm = qm.map(|v| v / total_w);

    let mut spp = Matrix2::<f64>::zeros();
    let mut sqp = Matrix2::<f64>::zeros();
    for (i, (p, q)) in c.pairs().iter().enumerate() {
        let w = c.weight(i);
        let dp = [p[0] - pm[0], p[1] - pm[1]];
        let dq = [q[0] - qm[0], q[1] - qm[1]];
        for r in 0..2 {
            for k in 0..2 {
                spp[(r, k)] += w * dp[r] * dp[k];
                sqp[(r, k)] += w * dq[r] * dp[k];
            }
        }
    }
    let scale = spp.trace();
    if !(scale > 0.0) || spp.determinant() <= COLLINEAR_TOL * scale * scale {
        return Err(Error::DegenerateCorrespondences(
            "source points are collinear".into(),
        ));
    }
    let inv = spp
        .try_inverse()
        .ok_or_else(|| Error::DegenerateCorrespondences("source scatter is singular".into()))?;
    let a = sqp * inv;
    Ok(AffineTransform {
        r11: a[(0, 0)],
        r12: a[(0, 1)],
        r21: a[(1, 0)],
        r22: a[(1, 1)],
        tx: qm[0] - (a[(0, 0)] * pm[0] + a[(0, 1)] * pm[1]),
        ty: qm[1] - (a[(1, 0)] * pm[0] + a[(1, 1)] * pm[1]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    /// Inlier residual threshold in normalized units.
    pub inlier_threshold: f64,
    pub iterations: usize,
    /// `None` means `max(6, n / 2)`, capped at `n`.
    pub min_inliers: Option<usize>,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            inlier_threshold: 0.05,
            iterations: 512,
            min_inliers: None,
            seed: 0,
        }
    }
}

impl RansacConfig {
    fn required(&self, n: usize) -> usize {
        self.min_inliers.unwrap_or_else(|| 6.max(n / 2).min(n))
    }
}

fn residual(t: &AffineTransform, (p, q): &(Point, Point)) -> f64 {
    let r = t.apply(*p);
    (r[0] - q[0]).hypot(r[1] - q[1])
}

fn inliers(t: &AffineTransform, c: &Correspondences, threshold: f64) -> Vec<usize> {
    c.pairs()
        .iter()
        .enumerate()
        .filter(|(_, pair)| residual(t, pair) < threshold)
        .map(|(i, _)| i)
        .collect()
}

/// RANSAC over minimal 3-point samples, then a least-squares refit on the
/// consensus set. Ties keep the earliest sample, so results depend only on
/// the seed.
pub fn estimate_affine_ransac(c: &Correspondences, cfg: &RansacConfig) -> Result<AffineTransform> {
    if !(cfg.inlier_threshold > 0.0) || cfg.iterations == 0 {
        return Err(Error::InvalidArgument(
            "RANSAC needs a positive threshold and at least one iteration".into(),
        ));
    }
    let n = c.len();
    if n < 3 {
        return Err(Error::DegenerateCorrespondences(format!(
            "need at least 3 pairs, got {n}"
        )));
    }
    let required = cfg.required(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Vec<usize> = Vec::new();
    for _ in 0..cfg.iterations {
        let idx = sample(&mut rng, n, 3).into_vec();
        let Ok(model) = estimate_affine(&c.subset(&idx)) else {
            continue;
        };
        if !model.is_finite() {
            continue;
        }
        let set = inliers(&model, c, cfg.inlier_threshold);
        if set.len() > best.len() {
            best = set;
        }
    }
    if best.len() < required || best.len() < 3 {
        return Err(Error::NoConsensus {
            best: best.len(),
            required,
        });
    }
    let mut model = estimate_affine(&c.subset(&best))?;
    for _ in 0..5 {
        let set = inliers(&model, c, cfg.inlier_threshold);
        if set == best || set.len() < required.max(3) {
            break;
        }
        best = set;
        model = estimate_affine(&c.subset(&best))?;
    }
    Ok(model)
}

type Normal = SMatrix<f64, LATTICE_SIZE, LATTICE_SIZE>;
type NormalRhs = SMatrix<f64, LATTICE_SIZE, 2>;

/// Regularized least-squares TPS: minimizes
/// `Σ wᵢ ‖tps(pᵢ) − qᵢ‖² + λ Σⱼ ‖cⱼ − ℓⱼ‖²` over the 9 control points `cⱼ`.
///
/// Source points must already be in the affine-aligned frame.
pub fn estimate_tps(c: &Correspondences, lambda: f64) -> Result<TpsTransform> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    if c.is_empty() {
        return Err(Error::DegenerateCorrespondences(
            "no correspondences".into(),
        ));
    }
    // Unknowns are the control displacements δⱼ = cⱼ − ℓⱼ; since the lattice
    // basis reproduces the identity, tps(p) − q = Σⱼ Lⱼ(p) δⱼ − (q − p).
    let mut normal = Normal::identity() * lambda;
    let mut rhs = NormalRhs::zeros();
    for (i, (p, q)) in c.pairs().iter().enumerate() {
        let w = c.weight(i);
        if w == 0.0 {
            continue;
        }
        let b = SVector::<f64, LATTICE_SIZE>::from(lattice_basis(*p));
        normal += (b * b.transpose()) * w;
        for k in 0..2 {
            rhs.column_mut(k).axpy(w * (q[k] - p[k]), &b, 1.0);
        }
    }
    let eig = normal.symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
        (lo.min(*v), hi.max(v.abs()))
    });
    if !(hi > 0.0) || lo <= 1e-12 * hi {
        return Err(Error::IllPosed);
    }
    let chol = normal.cholesky().ok_or(Error::IllPosed)?;
    let sol = chol.solve(&rhs);
    let mut ctrl = LATTICE;
    for (j, cp) in ctrl.iter_mut().enumerate() {
        cp[0] += sol[(j, 0)];
        cp[1] += sol[(j, 1)];
    }
    tps_from_control_points(ctrl)
}

/// Mean Euclidean distance between paired points.
pub fn keypoint_distance(c: &Correspondences) -> Result<f64> {
    if c.is_empty() {
        return Err(Error::InvalidArgument(
            "keypoint distance needs at least one pair".into(),
        ));
    }
    let total: f64 = c
        .pairs()
        .iter()
        .map(|(p, q)| (p[0] - q[0]).hypot(p[1] - q[1]))
        .sum();
    Ok(total / c.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal as Gaussian};

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
        (0..n)
            .map(|_| [rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)])
            .collect()
    }

    fn mapped(t: &AffineTransform, pts: &[Point]) -> Correspondences {
        Correspondences::new(pts.iter().map(|p| (*p, t.apply(*p))).collect())
    }

    #[test]
    fn identity_from_four_points() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, 0.7]];
        let t = estimate_affine(&mapped(&AffineTransform::IDENTITY, &pts)).unwrap();
        assert!(t.distance(&AffineTransform::IDENTITY) < 1e-12);
    }

    #[test]
    fn exact_recovery_from_three_points() {
        let truth = AffineTransform::from_params([2.0, 0.0, 0.0, 2.0, 0.1, 0.0]);
        let pts = [[-0.5, -0.2], [0.4, 0.1], [0.0, 0.6]];
        let t = estimate_affine(&mapped(&truth, &pts)).unwrap();
        assert!(t.distance(&truth) < 1e-9);
    }

    #[test]
    fn noisy_recovery_within_tolerance() {
        let truth = AffineTransform::from_params([1.1, 0.15, -0.2, 0.9, 0.05, -0.1]);
        let noise = Gaussian::new(0.0, 0.01).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_points(&mut rng, 20);
            let pairs = pts
                .iter()
                .map(|p| {
                    let q = truth.apply(*p);
                    (
                        *p,
                        [q[0] + noise.sample(&mut rng), q[1] + noise.sample(&mut rng)],
                    )
                })
                .collect();
            let t = estimate_affine(&Correspondences::new(pairs)).unwrap();
            for (a, b) in t.params().iter().zip(truth.params()) {
                assert!((a - b).abs() < 0.05, "seed {seed}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn collinear_and_short_inputs_fail() {
        let line: Vec<Point> = (0..5).map(|i| [i as f64 * 0.1, i as f64 * 0.2]).collect();
        let err = estimate_affine(&mapped(&AffineTransform::IDENTITY, &line));
        assert!(matches!(err, Err(Error::DegenerateCorrespondences(_))));
        let two = [[0.0, 0.0], [1.0, 1.0]];
        assert!(estimate_affine(&mapped(&AffineTransform::IDENTITY, &two)).is_err());
    }

    #[test]
    fn zero_weights_exclude_pairs() {
        let truth = AffineTransform::rotation_deg(12.0);
        let mut pairs: Vec<_> = [[0.0, 0.0], [0.5, 0.1], [0.2, 0.6], [-0.3, 0.4]]
            .iter()
            .map(|p| (*p, truth.apply(*p)))
            .collect();
        pairs.push(([0.9, 0.9], [-5.0, 3.0]));
        let c = Correspondences::with_weights(pairs, vec![1.0, 2.0, 1.0, 0.5, 0.0]).unwrap();
        assert!(estimate_affine(&c).unwrap().distance(&truth) < 1e-12);
        assert!(Correspondences::with_weights(vec![([0.0; 2], [0.0; 2])], vec![-1.0]).is_err());
    }

    #[test]
    fn translation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = random_points(&mut rng, 10);
        let c = Correspondences::new(
            pts.iter()
                .map(|p| {
                    (
                        *p,
                        [
                            p[0] * 0.9 + rng.gen_range(-0.1..0.1),
                            p[1] + rng.gen_range(-0.1..0.1),
                        ],
                    )
                })
                .collect(),
        );
        let v = [0.37, -0.21];
        let shifted = Correspondences::new(
            c.pairs()
                .iter()
                .map(|(p, q)| (*p, [q[0] + v[0], q[1] + v[1]]))
                .collect(),
        );
        let a = estimate_affine(&c).unwrap();
        let b = estimate_affine(&shifted).unwrap();
        assert!((b.tx - a.tx - v[0]).abs() < 1e-12);
        assert!((b.ty - a.ty - v[1]).abs() < 1e-12);
        assert!((b.r12 - a.r12).abs() < 1e-12);
    }

    #[test]
    fn ransac_matches_least_squares_on_clean_data() {
        let truth = AffineTransform::from_params([0.9, -0.3, 0.25, 1.05, -0.2, 0.15]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = mapped(&truth, &random_points(&mut rng, 12));
        let ls = estimate_affine(&c).unwrap();
        let rs = estimate_affine_ransac(&c, &RansacConfig::default()).unwrap();
        assert!(rs.distance(&ls) < 1e-12);
    }

    #[test]
    fn ransac_rejects_gross_outliers() {
        let truth = AffineTransform::from_params([1.2, 0.1, -0.1, 0.8, 0.3, -0.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut pairs: Vec<_> = random_points(&mut rng, 20)
            .into_iter()
            .map(|p| (p, truth.apply(p)))
            .collect();
        for _ in 0..5 {
            pairs.push((
                [rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)],
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            ));
        }
        let c = Correspondences::new(pairs);
        let cfg = RansacConfig {
            seed: 11,
            ..RansacConfig::default()
        };
        let t = estimate_affine_ransac(&c, &cfg).unwrap();
        assert!(t.distance(&truth) < 1e-6);
        // Same seed, same bits.
        assert_eq!(estimate_affine_ransac(&c, &cfg).unwrap(), t);
    }

    #[test]
    fn ransac_all_outliers_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pairs = (0..20)
            .map(|_| {
                (
                    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                )
            })
            .collect();
        let cfg = RansacConfig {
            inlier_threshold: 0.01,
            ..RansacConfig::default()
        };
        assert!(matches!(
            estimate_affine_ransac(&Correspondences::new(pairs), &cfg),
            Err(Error::NoConsensus { .. })
        ));
    }

    #[test]
    fn tps_identity_correspondences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let pts = random_points(&mut rng, 12);
        let t = estimate_tps(
            &mapped(&AffineTransform::IDENTITY, &pts),
            DEFAULT_TPS_LAMBDA,
        )
        .unwrap();
        assert_eq!(t.control_points(), &LATTICE);
        assert_eq!(
            crate::geometry::deformation_magnitude(&t, 32, 32).unwrap(),
            0.0
        );
    }

    #[test]
    fn tps_rank_deficient_without_regularizer() {
        let pts = [[0.1, 0.2], [0.3, -0.1], [-0.2, 0.4], [0.0, 0.0], [0.5, 0.5]];
        let c = mapped(&AffineTransform::IDENTITY, &pts);
        assert!(matches!(estimate_tps(&c, 0.0), Err(Error::IllPosed)));
        assert!(estimate_tps(&c, 1e-3).is_ok());
        assert!(estimate_tps(&c, -1.0).is_err());
    }

    #[test]
    fn keypoint_distance_values() {
        let same = Correspondences::new(vec![([0.1, 0.2], [0.1, 0.2]); 3]);
        assert_eq!(keypoint_distance(&same).unwrap(), 0.0);
        let one = Correspondences::new(vec![([0.0, 0.0], [0.3, 0.4])]);
        assert!((keypoint_distance(&one).unwrap() - 0.5).abs() < 1e-15);
        let two = Correspondences::new(vec![([0.0, 0.0], [0.2, 0.0]), ([0.0, 0.0], [0.0, -0.4])]);
        assert!((keypoint_distance(&two).unwrap() - 0.3).abs() < 1e-15);
        assert!(keypoint_distance(&Correspondences::new(vec![])).is_err());
    }

    #[test]
    fn keypoint_json_round_trip_and_pixels() {
        let c =
            Correspondences::with_weights(vec![([0.25, -0.5], [0.125, 0.75])], vec![2.0]).unwrap();
        assert_eq!(Correspondences::from_json(&c.to_json()).unwrap(), c);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kp.json");
        std::fs::write(&path, r#"{"pairs": [[[0, 0], [3, 1]]]}"#).unwrap();
        let px = Correspondences::load_pixels(&path, 4, 2).unwrap();
        assert_eq!(px.pairs()[0], ([-0.75, -0.5], [0.75, 0.5]));
        assert_eq!(px.weight(0), 1.0);
    }
}
