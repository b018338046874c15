//! Align → Deform → Subtract on a single source/target pair.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::{
    estimate_affine, estimate_affine_ransac, estimate_tps, keypoint_distance, Correspondences,
    RansacConfig, DEFAULT_TPS_LAMBDA,
};
use crate::geometry::{
    deformation_magnitude, inverse_affine_grid, pose_measures, AffineTransform, MeasureSet,
    PoseMeasures, TpsTransform, TransformParams,
};
use crate::imaging::{
    error_heatmap, identity_grid, masked_mse, mse, warp, warp_mask, CoordGrid, Heatmap, Image,
    Mask, Rgb, BLACK,
};
use crate::synthscene::{oracle_correspondences, render, SceneConfig, SceneDescriptor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Estimated,
    Imported,
}

/// A source image with its object mask, a target image, and whatever is
/// available to align them.
#[derive(Debug, Clone)]
pub struct PairInput {
    pub source: Image,
    pub source_mask: Mask,
    pub target: Image,
    pub correspondences: Option<Correspondences>,
    /// Externally estimated transforms. Take precedence over estimation;
    /// correspondences are then only used for residual diagnostics.
    pub imported: Option<TransformParams>,
}

impl PairInput {
    /// Renders a synthetic pair with oracle correspondences.
    pub fn synthetic(
        src: &SceneDescriptor,
        tar: &SceneDescriptor,
        width: usize,
        height: usize,
        cfg: &SceneConfig,
    ) -> Result<Self> {
        let s = render(src, width, height, cfg)?;
        let t = render(tar, width, height, cfg)?;
        Ok(PairInput {
            source: s.image,
            source_mask: s.mask,
            target: t.image,
            correspondences: Some(oracle_correspondences(src, tar, cfg)),
            imported: None,
        })
    }

    fn check(&self) -> Result<()> {
        self.source.same_dims(&self.target)?;
        self.source.same_dims(&self.source_mask)?;
        if self.correspondences.is_none() && self.imported.is_none() {
            return Err(Error::InvalidArgument(
                "either correspondences or imported transforms are required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub tps_lambda: f64,
    /// Use RANSAC instead of plain least squares for the affine stage.
    pub ransac: Option<RansacConfig>,
    pub fill: Rgb,
    pub emit_intermediates: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tps_lambda: DEFAULT_TPS_LAMBDA,
            ransac: None,
            fill: BLACK,
            emit_intermediates: false,
        }
    }
}

/// Disentangled measures plus the plain-MSE baseline for one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifferenceReport {
    pub measures: MeasureSet,
    pub baseline_mse: f64,
    /// Mean keypoint distance after both warps, when keypoints are known.
    pub residual_keypoint_distance: Option<f64>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct ReportJson {
    s_hat: f64,
    sx: f64,
    sy: f64,
    t_hat: f64,
    tx: f64,
    ty: f64,
    theta_deg: f64,
    shear: f64,
    d_hat: f64,
    a_hat: f64,
    mse_baseline: f64,
    residual_kp: Option<f64>,
    provenance: Provenance,
}

impl DifferenceReport {
    pub fn to_json(&self) -> String {
        let m = &self.measures;
        serde_json::to_string_pretty(&ReportJson {
            s_hat: m.s_hat,
            sx: m.sx,
            sy: m.sy,
            t_hat: m.t_hat,
            tx: m.tx,
            ty: m.ty,
            theta_deg: m.theta_hat,
            shear: m.shear,
            d_hat: m.d_hat,
            a_hat: m.a_hat,
            mse_baseline: self.baseline_mse,
            residual_kp: self.residual_keypoint_distance,
            provenance: self.provenance,
        })
        .expect("report serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let r: ReportJson = serde_json::from_str(text).map_err(|e| e.to_string())?;
        Ok(DifferenceReport {
            measures: MeasureSet {
                s_hat: r.s_hat,
                t_hat: r.t_hat,
                theta_hat: r.theta_deg,
                d_hat: r.d_hat,
                a_hat: r.a_hat,
                sx: r.sx,
                sy: r.sy,
                tx: r.tx,
                ty: r.ty,
                shear: r.shear,
            },
            baseline_mse: r.mse_baseline,
            residual_keypoint_distance: r.residual_kp,
            provenance: r.provenance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// One-line human summary, e.g.
    /// `Align: ŝ=1.40, t̂=0.55, θ̂=10.0°; Deform: d̂=0.22; Subtract: â=0.03`.
    pub fn summary_line(&self) -> String {
        let m = &self.measures;
        format!(
            "Align: ŝ={}, t̂={}, θ̂={}°; Deform: d̂={}; Subtract: â={}",
            fixed(m.s_hat, 2),
            fixed(m.t_hat, 2),
            fixed(m.theta_hat, 1),
            fixed(m.d_hat, 2),
            fixed(m.a_hat, 2),
        )
    }
}

fn fixed(v: f64, digits: usize) -> String {
    let s = format!("{v:.digits$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.chars().all(|c| c == '0' || c == '.') => rest.to_string(),
        _ => s,
    }
}

/// Images from the intermediate stages.
#[derive(Debug, Clone)]
pub struct Intermediates {
    pub aligned: Image,
    pub aligned_mask: Mask,
    pub deformed: Image,
    pub deformed_mask: Mask,
    pub heatmap: Heatmap,
}

#[derive(Debug, Clone)]
pub struct Explanation {
    pub report: DifferenceReport,
    pub transforms: TransformParams,
    pub intermediates: Option<Intermediates>,
}

/// Sampling grid for the source after both stages: output pixel `q` reads
/// the source at `A⁻¹(tps⁻¹(q))`. Sampling the original source once avoids
/// blurring it twice.
fn composite_grid(
    affine: &AffineTransform,
    tps: &TpsTransform,
    width: usize,
    height: usize,
) -> Result<CoordGrid> {
    let inv = affine.inverse()?;
    Ok(identity_grid(width, height)?.map(|q| match tps.invert(q) {
        Some(y) => inv.apply(y),
        None => [f64::NAN; 2],
    }))
}

pub fn explain_pair(input: &PairInput, cfg: &PipelineConfig) -> Result<Explanation> {
    input.check()?;
    let (w, h) = (input.source.width(), input.source.height());

    // Align.
    let (affine, provenance) = match (&input.imported, &input.correspondences) {
        (Some(p), _) => (p.affine, Provenance::Imported),
        (None, Some(c)) => {
            let a = match &cfg.ransac {
                Some(r) => estimate_affine_ransac(c, r)?,
                None => estimate_affine(c)?,
            };
            (a, Provenance::Estimated)
        }
        (None, None) => unreachable!("checked above"),
    };
    affine.check_invertible()?;
    let pose = pose_measures(&affine)?;

    // Deform, on the affine-aligned frame.
    let tps = match (&input.imported, &input.correspondences) {
        (Some(p), _) => p.tps.clone(),
        (None, Some(c)) => estimate_tps(&c.map_sources(|p| affine.apply(p)), cfg.tps_lambda)?,
        (None, None) => unreachable!("checked above"),
    };
    let d_hat = deformation_magnitude(&tps, w, h)?;

    // Subtract.
    let grid = composite_grid(&affine, &tps, w, h)?;
    let deformed = warp(&input.source, &grid, cfg.fill)?;
    let deformed_mask = warp_mask(&input.source_mask, &grid)?;
    let a_hat = masked_mse(&deformed, &input.target, &deformed_mask)?;
    let baseline_mse = mse(&input.source, &input.target)?;

    let residual_keypoint_distance = match &input.correspondences {
        Some(c) if !c.is_empty() => Some(keypoint_distance(
            &c.map_sources(|p| tps.apply(affine.apply(p))),
        )?),
        _ => None,
    };

    let intermediates = if cfg.emit_intermediates {
        let agrid = inverse_affine_grid(&affine, w, h)?;
        Some(Intermediates {
            aligned: warp(&input.source, &agrid, cfg.fill)?,
            aligned_mask: warp_mask(&input.source_mask, &agrid)?,
            heatmap: error_heatmap(&deformed, &input.target, &deformed_mask)?,
            deformed,
            deformed_mask,
        })
    } else {
        None
    };

    Ok(Explanation {
        report: DifferenceReport {
            measures: MeasureSet::new(pose, d_hat, a_hat),
            baseline_mse,
            residual_keypoint_distance,
            provenance,
        },
        transforms: TransformParams { affine, tps },
        intermediates,
    })
}

/// What is left of the pose and shape differences after alignment,
/// diagnosed by re-estimating from the aligned correspondences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemovalDiagnostics {
    /// Affine re-estimated between affine-aligned source points and targets.
    pub residual_affine: AffineTransform,
    pub residual_pose: PoseMeasures,
    pub initial_keypoint_distance: f64,
    pub aligned_keypoint_distance: f64,
    pub deformed_keypoint_distance: f64,
}

pub fn removal_check(input: &PairInput, explanation: &Explanation) -> Result<RemovalDiagnostics> {
    let c = input.correspondences.as_ref().ok_or_else(|| {
        Error::InvalidArgument("removal check needs keypoint correspondences".into())
    })?;
    let TransformParams { affine, tps } = &explanation.transforms;
    let aligned = c.map_sources(|p| affine.apply(p));
    let residual_affine = estimate_affine(&aligned)?;
    Ok(RemovalDiagnostics {
        residual_affine,
        residual_pose: pose_measures(&residual_affine)?,
        initial_keypoint_distance: keypoint_distance(c)?,
        aligned_keypoint_distance: keypoint_distance(&aligned)?,
        deformed_keypoint_distance: keypoint_distance(&aligned.map_sources(|p| tps.apply(p)))?,
    })
}
