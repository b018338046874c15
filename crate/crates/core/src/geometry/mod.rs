//! Affine and thin-plate-spline transforms and the scalar measures derived
//! from them.

mod affine;
mod tps;

pub use affine::{
    affine_grid, decompose_affine, inverse_affine_grid, recompose_affine, AffineDecomposition,
    AffineTransform,
};
pub use tps::{
    deformation_magnitude, inverse_tps_grid, lattice_basis, tps_from_control_matrix,
    tps_from_control_points, tps_grid, TpsTransform, LATTICE, LATTICE_SIZE,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Pose measures read off the affine decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseMeasures {
    /// Area scaling factor `sx · sy`.
    pub s_hat: f64,
    /// `√(tx² + ty²) / 2`: translation as a proportion of the grid extent.
    pub t_hat: f64,
    pub theta_hat: f64,
    pub sx: f64,
    pub sy: f64,
    pub tx: f64,
    pub ty: f64,
    pub shear: f64,
}

pub fn pose_measures(t: &AffineTransform) -> Result<PoseMeasures> {
    let d = decompose_affine(t)?;
    Ok(PoseMeasures {
        s_hat: d.sx * d.sy,
        t_hat: d.tx.hypot(d.ty) / 2.0,
        theta_hat: d.theta_deg,
        sx: d.sx,
        sy: d.sy,
        tx: d.tx,
        ty: d.ty,
        shear: d.shear,
    })
}

/// The full set of disentangled measures for one source/target pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureSet {
    pub s_hat: f64,
    pub t_hat: f64,
    pub theta_hat: f64,
    pub d_hat: f64,
    pub a_hat: f64,
    pub sx: f64,
    pub sy: f64,
    pub tx: f64,
    pub ty: f64,
    pub shear: f64,
}

impl MeasureSet {
    pub fn new(pose: PoseMeasures, d_hat: f64, a_hat: f64) -> Self {
        MeasureSet {
            s_hat: pose.s_hat,
            t_hat: pose.t_hat,
            theta_hat: pose.theta_hat,
            d_hat,
            a_hat,
            sx: pose.sx,
            sy: pose.sy,
            tx: pose.tx,
            ty: pose.ty,
            shear: pose.shear,
        }
    }
}

/// Affine and TPS parameters as exchanged through transform files.
///
/// Both transforms map source coordinates forward into the target frame; the
/// TPS acts on the affine-aligned source.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformParams {
    pub affine: AffineTransform,
    pub tps: TpsTransform,
}

#[derive(Serialize, Deserialize)]
struct TransformFile {
    affine: [f64; 6],
    tps_control_points: [[f64; LATTICE_SIZE]; 2],
}

impl TransformParams {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&TransformFile {
            affine: self.affine.params(),
            tps_control_points: self.tps.control_matrix(),
        })
        .expect("transform parameters serialize")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let raw: TransformFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let affine = AffineTransform::from_params(raw.affine);
        affine.check_invertible().map_err(|e| e.to_string())?;
        let tps = tps_from_control_matrix(raw.tps_control_points).map_err(|e| e.to_string())?;
        Ok(TransformParams { affine, tps })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|m| Error::format(path, m))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}
