use serde::{Deserialize, Serialize};

use crate::imaging::{identity_grid, CoordGrid};
use crate::{Error, Point, Result};

/// Determinants with smaller magnitude are treated as singular.
const SINGULAR_DET: f64 = 1e-12;

/// `p ↦ [[r11, r12], [r21, r22]] p + [tx, ty]` in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub r11: f64,
    pub r12: f64,
    pub r21: f64,
    pub r22: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        r11: 1.0,
        r12: 0.0,
        r21: 0.0,
        r22: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    /// From `[r11, r12, r21, r22, tx, ty]`.
    pub fn from_params(p: [f64; 6]) -> Self {
        AffineTransform {
            r11: p[0],
            r12: p[1],
            r21: p[2],
            r22: p[3],
            tx: p[4],
            ty: p[5],
        }
    }

    pub fn params(&self) -> [f64; 6] {
        [self.r11, self.r12, self.r21, self.r22, self.tx, self.ty]
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        AffineTransform {
            tx,
            ty,
            ..Self::IDENTITY
        }
    }

    /// Rotation by `deg` degrees (counter-clockwise in a y-up frame, which is
    /// clockwise on screen since image rows grow downwards).
    pub fn rotation_deg(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        AffineTransform {
            r11: c,
            r12: -s,
            r21: s,
            r22: c,
            tx: 0.0,
            ty: 0.0,
        }
    }

    pub fn scale(sx: f64, sy: f64) -> Self {
        AffineTransform {
            r11: sx,
            r22: sy,
            ..Self::IDENTITY
        }
    }

    pub fn det(&self) -> f64 {
        self.r11 * self.r22 - self.r12 * self.r21
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }

    pub fn check_invertible(&self) -> Result<()> {
        let det = self.det();
        if !self.is_finite() || det.abs() < SINGULAR_DET {
            return Err(Error::SingularTransform { det });
        }
        Ok(())
    }

    pub fn apply(&self, [x, y]: Point) -> Point {
        [
            self.r11 * x + self.r12 * y + self.tx,
            self.r21 * x + self.r22 * y + self.ty,
        ]
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &AffineTransform) -> AffineTransform {
        AffineTransform {
            r11: self.r11 * other.r11 + self.r12 * other.r21,
            r12: self.r11 * other.r12 + self.r12 * other.r22,
            r21: self.r21 * other.r11 + self.r22 * other.r21,
            r22: self.r21 * other.r12 + self.r22 * other.r22,
            tx: self.r11 * other.tx + self.r12 * other.ty + self.tx,
            ty: self.r21 * other.tx + self.r22 * other.ty + self.ty,
        }
    }

    pub fn inverse(&self) -> Result<AffineTransform> {
        self.check_invertible()?;
        let det = self.det();
        let (i11, i12, i21, i22) = (
            self.r22 / det,
            -self.r12 / det,
            -self.r21 / det,
            self.r11 / det,
        );
        Ok(AffineTransform {
            r11: i11,
            r12: i12,
            r21: i21,
            r22: i22,
            tx: -(i11 * self.tx + i12 * self.ty),
            ty: -(i21 * self.tx + i22 * self.ty),
        })
    }

    /// Frobenius norm of the parameter difference (linear part and
    /// translation together).
    pub fn distance(&self, other: &AffineTransform) -> f64 {
        self.params()
            .iter()
            .zip(other.params())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Rotation · shear · scale factorization of the linear part, plus the
/// translation carried through unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineDecomposition {
    /// Degrees in `(-180, 180]`.
    pub theta_deg: f64,
    pub shear: f64,
    pub sx: f64,
    /// Negative for reflections.
    pub sy: f64,
    pub tx: f64,
    pub ty: f64,
}

impl AffineDecomposition {
    pub const IDENTITY: AffineDecomposition = AffineDecomposition {
        theta_deg: 0.0,
        shear: 0.0,
        sx: 1.0,
        sy: 1.0,
        tx: 0.0,
        ty: 0.0,
    };
}

/// Closed-form factorization `[[r11, r12], [r21, r22]] = Rot(θ) Shear(b) Scale(sx, sy)`
/// with `sx > 0`.
pub fn decompose_affine(t: &AffineTransform) -> Result<AffineDecomposition> {
    t.check_invertible()?;
    let theta = t.r21.atan2(t.r11);
    let (s, c) = theta.sin_cos();
    let sx = t.r11.hypot(t.r21);
    let sy = -s * t.r12 + c * t.r22;
    let shear = (c * t.r12 + s * t.r22) / sy;
    let mut theta_deg = theta.to_degrees();
    if theta_deg <= -180.0 {
        theta_deg += 360.0;
    }
    Ok(AffineDecomposition {
        theta_deg,
        shear,
        sx,
        sy,
        tx: t.tx,
        ty: t.ty,
    })
}

pub fn recompose_affine(d: &AffineDecomposition) -> Result<AffineTransform> {
    if !(d.sx > 0.0) || d.sy == 0.0 || !d.sy.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "recomposition needs sx > 0 and sy != 0, got sx={} sy={}",
            d.sx, d.sy
        )));
    }
    let (s, c) = d.theta_deg.to_radians().sin_cos();
    // Rot · [[sx, b sy], [0, sy]]
    Ok(AffineTransform {
        r11: c * d.sx,
        r12: c * d.shear * d.sy - s * d.sy,
        r21: s * d.sx,
        r22: s * d.shear * d.sy + c * d.sy,
        tx: d.tx,
        ty: d.ty,
    })
}

/// Forward grid: every identity-grid coordinate mapped through `t`.
pub fn affine_grid(t: &AffineTransform, width: usize, height: usize) -> Result<CoordGrid> {
    t.check_invertible()?;
    Ok(identity_grid(width, height)?.map(|p| t.apply(p)))
}

/// Sampling grid that moves image content by `t`: output pixel `q` samples
/// the input at `t⁻¹(q)`.
pub fn inverse_affine_grid(t: &AffineTransform, width: usize, height: usize) -> Result<CoordGrid> {
    let inv = t.inverse()?;
    Ok(identity_grid(width, height)?.map(|p| inv.apply(p)))
}
