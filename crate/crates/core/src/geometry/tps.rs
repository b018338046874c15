//! Thin-plate spline on the canonical 3×3 lattice `{-1, 0, 1}²`.
//!
//! The spline maps lattice node `j` to control point `j` and is defined by
//! `f(p) = a₀ + a₁ x + a₂ y + Σⱼ wⱼ U(‖p − ℓⱼ‖)` per output axis, with
//! `U(r) = r² ln r²` and the usual side conditions on `w`.

use std::sync::OnceLock;

use nalgebra::{SMatrix, SVector};

use crate::imaging::{identity_grid, CoordGrid};
use crate::{Error, Point, Result};

pub const LATTICE_SIZE: usize = 9;
const SYSTEM: usize = LATTICE_SIZE + 3;

type SystemMatrix = SMatrix<f64, SYSTEM, SYSTEM>;
type SystemVector = SVector<f64, SYSTEM>;

/// Lattice node `j = 3 * row + col` sits at `(col - 1, row - 1)`.
pub const LATTICE: [Point; LATTICE_SIZE] = [
    [-1.0, -1.0],
    [0.0, -1.0],
    [1.0, -1.0],
    [-1.0, 0.0],
    [0.0, 0.0],
    [1.0, 0.0],
    [-1.0, 1.0],
    [0.0, 1.0],
    [1.0, 1.0],
];

/// Radial kernel as a function of the squared distance.
fn kernel(r2: f64) -> f64 {
    if r2 == 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

/// `dU/dr² `, used for the Jacobian (`∂U/∂x = 2 dx · dU/dr²`).
fn kernel_slope(r2: f64) -> f64 {
    if r2 == 0.0 {
        0.0
    } else {
        r2.ln() + 1.0
    }
}

fn system_inverse() -> &'static SystemMatrix {
    static INV: OnceLock<SystemMatrix> = OnceLock::new();
    INV.get_or_init(|| {
        let mut m = SystemMatrix::zeros();
        for (i, li) in LATTICE.iter().enumerate() {
            for (j, lj) in LATTICE.iter().enumerate() {
                let d2 = (li[0] - lj[0]).powi(2) + (li[1] - lj[1]).powi(2);
                m[(i, j)] = kernel(d2);
            }
            let poly = [1.0, li[0], li[1]];
            for (k, v) in poly.iter().enumerate() {
                m[(i, LATTICE_SIZE + k)] = *v;
                m[(LATTICE_SIZE + k, i)] = *v;
            }
        }
        m.try_inverse()
            .expect("the canonical lattice interpolation system is nonsingular")
    })
}

fn basis_row(p: Point) -> SystemVector {
    let mut b = SystemVector::zeros();
    for (j, l) in LATTICE.iter().enumerate() {
        b[j] = kernel((p[0] - l[0]).powi(2) + (p[1] - l[1]).powi(2));
    }
    b[LATTICE_SIZE] = 1.0;
    b[LATTICE_SIZE + 1] = p[0];
    b[LATTICE_SIZE + 2] = p[1];
    b
}

/// Cardinal weights: `tps(p) = Σⱼ L_j(p) · control_j` for any control points.
/// The interpolant is linear in its node values, so these weights depend only
/// on `p`.
pub fn lattice_basis(p: Point) -> [f64; LATTICE_SIZE] {
    // The system matrix is symmetric, so row `p` of B·M⁻¹ is M⁻¹·b(p).
    let coeffs = system_inverse() * basis_row(p);
    let mut out = [0.0; LATTICE_SIZE];
    out.copy_from_slice(&coeffs.as_slice()[..LATTICE_SIZE]);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpsTransform {
    control_points: [Point; LATTICE_SIZE],
    /// Kernel weights, one `[wx, wy]` pair per lattice node.
    kernel_weights: [[f64; 2]; LATTICE_SIZE],
    /// `[a0, a1, a2]` per axis, of the displacement `f(p) − p`.
    displacement_affine: [[f64; 3]; 2],
}

impl TpsTransform {
    pub fn identity() -> Self {
        tps_from_control_points(LATTICE).expect("lattice is a valid control set")
    }

    pub fn control_points(&self) -> &[Point; LATTICE_SIZE] {
        &self.control_points
    }

    pub fn kernel_weights(&self) -> &[[f64; 2]; LATTICE_SIZE] {
        &self.kernel_weights
    }

    /// `[a0, a1, a2]` per axis of the polynomial part of the spline.
    pub fn affine_part(&self) -> [[f64; 3]; 2] {
        let [dx, dy] = self.displacement_affine;
        [[dx[0], 1.0 + dx[1], dx[2]], [dy[0], dy[1], 1.0 + dy[2]]]
    }

    /// Control points as `[[x0..x8], [y0..y8]]`.
    pub fn control_matrix(&self) -> [[f64; LATTICE_SIZE]; 2] {
        let mut m = [[0.0; LATTICE_SIZE]; 2];
        for (j, p) in self.control_points.iter().enumerate() {
            m[0][j] = p[0];
            m[1][j] = p[1];
        }
        m
    }

    /// `f(p) − p`. Exactly zero for the identity spline.
    pub fn displacement(&self, p: Point) -> Point {
        let mut out = [0.0; 2];
        for (axis, o) in out.iter_mut().enumerate() {
            let a = self.displacement_affine[axis];
            *o = a[0] + a[1] * p[0] + a[2] * p[1];
        }
        for (l, w) in LATTICE.iter().zip(&self.kernel_weights) {
            let u = kernel((p[0] - l[0]).powi(2) + (p[1] - l[1]).powi(2));
            out[0] += w[0] * u;
            out[1] += w[1] * u;
        }
        out
    }

    pub fn apply(&self, p: Point) -> Point {
        let d = self.displacement(p);
        [p[0] + d[0], p[1] + d[1]]
    }

    /// Jacobian `[[∂fx/∂x, ∂fx/∂y], [∂fy/∂x, ∂fy/∂y]]`.
    pub fn jacobian(&self, p: Point) -> [[f64; 2]; 2] {
        let a = self.affine_part();
        let mut j = [[a[0][1], a[0][2]], [a[1][1], a[1][2]]];
        for (l, w) in LATTICE.iter().zip(&self.kernel_weights) {
            let (dx, dy) = (p[0] - l[0], p[1] - l[1]);
            let slope = kernel_slope(dx * dx + dy * dy);
            let (gx, gy) = (2.0 * dx * slope, 2.0 * dy * slope);
            j[0][0] += w[0] * gx;
            j[0][1] += w[0] * gy;
            j[1][0] += w[1] * gx;
            j[1][1] += w[1] * gy;
        }
        j
    }

    /// Solves `apply(p) = q` by Newton iteration started at `q`. Returns
    /// `None` when the iteration does not converge (folded warps).
    pub fn invert(&self, q: Point) -> Option<Point> {
        let mut p = q;
        for _ in 0..50 {
            let f = self.apply(p);
            let (rx, ry) = (f[0] - q[0], f[1] - q[1]);
            if rx.abs() < 1e-12 && ry.abs() < 1e-12 {
                return Some(p);
            }
            let j = self.jacobian(p);
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if !det.is_finite() || det.abs() < 1e-12 {
                return None;
            }
            p[0] -= (j[1][1] * rx - j[0][1] * ry) / det;
            p[1] -= (-j[1][0] * rx + j[0][0] * ry) / det;
        }
        let f = self.apply(p);
        ((f[0] - q[0]).abs() < 1e-9 && (f[1] - q[1]).abs() < 1e-9).then_some(p)
    }

    /// Largest violation of `Σw = 0, Σw·x = 0, Σw·y = 0` over both axes.
    pub fn side_condition_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for axis in 0..2 {
            let (mut s, mut sx, mut sy) = (0.0, 0.0, 0.0);
            for (l, w) in LATTICE.iter().zip(&self.kernel_weights) {
                s += w[axis];
                sx += w[axis] * l[0];
                sy += w[axis] * l[1];
            }
            worst = worst.max(s.abs()).max(sx.abs()).max(sy.abs());
        }
        worst
    }
}

/// Solves the interpolating spline that sends lattice node `j` to
/// `control_points[j]`. The system is solved for the displacements
/// `control_points[j] − ℓⱼ`, so lattice controls give an exact identity.
pub fn tps_from_control_points(control_points: [Point; LATTICE_SIZE]) -> Result<TpsTransform> {
    if let Some(bad) = control_points.iter().flatten().find(|v| !v.is_finite()) {
        return Err(Error::DegenerateControlPoints(format!(
            "non-finite coordinate {bad}"
        )));
    }
    let inv = system_inverse();
    let mut kernel_weights = [[0.0; 2]; LATTICE_SIZE];
    let mut displacement_affine = [[0.0; 3]; 2];
    for axis in 0..2 {
        let mut rhs = SystemVector::zeros();
        for (j, (c, l)) in control_points.iter().zip(LATTICE.iter()).enumerate() {
            rhs[j] = c[axis] - l[axis];
        }
        let sol = inv * rhs;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateControlPoints(
                "interpolation system produced non-finite coefficients".into(),
            ));
        }
        for (j, w) in kernel_weights.iter_mut().enumerate() {
            w[axis] = sol[j];
        }
        displacement_affine[axis] = [
            sol[LATTICE_SIZE],
            sol[LATTICE_SIZE + 1],
            sol[LATTICE_SIZE + 2],
        ];
    }
    Ok(TpsTransform {
        control_points,
        kernel_weights,
        displacement_affine,
    })
}

/// From the `[[x0..x8], [y0..y8]]` layout used in transform files.
pub fn tps_from_control_matrix(m: [[f64; LATTICE_SIZE]; 2]) -> Result<TpsTransform> {
    let mut pts = [[0.0; 2]; LATTICE_SIZE];
    for (j, p) in pts.iter_mut().enumerate() {
        *p = [m[0][j], m[1][j]];
    }
    tps_from_control_points(pts)
}

/// Forward grid: the spline evaluated at every identity-grid coordinate.
pub fn tps_grid(t: &TpsTransform, width: usize, height: usize) -> Result<CoordGrid> {
    Ok(identity_grid(width, height)?.map(|p| t.apply(p)))
}

/// Sampling grid that moves image content along the spline: output pixel `q`
/// samples the input at `t⁻¹(q)`. Points where the inversion fails are
/// marked out of bounds.
pub fn inverse_tps_grid(t: &TpsTransform, width: usize, height: usize) -> Result<CoordGrid> {
    Ok(identity_grid(width, height)?.map(|q| t.invert(q).unwrap_or([f64::NAN; 2])))
}

/// Mean displacement of the warped identity grid, divided by the grid
/// diagonal `2√2`.
pub fn deformation_magnitude(t: &TpsTransform, width: usize, height: usize) -> Result<f64> {
    let grid = identity_grid(width, height)?;
    let total: f64 = grid
        .points()
        .iter()
        .map(|g| {
            let d = t.displacement(*g);
            d[0].hypot(d[1])
        })
        .sum();
    Ok(total / (2.0 * std::f64::consts::SQRT_2 * grid.len() as f64))
}
