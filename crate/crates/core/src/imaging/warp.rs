use super::{norm_to_pixel, CoordGrid, Image, Mask, Rgb};
use crate::{Point, Result};

/// Pixel positions within this distance of an integer are snapped onto it so
/// that sampling at pixel centres is exact.
const SNAP: f64 = 1e-9;

struct Taps {
    i0: usize,
    i1: usize,
    fx: f64,
    j0: usize,
    j1: usize,
    fy: f64,
}

fn axis_taps(coord: f64, extent: usize) -> (usize, usize, f64) {
    let mut u = norm_to_pixel(coord, extent);
    let r = u.round();
    if (u - r).abs() < SNAP {
        u = r;
    }
    // Samples in the outer half-pixel band replicate the edge pixel.
    let u = u.clamp(0.0, (extent - 1) as f64);
    let i0 = (u.floor() as usize).min(extent - 1);
    let i1 = (i0 + 1).min(extent - 1);
    (i0, i1, u - i0 as f64)
}

fn taps(p: Point, width: usize, height: usize) -> Option<Taps> {
    let [x, y] = p;
    if !(-1.0..=1.0).contains(&x) || !(-1.0..=1.0).contains(&y) {
        return None;
    }
    let (i0, i1, fx) = axis_taps(x, width);
    let (j0, j1, fy) = axis_taps(y, height);
    Some(Taps {
        i0,
        i1,
        fx,
        j0,
        j1,
        fy,
    })
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a * (1.0 - t) + b * t
    }
}

/// Bilinear sample of `image` at a normalized coordinate; `None` outside
/// `[-1, 1]²`.
pub fn sample_bilinear(image: &Image, p: Point) -> Option<Rgb> {
    let t = taps(p, image.width(), image.height())?;
    let c00 = image.get(t.i0, t.j0);
    let c10 = image.get(t.i1, t.j0);
    let c01 = image.get(t.i0, t.j1);
    let c11 = image.get(t.i1, t.j1);
    let mut out = [0.0; 3];
    for (ch, o) in out.iter_mut().enumerate() {
        let top = lerp(c00[ch], c10[ch], t.fx);
        let bottom = lerp(c01[ch], c11[ch], t.fx);
        *o = lerp(top, bottom, t.fy).clamp(0.0, 1.0);
    }
    Some(out)
}

fn sample_mask(mask: &Mask, p: Point) -> f64 {
    let Some(t) = taps(p, mask.width(), mask.height()) else {
        return 0.0;
    };
    let v = |c, r| if mask.get(c, r) { 1.0 } else { 0.0 };
    let top = lerp(v(t.i0, t.j0), v(t.i1, t.j0), t.fx);
    let bottom = lerp(v(t.i0, t.j1), v(t.i1, t.j1), t.fx);
    lerp(top, bottom, t.fy)
}

/// Inverse warp: output pixel `k` takes the bilinear sample of `image` at
/// `grid.points()[k]`, or `fill` when that coordinate leaves `[-1, 1]²`.
pub fn warp(image: &Image, grid: &CoordGrid, fill: Rgb) -> Result<Image> {
    image.same_dims(grid)?;
    let pixels = grid
        .points()
        .iter()
        .map(|p| sample_bilinear(image, *p).unwrap_or(fill))
        .collect();
    Image::from_pixels(image.width(), image.height(), pixels)
}

/// Inverse warp of a binary mask: bilinear sample thresholded at 0.5,
/// out-of-bounds samples are background.
pub fn warp_mask(mask: &Mask, grid: &CoordGrid) -> Result<Mask> {
    if mask.width() != grid.width() || mask.height() != grid.height() {
        return Err(crate::Error::InvalidArgument(format!(
            "dimension mismatch: mask {}x{} vs grid {}x{}",
            mask.width(),
            mask.height(),
            grid.width(),
            grid.height()
        )));
    }
    let values = grid
        .points()
        .iter()
        .map(|p| sample_mask(mask, *p) >= 0.5)
        .collect();
    Mask::from_values(mask.width(), mask.height(), values)
}
