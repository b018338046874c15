//! Rasters, normalized coordinate grids, inverse warping and masked errors.
//!
//! All grids use the pixel-centre convention on `[-1, 1]²`: pixel
//! `(col, row)` sits at `x = -1 + 2 (col + 0.5) / width` and
//! `y = -1 + 2 (row + 0.5) / height`, with `y` growing downwards.

mod error_map;
mod io;
mod warp;

pub use error_map::{error_heatmap, masked_mse, mse, Heatmap};
pub use io::{read_image, read_mask, write_image, write_mask, write_png_rgb};
pub use warp::{sample_bilinear, warp, warp_mask};

use crate::{Error, Point, Result};

pub type Rgb = [f64; 3];

pub const BLACK: Rgb = [0.0, 0.0, 0.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Image {
    /// Builds an image from row-major pixels. Channels must lie in `[0, 1]`.
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        check_dims(width, height)?;
        if pixels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{} pixels supplied for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "channel value {bad} outside [0, 1]"
            )));
        }
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, color: Rgb) -> Result<Self> {
        Self::from_pixels(width, height, vec![color; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> Rgb,
    ) -> Result<Self> {
        check_dims(width, height)?;
        let mut pixels = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                pixels.push(f(col, row));
            }
        }
        Self::from_pixels(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn get(&self, col: usize, row: usize) -> Rgb {
        self.pixels[row * self.width + col]
    }

    /// Rounds every channel to the nearest multiple of 1/255, as an 8-bit
    /// round trip through disk would.
    pub fn quantized(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .map(|p| p.map(|v| f64::from(to_u8(v)) / 255.0))
                .collect(),
        }
    }

    pub(crate) fn same_dims<T: Dims>(&self, other: &T) -> Result<()> {
        if self.width != other.dims().0 || self.height != other.dims().1 {
            return Err(Error::InvalidArgument(format!(
                "dimension mismatch: {}x{} vs {}x{}",
                self.width,
                self.height,
                other.dims().0,
                other.dims().1
            )));
        }
        Ok(())
    }
}

/// Binary object mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    values: Vec<bool>,
}

impl Mask {
    pub fn from_values(width: usize, height: usize, values: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        if values.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{} mask values supplied for a {width}x{height} mask",
                values.len()
            )));
        }
        Ok(Mask {
            width,
            height,
            values,
        })
    }

    pub fn full(width: usize, height: usize) -> Result<Self> {
        Self::from_values(width, height, vec![true; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        check_dims(width, height)?;
        let mut values = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                values.push(f(col, row));
            }
        }
        Self::from_values(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn get(&self, col: usize, row: usize) -> bool {
        self.values[row * self.width + col]
    }

    pub fn foreground_count(&self) -> usize {
        self.values.iter().filter(|v| **v).count()
    }
}

/// One normalized coordinate per output pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    width: usize,
    height: usize,
    points: Vec<Point>,
}

impl CoordGrid {
    pub fn from_points(width: usize, height: usize, points: Vec<Point>) -> Result<Self> {
        check_dims(width, height)?;
        if points.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{} grid points supplied for a {width}x{height} grid",
                points.len()
            )));
        }
        Ok(CoordGrid {
            width,
            height,
            points,
        })
    }

    /// Applies `f` to every coordinate of this grid.
    pub fn map(&self, f: impl Fn(Point) -> Point) -> CoordGrid {
        CoordGrid {
            width: self.width,
            height: self.height,
            points: self.points.iter().map(|p| f(*p)).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// The identity grid: pixel centres in normalized coordinates.
pub fn identity_grid(width: usize, height: usize) -> Result<CoordGrid> {
    check_dims(width, height)?;
    let mut points = Vec::with_capacity(width * height);
    for row in 0..height {
        let y = pixel_to_norm(row as f64, height);
        for col in 0..width {
            points.push([pixel_to_norm(col as f64, width), y]);
        }
    }
    CoordGrid::from_points(width, height, points)
}

/// Normalized coordinate of a (possibly fractional) pixel index.
pub fn pixel_to_norm(index: f64, extent: usize) -> f64 {
    -1.0 + 2.0 * (index + 0.5) / extent as f64
}

/// Inverse of [`pixel_to_norm`].
pub fn norm_to_pixel(coord: f64, extent: usize) -> f64 {
    (coord + 1.0) * extent as f64 / 2.0 - 0.5
}

pub(crate) trait Dims {
    fn dims(&self) -> (usize, usize);
}

impl Dims for Image {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl Dims for Mask {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl Dims for CoordGrid {
    fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "image dimensions must be positive, got {width}x{height}"
        )));
    }
    Ok(())
}

pub(crate) fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_grid_single_pixel_is_centre() {
        let g = identity_grid(1, 1).unwrap();
        assert_eq!(g.points(), &[[0.0, 0.0]]);
    }

    #[test]
    fn identity_grid_two_by_two() {
        let g = identity_grid(2, 2).unwrap();
        assert_eq!(
            g.points(),
            &[[-0.5, -0.5], [0.5, -0.5], [-0.5, 0.5], [0.5, 0.5]]
        );
    }

    #[test]
    fn identity_grid_four_by_two_x_values() {
        let g = identity_grid(4, 2).unwrap();
        let xs: Vec<f64> = g.points()[..4].iter().map(|p| p[0]).collect();
        assert_eq!(xs, vec![-0.75, -0.25, 0.25, 0.75]);
        assert_eq!(g.points()[0][1], -0.5);
        assert_eq!(g.points()[4][1], 0.5);
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(
            identity_grid(0, 3),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            identity_grid(3, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn out_of_range_channel_is_rejected() {
        assert!(Image::from_pixels(1, 1, vec![[0.0, 1.5, 0.0]]).is_err());
        assert!(Image::from_pixels(1, 1, vec![[0.0, -0.1, 0.0]]).is_err());
        assert!(Image::from_pixels(2, 1, vec![[0.0; 3]]).is_err());
    }

    #[test]
    fn pixel_norm_round_trip() {
        for i in 0..17 {
            let x = pixel_to_norm(i as f64, 17);
            assert!((norm_to_pixel(x, 17) - i as f64).abs() < 1e-12);
        }
    }
}
