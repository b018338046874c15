use super::{Image, Mask, Rgb};
use crate::{Error, Result};

fn sq_err(a: Rgb, b: Rgb) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean squared error over the mask's foreground, averaged over channels too,
/// so the result lies in `[0, 1]`.
pub fn masked_mse(a: &Image, b: &Image, mask: &Mask) -> Result<f64> {
    a.same_dims(b)?;
    a.same_dims(mask)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for ((pa, pb), m) in a.pixels().iter().zip(b.pixels()).zip(mask.values()) {
        if *m {
            total += sq_err(*pa, *pb);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::DegenerateMask);
    }
    Ok(total / (3 * count) as f64)
}

/// Plain MSE over every pixel and channel.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.same_dims(b)?;
    let total: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(pa, pb)| sq_err(*pa, *pb))
        .sum();
    Ok(total / (3 * a.pixels().len()) as f64)
}

/// Per-pixel squared error, averaged over channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Renders through a black-red-yellow-white ramp. Values are divided by
    /// `scale` (the heatmap maximum when `None`) and clamped to `[0, 1]`.
    pub fn render(&self, scale: Option<f64>) -> Image {
        let scale = scale.unwrap_or_else(|| self.max());
        let pixels = self
            .values
            .iter()
            .map(|v| {
                let t = if scale > 0.0 {
                    (v / scale).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                ramp(t)
            })
            .collect();
        Image::from_pixels(self.width, self.height, pixels).expect("ramp output lies in [0, 1]")
    }
}

fn ramp(t: f64) -> Rgb {
    let r = (3.0 * t).min(1.0);
    let g = (3.0 * t - 1.0).clamp(0.0, 1.0);
    let b = (3.0 * t - 2.0).clamp(0.0, 1.0);
    [r, g, b]
}

/// Squared-error heatmap; pixels outside the mask are zero.
pub fn error_heatmap(a: &Image, b: &Image, mask: &Mask) -> Result<Heatmap> {
    a.same_dims(b)?;
    a.same_dims(mask)?;
    let values = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .zip(mask.values())
        .map(|((pa, pb), m)| if *m { sq_err(*pa, *pb) / 3.0 } else { 0.0 })
        .collect();
    Ok(Heatmap {
        width: a.width(),
        height: a.height(),
        values,
    })
}
