//! PPM/PGM (binary netpbm) and PNG reading and writing.
//!
//! Format is chosen by file extension: `.ppm`/`.pgm` use the netpbm codecs
//! below, `.png` goes through the `image` crate. Mask files are thresholded
//! at 128.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};

use super::{to_u8, Image, Mask};
use crate::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Netpbm,
    Png,
}

fn kind_of(path: &Path) -> Result<Kind> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("ppm") | Some("pgm") | Some("pnm") => Ok(Kind::Netpbm),
        Some("png") => Ok(Kind::Png),
        _ => Err(Error::format(
            path,
            "unsupported extension (expected .ppm, .pgm or .png)",
        )),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses a binary netpbm header, returning (magic, width, height, offset of
/// the first raster byte).
fn parse_netpbm_header(bytes: &[u8]) -> std::result::Result<(String, usize, usize, usize), String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // Exactly one whitespace byte separates maxval from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing raster".into());
    }
    pos += 1;
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| format!("bad header field {s:?}"))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(format!("only 8-bit netpbm is supported (maxval {maxval})"));
    }
    Ok((fields[0].clone(), w, h, pos))
}

fn decode_ppm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let (magic, w, h, off) = parse_netpbm_header(bytes).map_err(|m| Error::format(path, m))?;
    if magic != "P6" {
        return Err(Error::format(path, format!("expected P6, found {magic}")));
    }
    let raster = &bytes[off..];
    if raster.len() < w * h * 3 {
        return Err(Error::format(path, "raster shorter than header declares"));
    }
    let pixels = raster[..w * h * 3]
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]].map(|v| f64::from(v) / 255.0))
        .collect();
    Image::from_pixels(w, h, pixels)
}

fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<Mask> {
    let (magic, w, h, off) = parse_netpbm_header(bytes).map_err(|m| Error::format(path, m))?;
    if magic != "P5" {
        return Err(Error::format(path, format!("expected P5, found {magic}")));
    }
    let raster = &bytes[off..];
    if raster.len() < w * h {
        return Err(Error::format(path, "raster shorter than header declares"));
    }
    Mask::from_values(w, h, raster[..w * h].iter().map(|v| *v >= 128).collect())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    match kind_of(path)? {
        Kind::Netpbm => decode_ppm(path, &read_bytes(path)?),
        Kind::Png => {
            let img = image::load_from_memory_with_format(&read_bytes(path)?, ImageFormat::Png)
                .map_err(|e| Error::format(path, e.to_string()))?
                .to_rgb8();
            let pixels = img
                .pixels()
                .map(|p| p.0.map(|v| f64::from(v) / 255.0))
                .collect();
            Image::from_pixels(img.width() as usize, img.height() as usize, pixels)
        }
    }
}

/// Writes an 8-bit image; channels are rounded to the nearest 1/255.
pub fn write_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    let raster: Vec<u8> = image.pixels().iter().flat_map(|p| p.map(to_u8)).collect();
    match kind_of(path)? {
        Kind::Netpbm => {
            let mut bytes = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
            bytes.extend_from_slice(&raster);
            write_bytes(path, &bytes)
        }
        Kind::Png => {
            let buf = RgbImage::from_raw(image.width() as u32, image.height() as u32, raster)
                .expect("raster length matches dimensions");
            buf.save_with_format(path, ImageFormat::Png)
                .map_err(|e| Error::format(path, e.to_string()))
        }
    }
}

/// Writes an image as PNG regardless of extension.
pub fn write_png_rgb(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    let raster: Vec<u8> = image.pixels().iter().flat_map(|p| p.map(to_u8)).collect();
    RgbImage::from_raw(image.width() as u32, image.height() as u32, raster)
        .expect("raster length matches dimensions")
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    match kind_of(path)? {
        Kind::Netpbm => decode_pgm(path, &read_bytes(path)?),
        Kind::Png => {
            let img = image::load_from_memory_with_format(&read_bytes(path)?, ImageFormat::Png)
                .map_err(|e| Error::format(path, e.to_string()))?
                .to_luma8();
            Mask::from_values(
                img.width() as usize,
                img.height() as usize,
                img.pixels().map(|p| p.0[0] >= 128).collect(),
            )
        }
    }
}

/// Writes a mask as 0/255 grayscale.
pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let path = path.as_ref();
    let raster: Vec<u8> = mask
        .values()
        .iter()
        .map(|v| if *v { 255 } else { 0 })
        .collect();
    match kind_of(path)? {
        Kind::Netpbm => {
            let mut bytes = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
            bytes.extend_from_slice(&raster);
            write_bytes(path, &bytes)
        }
        Kind::Png => GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raster)
            .expect("raster length matches dimensions")
            .save_with_format(path, ImageFormat::Png)
            .map_err(|e| Error::format(path, e.to_string())),
    }
}
