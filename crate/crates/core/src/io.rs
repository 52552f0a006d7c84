//! File formats: mask and map PNGs with JSON sidecars, latent files, and the
//! image/latent bridge used by the toy backend.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edit::{Latent, LatentDecodeError};
use crate::grid::{BinaryGrid, RealGrid};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Latent {
        path: PathBuf,
        source: LatentDecodeError,
    },
    #[error("{0}")]
    Format(String),
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs {
        path: path.to_path_buf(),
        source,
    }
}

fn img_err(path: &Path) -> impl FnOnce(image::ImageError) -> IoError + '_ {
    move |source| IoError::Image {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// Binarized attention mask `M`.
    Mask,
    /// Box gate `G`.
    Gate,
    /// Gated mask `M'`.
    Gated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSidecar {
    pub h: usize,
    pub w: usize,
    pub kind: MaskKind,
    /// Binarization threshold; absent for gates.
    pub threshold: Option<f64>,
}

pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

/// Writes a binary grid as an 8-bit PNG (0 / 255) plus a JSON sidecar.
pub fn write_binary_mask(
    path: &Path,
    bits: &BinaryGrid,
    sidecar: &MaskSidecar,
) -> Result<(), IoError> {
    let (h, w) = bits.dims();
    if (h, w) != (sidecar.h, sidecar.w) {
        return Err(IoError::Format(format!(
            "sidecar dims {}x{} differ from mask {h}x{w}",
            sidecar.h, sidecar.w
        )));
    }
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([if bits.get(y as usize, x as usize) {
            255
        } else {
            0
        }])
    });
    img.save(path).map_err(img_err(path))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    fs::write(&side, json).map_err(fs_err(&side))
}

/// Reads a mask written by [`write_binary_mask`]; any nonzero pixel is set.
pub fn read_binary_mask(path: &Path) -> Result<(BinaryGrid, MaskSidecar), IoError> {
    let img = image::open(path).map_err(img_err(path))?.into_luma8();
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(fs_err(&side))?;
    let sidecar: MaskSidecar = serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: side.clone(),
        source,
    })?;
    let (w, h) = img.dimensions();
    if (h as usize, w as usize) != (sidecar.h, sidecar.w) {
        return Err(IoError::Format(format!(
            "{}: sidecar dims mismatch",
            path.display()
        )));
    }
    let bits = BinaryGrid::from_fn(h as usize, w as usize, |r, c| {
        img.get_pixel(c as u32, r as u32)[0] != 0
    });
    Ok((bits, sidecar))
}

/// Writes a real-valued map as grayscale, min-max stretched to 0..255.
/// A constant map is written as all zeros.
pub fn write_real_map(path: &Path, map: &RealGrid) -> Result<(), IoError> {
    let norm = map.normalized();
    let img = GrayImage::from_fn(map.width() as u32, map.height() as u32, |x, y| {
        let v = norm.as_ref().map_or(0.0, |n| n.get(y as usize, x as usize));
        Luma([(v * 255.0).round().clamp(0.0, 255.0) as u8])
    });
    img.save(path).map_err(img_err(path))
}

/// RGB image to a 3-channel latent with values `p / 255`.
pub fn image_to_latent(img: &RgbImage) -> Latent {
    let (w, h) = img.dimensions();
    Latent::from_fn(3, h as usize, w as usize, |ch, r, c| {
        img.get_pixel(c as u32, r as u32)[ch] as f64 / 255.0
    })
}

/// Inverse of [`image_to_latent`], clamping to `[0, 1]` and rounding.
pub fn latent_to_image(z: &Latent) -> Result<RgbImage, IoError> {
    let (c, h, w) = z.shape();
    if c != 3 {
        return Err(IoError::Format(format!(
            "expected 3 latent channels, found {c}"
        )));
    }
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (r, col) = (y as usize, x as usize);
        Rgb([
            q(z.get(0, r, col)),
            q(z.get(1, r, col)),
            q(z.get(2, r, col)),
        ])
    }))
}

pub fn read_rgb(path: &Path) -> Result<RgbImage, IoError> {
    Ok(image::open(path).map_err(img_err(path))?.into_rgb8())
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<(), IoError> {
    img.save(path).map_err(img_err(path))
}

pub fn write_latent(path: &Path, z: &Latent) -> Result<(), IoError> {
    fs::write(path, z.to_bytes()).map_err(fs_err(path))
}

pub fn read_latent(path: &Path) -> Result<Latent, IoError> {
    let bytes = fs::read(path).map_err(fs_err(path))?;
    Latent::from_bytes(&bytes).map_err(|source| IoError::Latent {
        path: path.to_path_buf(),
        source,
    })
}
