//! Fidelity metrics restricted to background pixels, i.e. pixels outside
//! every detection box.

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::grid::BinaryGrid;
use crate::protocol::PixelBox;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DYNAMIC_RANGE: f64 = 255.0;

/// Pixels outside every excluded box; `true` marks background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackgroundMask {
    bits: BinaryGrid,
}

impl BackgroundMask {
    pub fn full(width: u32, height: u32) -> Self {
        Self {
            bits: BinaryGrid::ones(height as usize, width as usize),
        }
    }

    pub fn width(&self) -> u32 {
        self.bits.width() as u32
    }

    pub fn height(&self) -> u32 {
        self.bits.height() as u32
    }

    pub fn is_background(&self, x: u32, y: u32) -> bool {
        self.bits.get(y as usize, x as usize)
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones()
    }

    pub fn bits(&self) -> &BinaryGrid {
        &self.bits
    }
}

/// Background is every pixel whose center lies in none of `boxes`.
pub fn background_mask(
    image_w: u32,
    image_h: u32,
    boxes: &[PixelBox],
) -> Result<BackgroundMask, EvalError> {
    if let Some(b) = boxes.iter().find(|b| !b.within(image_w, image_h)) {
        return Err(EvalError::InvalidInput(format!(
            "box {b:?} outside {image_w}x{image_h} image"
        )));
    }
    let bits = BinaryGrid::from_fn(image_h as usize, image_w as usize, |r, c| {
        !boxes.iter().any(|b| b.contains_center(c as u32, r as u32))
    });
    if bits.count_ones() == 0 {
        return Err(EvalError::EmptyBackground);
    }
    Ok(BackgroundMask { bits })
}

fn check_inputs(a: &RgbImage, b: &RgbImage, mask: &BackgroundMask) -> Result<(), EvalError> {
    if a.dimensions() != b.dimensions() {
        return Err(EvalError::Shape(format!(
            "images {:?} vs {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    if a.dimensions() != (mask.width(), mask.height()) {
        return Err(EvalError::Shape(format!(
            "image {:?} vs mask {:?}",
            a.dimensions(),
            (mask.width(), mask.height())
        )));
    }
    if mask.count() == 0 {
        return Err(EvalError::EmptyBackground);
    }
    Ok(())
}

/// `10 log10(255^2 / MSE)` over background pixels and all channels;
/// `f64::INFINITY` when the background is identical.
pub fn psnr_bg(a: &RgbImage, b: &RgbImage, mask: &BackgroundMask) -> Result<f64, EvalError> {
    check_inputs(a, b, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y, pa) in a.enumerate_pixels() {
        if !mask.is_background(x, y) {
            continue;
        }
        let pb = b.get_pixel(x, y);
        for ch in 0..3 {
            let d = pa[ch] as f64 - pb[ch] as f64;
            sum += d * d;
        }
        n += 3;
    }
    let mse = sum / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (DYNAMIC_RANGE * DYNAMIC_RANGE / mse).log10())
}

/// ITU-R BT.601 luma.
pub fn grayscale(img: &RgbImage) -> Vec<f64> {
    img.pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

pub fn gaussian_kernel_1d(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - center;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * horiz[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over windows lying entirely in the background.
///
/// Gaussian 11x11 window (sigma 1.5), `K1 = 0.01`, `K2 = 0.03`, range 255,
/// on BT.601 luma.
pub fn ssim_bg(a: &RgbImage, b: &RgbImage, mask: &BackgroundMask) -> Result<f64, EvalError> {
    check_inputs(a, b, mask)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(EvalError::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let x = grayscale(a);
    let y = grayscale(b);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();

    let k = gaussian_kernel_1d(SSIM_WINDOW, SSIM_SIGMA);
    let mu_x = filter_valid(&x, w, h, &k);
    let mu_y = filter_valid(&y, w, h, &k);
    let e_xx = filter_valid(&xx, w, h, &k);
    let e_yy = filter_valid(&yy, w, h, &k);
    let e_xy = filter_valid(&xy, w, h, &k);

    // Summed-area table of excluded pixels to test window eligibility.
    let mut sat = vec![0usize; (w + 1) * (h + 1)];
    for r in 0..h {
        for c in 0..w {
            let excluded = usize::from(!mask.is_background(c as u32, r as u32));
            sat[(r + 1) * (w + 1) + c + 1] =
                excluded + sat[r * (w + 1) + c + 1] + sat[(r + 1) * (w + 1) + c]
                    - sat[r * (w + 1) + c];
        }
    }
    let excluded_in = |r0: usize, c0: usize| {
        let (r1, c1) = (r0 + SSIM_WINDOW, c0 + SSIM_WINDOW);
        sat[r1 * (w + 1) + c1] + sat[r0 * (w + 1) + c0]
            - sat[r0 * (w + 1) + c1]
            - sat[r1 * (w + 1) + c0]
    };

    let c1 = (SSIM_K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (SSIM_K2 * DYNAMIC_RANGE).powi(2);
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..oh {
        for c in 0..ow {
            if excluded_in(r, c) > 0 {
                continue;
            }
            let i = r * ow + c;
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    if count == 0 {
        return Err(EvalError::EmptyBackground);
    }
    Ok(total / count as f64)
}

/// Learned-perceptual-distance style metric, restricted to background.
pub trait PerceptualDistanceProvider {
    fn distance(&self, a: &RgbImage, b: &RgbImage, mask: &BackgroundMask)
        -> Result<f64, EvalError>;
}

/// Deterministic stand-in: the mean, over background pixels, of the squared
/// difference between seeded random projections of normalized RGB values.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomProjectionLpips {
    projection: Vec<[f64; 3]>,
}

impl RandomProjectionLpips {
    pub const DEFAULT_SEED: u64 = 0x1f1d5;
    pub const DEFAULT_FEATURES: usize = 16;

    pub fn new(seed: u64, features: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = (0..features.max(1))
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect();
        Self { projection }
    }

    pub fn from_projection(projection: Vec<[f64; 3]>) -> Self {
        assert!(!projection.is_empty());
        Self { projection }
    }

    pub fn projection(&self) -> &[[f64; 3]] {
        &self.projection
    }
}

impl Default for RandomProjectionLpips {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SEED, Self::DEFAULT_FEATURES)
    }
}

impl PerceptualDistanceProvider for RandomProjectionLpips {
    fn distance(
        &self,
        a: &RgbImage,
        b: &RgbImage,
        mask: &BackgroundMask,
    ) -> Result<f64, EvalError> {
        let k = self.projection.len() as f64;
        let mut sum = 0.0;
        let mut n = 0usize;
        for (x, y, pa) in a.enumerate_pixels() {
            if !mask.is_background(x, y) {
                continue;
            }
            let pb = b.get_pixel(x, y);
            let d = [0, 1, 2].map(|ch| (pa[ch] as f64 - pb[ch] as f64) / 255.0);
            let feat: f64 = self
                .projection
                .iter()
                .map(|row| {
                    let f = row[0] * d[0] + row[1] * d[1] + row[2] * d[2];
                    f * f
                })
                .sum();
            sum += feat / k;
            n += 1;
        }
        Ok(sum / n as f64)
    }
}

pub fn lpips_bg(
    provider: &dyn PerceptualDistanceProvider,
    a: &RgbImage,
    b: &RgbImage,
    mask: &BackgroundMask,
) -> Result<f64, EvalError> {
    check_inputs(a, b, mask)?;
    let d = provider.distance(a, b, mask)?;
    if !(d >= 0.0) {
        return Err(EvalError::Provider(format!("negative or NaN distance {d}")));
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidelityReport {
    pub lpips_bg: f64,
    pub psnr_bg: f64,
    pub ssim_bg: f64,
    pub background_pixel_count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum JsonNumberOrInf {
    Num(f64),
    Text(String),
}

#[derive(Serialize, Deserialize)]
struct FidelityJson {
    lpips_bg: f64,
    psnr_bg: JsonNumberOrInf,
    ssim_bg: f64,
    bg_pixels: usize,
}

impl Serialize for FidelityReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let psnr = if self.psnr_bg.is_infinite() {
            JsonNumberOrInf::Text("inf".into())
        } else {
            JsonNumberOrInf::Num(self.psnr_bg)
        };
        FidelityJson {
            lpips_bg: self.lpips_bg,
            psnr_bg: psnr,
            ssim_bg: self.ssim_bg,
            bg_pixels: self.background_pixel_count,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FidelityReport {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = FidelityJson::deserialize(d)?;
        let psnr_bg = match raw.psnr_bg {
            JsonNumberOrInf::Num(v) => v,
            JsonNumberOrInf::Text(t) if t == "inf" => f64::INFINITY,
            JsonNumberOrInf::Text(t) => {
                return Err(serde::de::Error::custom(format!("bad psnr value `{t}`")))
            }
        };
        Ok(FidelityReport {
            lpips_bg: raw.lpips_bg,
            psnr_bg,
            ssim_bg: raw.ssim_bg,
            background_pixel_count: raw.bg_pixels,
        })
    }
}

pub fn fidelity_report(
    provider: &dyn PerceptualDistanceProvider,
    original: &RgbImage,
    edited: &RgbImage,
    mask: &BackgroundMask,
) -> Result<FidelityReport, EvalError> {
    Ok(FidelityReport {
        lpips_bg: lpips_bg(provider, original, edited, mask)?,
        psnr_bg: psnr_bg(original, edited, mask)?,
        ssim_bg: ssim_bg(original, edited, mask)?,
        background_pixel_count: mask.count(),
    })
}
