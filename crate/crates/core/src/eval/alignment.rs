//! Contrastive image-text alignment.
//!
//! `delta(I) = cos(I, p_safe) - cos(I, p_unsafe)`. A successful edit raises
//! delta and lowers the unsafe similarity.

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EvalError;

/// Joint image-text embedding space, CLIP style.
pub trait EmbeddingProvider {
    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f64>, EvalError>;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, EvalError>;
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(EvalError::Provider(format!(
            "embedding dimensions differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !(na.is_finite() && nb.is_finite()) {
        return Err(EvalError::Provider("zero or non-finite embedding".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Image-prompt similarity under `provider`.
pub fn similarity(
    provider: &dyn EmbeddingProvider,
    image: &RgbImage,
    prompt: &str,
) -> Result<f64, EvalError> {
    cosine(&provider.embed_image(image)?, &provider.embed_text(prompt)?)
}

pub fn delta_clip(
    provider: &dyn EmbeddingProvider,
    image: &RgbImage,
    p_safe: &str,
    p_unsafe: &str,
) -> Result<f64, EvalError> {
    if p_safe.trim().is_empty() || p_unsafe.trim().is_empty() {
        return Err(EvalError::InvalidInput("prompts must be non-empty".into()));
    }
    let img = provider.embed_image(image)?;
    let safe = cosine(&img, &provider.embed_text(p_safe)?)?;
    let unsafe_ = cosine(&img, &provider.embed_text(p_unsafe)?)?;
    Ok(safe - unsafe_)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub delta_orig: f64,
    pub delta_sys: f64,
    pub gain: f64,
    pub unsafe_reduction: f64,
    pub n_concepts: usize,
}

impl AlignmentReport {
    /// Builds a report; `gain` is always `delta_sys - delta_orig`.
    pub fn new(delta_orig: f64, delta_sys: f64, unsafe_reduction: f64, n_concepts: usize) -> Self {
        Self {
            delta_orig,
            delta_sys,
            gain: delta_sys - delta_orig,
            unsafe_reduction,
            n_concepts,
        }
    }
}

/// A `(p_unsafe, p_safe)` prompt pair for one concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub p_unsafe: String,
    pub p_safe: String,
}

impl PromptPair {
    pub fn new(p_unsafe: impl Into<String>, p_safe: impl Into<String>) -> Self {
        Self {
            p_unsafe: p_unsafe.into(),
            p_safe: p_safe.into(),
        }
    }
}

/// Per-concept deltas averaged over all prompt pairs.
pub fn alignment_report(
    provider: &dyn EmbeddingProvider,
    original: &RgbImage,
    edited: &RgbImage,
    pairs: &[PromptPair],
) -> Result<AlignmentReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::InvalidInput(
            "at least one prompt pair is required".into(),
        ));
    }
    let e_orig = provider.embed_image(original)?;
    let e_edit = provider.embed_image(edited)?;
    let (mut d_orig, mut d_sys, mut reduction) = (0.0, 0.0, 0.0);
    for pair in pairs {
        if pair.p_safe.trim().is_empty() || pair.p_unsafe.trim().is_empty() {
            return Err(EvalError::InvalidInput("prompts must be non-empty".into()));
        }
        let safe = provider.embed_text(&pair.p_safe)?;
        let unsafe_ = provider.embed_text(&pair.p_unsafe)?;
        let unsafe_orig = cosine(&e_orig, &unsafe_)?;
        let unsafe_edit = cosine(&e_edit, &unsafe_)?;
        d_orig += cosine(&e_orig, &safe)? - unsafe_orig;
        d_sys += cosine(&e_edit, &safe)? - unsafe_edit;
        reduction += unsafe_orig - unsafe_edit;
    }
    let n = pairs.len() as f64;
    Ok(AlignmentReport::new(
        d_orig / n,
        d_sys / n,
        reduction / n,
        pairs.len(),
    ))
}

/// Deterministic embedder for tests and offline runs.
///
/// Text maps to a unit vector seeded by a hash of the text. Images are
/// average-pooled to a 4x4 RGB grid, centered, and sent through a seeded
/// random projection.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    seed: u64,
    dim: usize,
    image_projection: Vec<Vec<f64>>,
}

const POOL: u32 = 4;

impl MockEmbedder {
    pub const DEFAULT_SEED: u64 = 0xc11b;
    pub const DEFAULT_DIM: usize = 32;

    pub fn new(seed: u64, dim: usize) -> Self {
        let dim = dim.max(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let features = (POOL * POOL * 3) as usize;
        let image_projection = (0..dim)
            .map(|_| (0..features).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        Self {
            seed,
            dim,
            image_projection,
        }
    }

    fn pooled(image: &RgbImage) -> Vec<f64> {
        let (w, h) = image.dimensions();
        let mut out = Vec::with_capacity((POOL * POOL * 3) as usize);
        for gy in 0..POOL {
            let (y0, y1) = (
                gy * h / POOL,
                ((gy + 1) * h / POOL).max(gy * h / POOL + 1).min(h),
            );
            for gx in 0..POOL {
                let (x0, x1) = (
                    gx * w / POOL,
                    ((gx + 1) * w / POOL).max(gx * w / POOL + 1).min(w),
                );
                let mut acc = [0.0f64; 3];
                let mut n = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = image.get_pixel(x, y);
                        for ch in 0..3 {
                            acc[ch] += p[ch] as f64 / 255.0;
                        }
                        n += 1.0;
                    }
                }
                for a in acc {
                    out.push(if n > 0.0 { a / n - 0.5 } else { 0.0 });
                }
            }
        }
        out
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SEED, Self::DEFAULT_DIM)
    }
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        v[0] = 1.0;
        return v;
    }
    v.iter_mut().for_each(|x| *x /= n);
    v
}

impl EmbeddingProvider for MockEmbedder {
    fn embed_image(&self, image: &RgbImage) -> Result<Vec<f64>, EvalError> {
        if image.width() == 0 || image.height() == 0 {
            return Err(EvalError::Provider("empty image".into()));
        }
        let f = Self::pooled(image);
        let v = self
            .image_projection
            .iter()
            .map(|row| row.iter().zip(&f).map(|(a, b)| a * b).sum())
            .collect();
        Ok(unit(v))
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, EvalError> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(text.trim().to_lowercase().as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        Ok(unit(
            (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        ))
    }
}
