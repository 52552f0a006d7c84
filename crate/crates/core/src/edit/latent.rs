use serde::{Deserialize, Serialize};

use crate::grid::BinaryGrid;

/// Channel-major latent tensor `C x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentHeader {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum LatentDecodeError {
    #[error("latent file has no header line")]
    MissingHeader,
    #[error("bad latent header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("expected {expected} payload bytes, found {found}")]
    Length { expected: usize, found: usize },
}

impl Latent {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Option<Self> {
        (c * h * w == data.len() && data.iter().all(|v| v.is_finite())).then_some(Self {
            c,
            h,
            w,
            data,
        })
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self::filled(c, h, w, 0.0)
    }

    pub fn filled(c: usize, h: usize, w: usize, v: f64) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![v; c * h * w],
        }
    }

    pub fn from_fn(
        c: usize,
        h: usize,
        w: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for r in 0..h {
                for col in 0..w {
                    data.push(f(ch, r, col));
                }
            }
        }
        Self { c, h, w, data }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn get(&self, ch: usize, r: usize, col: usize) -> f64 {
        self.data[(ch * self.h + r) * self.w + col]
    }

    pub fn set(&mut self, ch: usize, r: usize, col: usize, v: f64) {
        self.data[(ch * self.h + r) * self.w + col] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mean squared difference over the cells selected by `region`,
    /// across all channels. `None` for an empty region.
    pub fn region_mse(&self, other: &Latent, region: &BinaryGrid) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for ch in 0..self.c {
            for r in 0..self.h {
                for col in 0..self.w {
                    if region.get(r, col) {
                        let d = self.get(ch, r, col) - other.get(ch, r, col);
                        sum += d * d;
                        n += 1;
                    }
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    pub fn header(&self) -> LatentHeader {
        LatentHeader {
            c: self.c,
            h: self.h,
            w: self.w,
        }
    }

    /// One JSON header line, then the payload as little-endian `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header()).expect("header serializes");
        out.push(b'\n');
        out.reserve(self.data.len() * 4);
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LatentDecodeError> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(LatentDecodeError::MissingHeader)?;
        let header: LatentHeader = serde_json::from_slice(&bytes[..nl])?;
        let payload = &bytes[nl + 1..];
        let expected = header.c * header.h * header.w * 4;
        if payload.len() != expected {
            return Err(LatentDecodeError::Length {
                expected,
                found: payload.len(),
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Ok(Self {
            c: header.c,
            h: header.h,
            w: header.w,
            data,
        })
    }
}
