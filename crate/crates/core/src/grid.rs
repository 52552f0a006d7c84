//! Row-major 2-D grids shared by the mask and evaluation code.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealGrid {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl RealGrid {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Option<Self> {
        (h * w == data.len()).then_some(Self { h, w, data })
    }

    pub fn filled(h: usize, w: usize, value: f64) -> Self {
        Self {
            h,
            w,
            data: vec![value; h * w],
        }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                data.push(f(r, c));
            }
        }
        Self { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.w + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.w + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Min-max normalized copy, or `None` when the grid is constant.
    pub fn normalized(&self) -> Option<RealGrid> {
        let (lo, hi) = self.min_max();
        let span = hi - lo;
        if !(span > 0.0) || !span.is_finite() {
            return None;
        }
        Some(RealGrid {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| (v - lo) / span).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryGrid {
    h: usize,
    w: usize,
    bits: Vec<bool>,
}

impl BinaryGrid {
    pub fn new(h: usize, w: usize, bits: Vec<bool>) -> Option<Self> {
        (h * w == bits.len()).then_some(Self { h, w, bits })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            bits: vec![false; h * w],
        }
    }

    pub fn ones(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            bits: vec![true; h * w],
        }
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                bits.push(f(r, c));
            }
        }
        Self { h, w, bits }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.w + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.bits[r * self.w + c] = v;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &BinaryGrid) -> Option<BinaryGrid> {
        if self.dims() != other.dims() {
            return None;
        }
        Some(BinaryGrid {
            h: self.h,
            w: self.w,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a && b)
                .collect(),
        })
    }
}
