//! Instance-consistent edit masks.
//!
//! The pipeline is: blend-word cross-attention maps are normalized and
//! aggregated into `M_cross`; `M_cross` is smoothed over the self-attention
//! graph by solving `(D_w + lambda L) M* = D_w M_cross`; `M*` is resampled to
//! latent resolution and thresholded into a binary mask `M`; finally `M` is
//! intersected with the rectangular gate `G` derived from the detector box,
//! so attention mass that leaks onto look-alike instances outside the box
//! cannot be edited.

pub mod sparse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{BinaryGrid, RealGrid};
use crate::protocol::PixelBox;
pub use sparse::{conjugate_gradient, CgFailure, CgSolution, CsrMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid attention map: {0}")]
    InvalidAttention(String),
    #[error("attention map is constant; min-max normalization is undefined")]
    DegenerateAttention,
    #[error("invalid affinity: {0}")]
    InvalidAffinity(String),
    #[error("invalid refinement parameters: {0}")]
    InvalidParams(String),
    #[error("refinement solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },
    #[error("box lies outside the image")]
    BoxRange,
}

// ---------------------------------------------------------------------------
// Cross attention

#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttentionPair {
    a_source: RealGrid,
    a_target: RealGrid,
}

impl CrossAttentionPair {
    pub fn new(a_source: RealGrid, a_target: RealGrid) -> Result<Self, MaskError> {
        if (a_source.height(), a_source.width()) != (a_target.height(), a_target.width()) {
            return Err(MaskError::Shape(format!(
                "source map {}x{} vs target map {}x{}",
                a_source.height(),
                a_source.width(),
                a_target.height(),
                a_target.width()
            )));
        }
        if a_source.is_empty() {
            return Err(MaskError::InvalidAttention("empty map".into()));
        }
        for g in [&a_source, &a_target] {
            if g.as_slice().iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(MaskError::InvalidAttention(
                    "entries must be finite and non-negative".into(),
                ));
            }
        }
        Ok(Self { a_source, a_target })
    }

    pub fn source(&self) -> &RealGrid {
        &self.a_source
    }

    pub fn target(&self) -> &RealGrid {
        &self.a_target
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.a_source.height(), self.a_source.width())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

/// `M_cross`: each map min-max normalized on its own, then combined
/// elementwise. The result lies in `[0, 1]`.
pub fn aggregate_cross_attention(
    pair: &CrossAttentionPair,
    mode: Aggregation,
) -> Result<RealGrid, MaskError> {
    let s = pair
        .a_source
        .normalized()
        .ok_or(MaskError::DegenerateAttention)?;
    let t = pair
        .a_target
        .normalized()
        .ok_or(MaskError::DegenerateAttention)?;
    let data = s
        .as_slice()
        .iter()
        .zip(t.as_slice())
        .map(|(&a, &b)| match mode {
            Aggregation::Mean => 0.5 * (a + b),
            Aggregation::Max => a.max(b),
        })
        .collect();
    Ok(RealGrid::new(s.height(), s.width(), data).expect("same shape"))
}

// ---------------------------------------------------------------------------
// Self-affinity graph

/// Symmetric non-negative affinity over the `N = H * W` attention cells.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAffinity {
    matrix: CsrMatrix,
}

impl SelfAffinity {
    /// Builds `(A + A^T) / 2` from raw, possibly asymmetric, entries.
    pub fn from_triplets(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, MaskError> {
        let raw: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, v) in &raw {
            if r >= n || c >= n {
                return Err(MaskError::InvalidAffinity(format!(
                    "entry ({r}, {c}) outside {n}x{n}"
                )));
            }
            if !v.is_finite() || v < 0.0 {
                return Err(MaskError::InvalidAffinity(
                    "entries must be finite and non-negative".into(),
                ));
            }
        }
        let halves = raw
            .iter()
            .flat_map(|&(r, c, v)| [(r, c, 0.5 * v), (c, r, 0.5 * v)]);
        Ok(Self {
            matrix: CsrMatrix::from_triplets(n, halves),
        })
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self, MaskError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(MaskError::InvalidAffinity("matrix is not square".into()));
        }
        Self::from_triplets(
            n,
            rows.iter().enumerate().flat_map(|(r, row)| {
                row.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(move |(c, &v)| (r, c, v))
            }),
        )
    }

    /// 4-neighbour lattice graph with uniform edge weight.
    pub fn grid_4(h: usize, w: usize, weight: f64) -> Result<Self, MaskError> {
        let mut t = Vec::new();
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if c + 1 < w {
                    t.push((i, i + 1, weight));
                    t.push((i + 1, i, weight));
                }
                if r + 1 < h {
                    t.push((i, i + w, weight));
                    t.push((i + w, i, weight));
                }
            }
        }
        Self::from_triplets(h * w, t)
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }
}

/// Graph Laplacian `L = D - A` with `D_ii = sum_j A_ij`.
pub fn build_laplacian(aff: &SelfAffinity) -> CsrMatrix {
    let a = &aff.matrix;
    let n = a.dim();
    let degrees: Vec<f64> = (0..n).map(|i| a.row(i).map(|(_, v)| v).sum()).collect();
    let entries = a
        .triplets()
        .map(|(r, c, v)| (r, c, -v))
        .chain(degrees.into_iter().enumerate().map(|(i, d)| (i, i, d)));
    CsrMatrix::from_triplets(n, entries)
}

// ---------------------------------------------------------------------------
// Refinement

/// How the diagonal confidence weights `D_w` are chosen.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    /// `D_w = I`
    #[default]
    Identity,
    /// `D_w[i] = 1 + M_cross[i]`
    Activation,
    Explicit(Vec<f64>),
}

impl Confidence {
    pub fn weights(&self, m_cross: &[f64]) -> Result<Vec<f64>, MaskError> {
        let w = match self {
            Confidence::Identity => vec![1.0; m_cross.len()],
            Confidence::Activation => m_cross.iter().map(|m| 1.0 + m).collect(),
            Confidence::Explicit(w) => {
                if w.len() != m_cross.len() {
                    return Err(MaskError::Shape(format!(
                        "{} confidence weights for {} cells",
                        w.len(),
                        m_cross.len()
                    )));
                }
                w.clone()
            }
        };
        if w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(MaskError::InvalidParams(
                "confidence weights must be positive".into(),
            ));
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementParams {
    pub lambda: f64,
    #[serde(default)]
    pub confidence: Confidence,
    pub solver_tol: f64,
    pub max_iter: usize,
}

impl Default for RefinementParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            confidence: Confidence::Identity,
            solver_tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

impl RefinementParams {
    pub fn validate(&self) -> Result<(), MaskError> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(MaskError::InvalidParams("lambda must be >= 0".into()));
        }
        if !(self.solver_tol > 0.0) {
            return Err(MaskError::InvalidParams("solver_tol must be > 0".into()));
        }
        if self.max_iter == 0 {
            return Err(MaskError::InvalidParams("max_iter must be > 0".into()));
        }
        Ok(())
    }
}

/// Smoothed localization map `M*` and solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedMask {
    pub values: RealGrid,
    pub iterations: usize,
    pub relative_residual: f64,
}

/// The SPD system matrix `D_w + lambda L`.
pub fn refinement_system(l: &CsrMatrix, weights: &[f64], lambda: f64) -> CsrMatrix {
    let entries = l
        .triplets()
        .map(|(r, c, v)| (r, c, lambda * v))
        .chain(weights.iter().enumerate().map(|(i, &w)| (i, i, w)));
    CsrMatrix::from_triplets(l.dim(), entries)
}

/// Solves `(D_w + lambda L) M* = D_w M_cross` by conjugate gradient.
pub fn refine(
    m_cross: &RealGrid,
    aff: &SelfAffinity,
    params: &RefinementParams,
) -> Result<RefinedMask, MaskError> {
    params.validate()?;
    if m_cross.len() != aff.dim() {
        return Err(MaskError::Shape(format!(
            "map has {} cells, affinity is {}x{}",
            m_cross.len(),
            aff.dim(),
            aff.dim()
        )));
    }
    let m = m_cross.as_slice();
    let weights = params.confidence.weights(m)?;
    if params.lambda == 0.0 {
        // Diagonal system: D_w x = D_w m.
        return Ok(RefinedMask {
            values: m_cross.clone(),
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let system = refinement_system(&build_laplacian(aff), &weights, params.lambda);
    let rhs: Vec<f64> = weights.iter().zip(m).map(|(w, v)| w * v).collect();
    let sol =
        conjugate_gradient(&system, &rhs, params.solver_tol, params.max_iter).map_err(|f| {
            MaskError::Solver {
                iterations: f.iterations,
                residual: f.relative_residual,
            }
        })?;
    Ok(RefinedMask {
        values: RealGrid::new(m_cross.height(), m_cross.width(), sol.x).expect("same shape"),
        iterations: sol.iterations,
        relative_residual: sol.relative_residual,
    })
}

// ---------------------------------------------------------------------------
// Binarization

/// Binary latent-resolution mask `M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentMask {
    pub bits: BinaryGrid,
    /// Set when the refined map was constant and no region could be selected.
    pub degenerate: bool,
}

impl LatentMask {
    pub fn new(bits: BinaryGrid) -> Self {
        Self {
            bits,
            degenerate: false,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.bits.dims()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.count_ones()
    }
}

/// Source sample position and interpolation weight along one axis, using
/// half-pixel centers and edge clamping.
pub(crate) fn bilinear_axis(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let s = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5;
    let s = s.clamp(0.0, (src_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resampling of `src` to `h x w`.
pub fn resample_bilinear(src: &RealGrid, h: usize, w: usize) -> RealGrid {
    RealGrid::from_fn(h, w, |r, c| {
        let (r0, r1, fr) = bilinear_axis(r, src.height(), h);
        let (c0, c1, fc) = bilinear_axis(c, src.width(), w);
        let top = src.get(r0, c0) * (1.0 - fc) + src.get(r0, c1) * fc;
        let bottom = src.get(r1, c0) * (1.0 - fc) + src.get(r1, c1) * fc;
        top * (1.0 - fr) + bottom * fr
    })
}

/// Min-max normalize `M*`, resample to latent resolution, keep cells `>= tau`.
pub fn binarize_and_upsample(
    m_star: &RealGrid,
    latent_h: usize,
    latent_w: usize,
    tau: f64,
) -> Result<LatentMask, MaskError> {
    if latent_h == 0 || latent_w == 0 {
        return Err(MaskError::Shape(
            "latent dimensions must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(MaskError::InvalidParams(format!(
            "tau {tau} outside [0, 1]"
        )));
    }
    let Some(norm) = m_star.normalized() else {
        return Ok(LatentMask {
            bits: BinaryGrid::zeros(latent_h, latent_w),
            degenerate: true,
        });
    };
    let up = resample_bilinear(&norm, latent_h, latent_w);
    let bits = BinaryGrid::from_fn(latent_h, latent_w, |r, c| up.get(r, c) >= tau);
    Ok(LatentMask::new(bits))
}

// ---------------------------------------------------------------------------
// Gate

/// Inclusive cell rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRect {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl CellRect {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.row_min..=self.row_max).contains(&r) && (self.col_min..=self.col_max).contains(&c)
    }

    pub fn area(&self) -> usize {
        (self.row_max - self.row_min + 1) * (self.col_max - self.col_min + 1)
    }
}

/// Binary gate `G`: a single axis-aligned rectangle of latent cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentGate {
    h: usize,
    w: usize,
    rect: Option<CellRect>,
}

impl LatentGate {
    pub fn full(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            rect: (h > 0 && w > 0).then_some(CellRect {
                row_min: 0,
                row_max: h - 1,
                col_min: 0,
                col_max: w - 1,
            }),
        }
    }

    pub fn empty(h: usize, w: usize) -> Self {
        Self { h, w, rect: None }
    }

    pub fn from_rect(h: usize, w: usize, rect: CellRect) -> Result<Self, MaskError> {
        if rect.row_min > rect.row_max
            || rect.col_min > rect.col_max
            || rect.row_max >= h
            || rect.col_max >= w
        {
            return Err(MaskError::Shape(format!("rect {rect:?} outside {h}x{w}")));
        }
        Ok(Self {
            h,
            w,
            rect: Some(rect),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn rect(&self) -> Option<CellRect> {
        self.rect
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.rect.is_some_and(|rect| rect.contains(r, c))
    }

    pub fn bits(&self) -> BinaryGrid {
        BinaryGrid::from_fn(self.h, self.w, |r, c| self.contains(r, c))
    }

    pub fn count_ones(&self) -> usize {
        self.rect.map_or(0, |r| r.area())
    }
}

/// Latent cells touched by `pixel_box`, rounded outward so the instance is
/// always covered.
pub fn gate_from_box(
    pixel_box: &PixelBox,
    image_w: u32,
    image_h: u32,
    latent_h: usize,
    latent_w: usize,
) -> Result<LatentGate, MaskError> {
    if image_w == 0 || image_h == 0 || latent_h == 0 || latent_w == 0 {
        return Err(MaskError::Shape("dimensions must be positive".into()));
    }
    if !pixel_box.within(image_w, image_h) {
        return Err(MaskError::BoxRange);
    }
    let lw = latent_w as f64;
    let lh = latent_h as f64;
    let col_min = (pixel_box.x_min * lw / image_w as f64).floor() as usize;
    let col_end = (pixel_box.x_max * lw / image_w as f64).ceil() as usize;
    let row_min = (pixel_box.y_min * lh / image_h as f64).floor() as usize;
    let row_end = (pixel_box.y_max * lh / image_h as f64).ceil() as usize;
    let rect = CellRect {
        row_min: row_min.min(latent_h - 1),
        row_max: row_end.clamp(row_min + 1, latent_h) - 1,
        col_min: col_min.min(latent_w - 1),
        col_max: col_end.clamp(col_min + 1, latent_w) - 1,
    };
    LatentGate::from_rect(latent_h, latent_w, rect)
}

/// `M' = M AND G`
pub fn apply_gate(m: &LatentMask, g: &LatentGate) -> Result<LatentMask, MaskError> {
    if m.dims() != g.dims() {
        return Err(MaskError::Shape(format!(
            "mask {:?} vs gate {:?}",
            m.dims(),
            g.dims()
        )));
    }
    let (h, w) = m.dims();
    Ok(LatentMask {
        bits: BinaryGrid::from_fn(h, w, |r, c| m.bits.get(r, c) && g.contains(r, c)),
        degenerate: m.degenerate,
    })
}

// ---------------------------------------------------------------------------
// Whole chain

/// Tunables for turning attention into a latent edit mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    #[serde(default)]
    pub aggregation: Aggregation,
    pub refinement: RefinementParams,
    pub tau: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            aggregation: Aggregation::Mean,
            refinement: RefinementParams::default(),
            tau: 0.5,
        }
    }
}

/// Every intermediate of one mask construction.
#[derive(Debug, Clone)]
pub struct MaskStages {
    pub m_cross: RealGrid,
    pub m_star: RefinedMask,
    pub mask: LatentMask,
}

pub fn build_edit_mask(
    pair: &CrossAttentionPair,
    aff: &SelfAffinity,
    config: &MaskConfig,
    latent_h: usize,
    latent_w: usize,
) -> Result<MaskStages, MaskError> {
    let m_cross = aggregate_cross_attention(pair, config.aggregation)?;
    let m_star = refine(&m_cross, aff, &config.refinement)?;
    let mask = binarize_and_upsample(&m_star.values, latent_h, latent_w, config.tau)?;
    Ok(MaskStages {
        m_cross,
        m_star,
        mask,
    })
}
