//! Analytic stand-in for a diffusion backend.
//!
//! Each prompt owns a pattern latent `P`; one step contracts toward it:
//! `z <- z + alpha (P - z)`, so after `k` free steps
//! `z_k = P + (1 - alpha)^k (z_0 - P)`. Attention maps are fixtures, either
//! registered directly or synthesized from image colors by
//! [`ColorKeyedAttention`].

use std::collections::HashMap;

use super::{BackendError, DenoiserBackend, Latent};
use crate::grid::RealGrid;
use crate::mask::{CrossAttentionPair, SelfAffinity};
use crate::protocol::ConceptDetection;

type AttentionFixture = (CrossAttentionPair, SelfAffinity);

#[derive(Debug, Clone)]
pub struct ToyDenoiser {
    alpha: f64,
    shape: (usize, usize, usize),
    patterns: HashMap<String, Latent>,
    attention: HashMap<(String, String), AttentionFixture>,
    default_attention: Option<AttentionFixture>,
    reconstruct_source: bool,
}

impl ToyDenoiser {
    pub fn new(alpha: f64, shape: (usize, usize, usize)) -> Result<Self, BackendError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(BackendError(format!("alpha {alpha} must lie in (0, 1)")));
        }
        Ok(Self {
            alpha,
            shape,
            patterns: HashMap::new(),
            attention: HashMap::new(),
            default_attention: None,
            reconstruct_source: false,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_pattern(
        &mut self,
        prompt: impl Into<String>,
        pattern: Latent,
    ) -> Result<(), BackendError> {
        if pattern.shape() != self.shape {
            return Err(BackendError(format!(
                "pattern shape {:?} differs from backend shape {:?}",
                pattern.shape(),
                self.shape
            )));
        }
        self.patterns.insert(prompt.into(), pattern);
        Ok(())
    }

    pub fn with_pattern(
        mut self,
        prompt: impl Into<String>,
        pattern: Latent,
    ) -> Result<Self, BackendError> {
        self.set_pattern(prompt, pattern)?;
        Ok(self)
    }

    pub fn set_attention(
        &mut self,
        source_word: &str,
        target_word: &str,
        pair: CrossAttentionPair,
        affinity: SelfAffinity,
    ) {
        self.attention.insert(
            (source_word.to_string(), target_word.to_string()),
            (pair, affinity),
        );
    }

    pub fn with_attention(
        mut self,
        source_word: &str,
        target_word: &str,
        pair: CrossAttentionPair,
        affinity: SelfAffinity,
    ) -> Self {
        self.set_attention(source_word, target_word, pair, affinity);
        self
    }

    /// Attention returned for blend words without their own fixture.
    pub fn with_default_attention(
        mut self,
        pair: CrossAttentionPair,
        affinity: SelfAffinity,
    ) -> Self {
        self.default_attention = Some((pair, affinity));
        self
    }

    /// When set, each edit first pins the source prompt's pattern to the
    /// edit's input latent, so the source branch reproduces its input
    /// exactly (a perfect inversion).
    pub fn reconstruct_source(mut self, on: bool) -> Self {
        self.reconstruct_source = on;
        self
    }

    pub fn pattern(&self, prompt: &str) -> Option<&Latent> {
        self.patterns.get(prompt)
    }
}

impl DenoiserBackend for ToyDenoiser {
    fn latent_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    fn step(&self, z: &Latent, _t: usize, condition: &str) -> Result<Latent, BackendError> {
        let p = self
            .patterns
            .get(condition)
            .ok_or_else(|| BackendError(format!("no pattern for prompt `{condition}`")))?;
        if z.shape() != p.shape() {
            return Err(BackendError(format!(
                "latent shape {:?} differs from pattern shape {:?}",
                z.shape(),
                p.shape()
            )));
        }
        let mut out = z.clone();
        for (o, &target) in out.as_mut_slice().iter_mut().zip(p.as_slice()) {
            *o += self.alpha * (target - *o);
        }
        Ok(out)
    }

    fn supports_attention(&self) -> bool {
        self.default_attention.is_some() || !self.attention.is_empty()
    }

    fn attention_maps(
        &self,
        _t: usize,
        (source, target): (&str, &str),
    ) -> Result<(CrossAttentionPair, SelfAffinity), BackendError> {
        self.attention
            .get(&(source.to_string(), target.to_string()))
            .or(self.default_attention.as_ref())
            .cloned()
            .ok_or_else(|| BackendError(format!("no attention fixture for `{source} {target}`")))
    }

    fn prepare_edit(
        &mut self,
        z_init: &Latent,
        detection: &ConceptDetection,
    ) -> Result<(), BackendError> {
        if self.reconstruct_source {
            self.set_pattern(detection.source_prompt.clone(), z_init.clone())?;
        }
        Ok(())
    }

    fn concurrent_steps(&self) -> bool {
        true
    }
}

/// Synthesizes attention fixtures from an image latent: a word attends to
/// cells whose mean color is close to the word's color, and cells of
/// similar color are strongly linked in the self-affinity graph, however far
/// apart they are.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorKeyedAttention {
    pub grid_h: usize,
    pub grid_w: usize,
    /// Color bandwidth of cross-attention.
    pub sigma_cross: f64,
    /// Color bandwidth of self-affinity.
    pub sigma_self: f64,
    /// Weight of the 4-neighbour lattice edges keeping the graph connected.
    pub lattice_weight: f64,
    /// Color-similarity edges lighter than this are dropped.
    pub prune_below: f64,
}

impl Default for ColorKeyedAttention {
    fn default() -> Self {
        Self {
            grid_h: 16,
            grid_w: 16,
            sigma_cross: 0.12,
            sigma_self: 0.12,
            lattice_weight: 1e-3,
            prune_below: 1e-3,
        }
    }
}

impl ColorKeyedAttention {
    /// Per-cell channel means.
    pub fn pool(&self, image: &Latent) -> Vec<Vec<f64>> {
        let (c, h, w) = image.shape();
        let mut cells = Vec::with_capacity(self.grid_h * self.grid_w);
        for gr in 0..self.grid_h {
            let (r0, r1) = (
                gr * h / self.grid_h,
                ((gr + 1) * h / self.grid_h).max(gr * h / self.grid_h + 1),
            );
            for gc in 0..self.grid_w {
                let (c0, c1) = (
                    gc * w / self.grid_w,
                    ((gc + 1) * w / self.grid_w).max(gc * w / self.grid_w + 1),
                );
                let n = ((r1 - r0) * (c1 - c0)) as f64;
                let mean = (0..c)
                    .map(|ch| {
                        let mut s = 0.0;
                        for r in r0..r1.min(h) {
                            for col in c0..c1.min(w) {
                                s += image.get(ch, r, col);
                            }
                        }
                        s / n
                    })
                    .collect();
                cells.push(mean);
            }
        }
        cells
    }

    pub fn cross_map(&self, image: &Latent, color: &[f64]) -> RealGrid {
        let cells = self.pool(image);
        let data = cells
            .iter()
            .map(|x| (-dist2(x, color) / (2.0 * self.sigma_cross * self.sigma_cross)).exp())
            .collect();
        RealGrid::new(self.grid_h, self.grid_w, data).expect("grid sized from cells")
    }

    pub fn affinity(&self, image: &Latent) -> SelfAffinity {
        let cells = self.pool(image);
        let n = cells.len();
        let mut t = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = (-dist2(&cells[i], &cells[j]) / (2.0 * self.sigma_self * self.sigma_self))
                    .exp();
                if w >= self.prune_below {
                    t.push((i, j, w));
                    t.push((j, i, w));
                }
            }
        }
        let lattice = SelfAffinity::grid_4(self.grid_h, self.grid_w, self.lattice_weight)
            .expect("lattice weights are valid");
        t.extend(lattice.matrix().triplets());
        SelfAffinity::from_triplets(n, t).expect("weights are finite and non-negative")
    }

    pub fn fixture(
        &self,
        image: &Latent,
        source_color: &[f64],
        target_color: &[f64],
    ) -> Result<(CrossAttentionPair, SelfAffinity), crate::mask::MaskError> {
        let pair = CrossAttentionPair::new(
            self.cross_map(image, source_color),
            self.cross_map(image, target_color),
        )?;
        Ok((pair, self.affinity(image)))
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
