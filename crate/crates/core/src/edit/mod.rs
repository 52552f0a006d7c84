//! Mask-guided two-branch denoising.
//!
//! Both branches start from the same latent. The source branch follows the
//! source prompt untouched. After every step from `blend_from` on, the
//! target branch is overwritten with
//! `M' * z_target + (1 - M') * z_source`, where `M'` is the gated mask.
//! Because `M'` is binary this is an exact per-cell selection, so every
//! cell outside `M'` carries the source-branch value bit for bit.

mod latent;
pub mod toy;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mask::{
    apply_gate, build_edit_mask, LatentGate, LatentMask, MaskConfig, MaskError, MaskStages,
};
use crate::protocol::ConceptDetection;
pub use latent::{Latent, LatentDecodeError, LatentHeader};
pub use toy::{ColorKeyedAttention, ToyDenoiser};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EditError {
    #[error("backend failed at step {step}: {message}")]
    Backend { step: usize, message: String },
    #[error("backend capability missing: {0}")]
    Capability(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid edit plan: {0}")]
    InvalidPlan(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("plan {index}: {source}")]
    Plan {
        index: usize,
        #[source]
        source: Box<EditError>,
    },
}

/// Failure reported by a denoiser backend; the edit loop attaches the step.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct BackendError(pub String);

/// A diffusion backend seen as a deterministic step function.
pub trait DenoiserBackend {
    /// `(channels, latent height, latent width)`
    fn latent_shape(&self) -> (usize, usize, usize);

    fn step(&self, z: &Latent, t: usize, condition: &str) -> Result<Latent, BackendError>;

    fn supports_attention(&self) -> bool {
        false
    }

    /// Cross-attention maps for the `(source, target)` blend words and the
    /// self-attention affinity at step `t`.
    fn attention_maps(
        &self,
        _t: usize,
        _blend_words: (&str, &str),
    ) -> Result<(crate::mask::CrossAttentionPair, crate::mask::SelfAffinity), BackendError> {
        Err(BackendError("backend does not expose attention".into()))
    }

    /// Hook run once before each localized edit, e.g. to invert `z_init`
    /// for the source branch.
    fn prepare_edit(
        &mut self,
        _z_init: &Latent,
        _detection: &ConceptDetection,
    ) -> Result<(), BackendError> {
        Ok(())
    }

    /// Whether one instance tolerates concurrent `step` calls.
    fn concurrent_steps(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPolicy {
    /// Mask computed once, at the first blending step.
    #[default]
    Fixed,
    /// Mask recomputed from backend attention at every blending step.
    PerStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditSchedule {
    pub total_steps: usize,
    #[serde(default)]
    pub blend_from: usize,
    #[serde(default)]
    pub mask_policy: MaskPolicy,
}

impl Default for EditSchedule {
    fn default() -> Self {
        Self {
            total_steps: 10,
            blend_from: 0,
            mask_policy: MaskPolicy::Fixed,
        }
    }
}

impl EditSchedule {
    pub fn validate(&self) -> Result<(), EditError> {
        if self.total_steps == 0 {
            return Err(EditError::InvalidPlan("total_steps must be > 0".into()));
        }
        if self.blend_from >= self.total_steps {
            return Err(EditError::InvalidPlan(format!(
                "blend_from {} must be below total_steps {}",
                self.blend_from, self.total_steps
            )));
        }
        Ok(())
    }
}

/// Everything needed to edit one detected instance.
#[derive(Debug, Clone, PartialEq)]
pub struct EditPlan {
    pub detection: ConceptDetection,
    pub gate: LatentGate,
    pub schedule: EditSchedule,
    pub mask: MaskConfig,
    /// Precomputed `M`. When absent the mask is built from backend attention.
    pub fixed_mask: Option<LatentMask>,
}

impl EditPlan {
    fn validate(&self, backend: &dyn DenoiserBackend) -> Result<(), EditError> {
        self.schedule.validate()?;
        let (_, h, w) = backend.latent_shape();
        if self.gate.dims() != (h, w) {
            return Err(EditError::Shape(format!(
                "gate {:?} vs latent {:?}",
                self.gate.dims(),
                (h, w)
            )));
        }
        if let Some(m) = &self.fixed_mask {
            if m.dims() != (h, w) {
                return Err(EditError::Shape(format!(
                    "mask {:?} vs latent {:?}",
                    m.dims(),
                    (h, w)
                )));
            }
        }
        let needs_attention =
            self.schedule.mask_policy == MaskPolicy::PerStep || self.fixed_mask.is_none();
        if needs_attention && !backend.supports_attention() {
            return Err(EditError::Capability(
                "mask must come from attention but the backend exposes none".into(),
            ));
        }
        if needs_attention && self.detection.blend_pair().is_none() {
            return Err(EditError::InvalidPlan(
                "detection needs exactly two blend words".into(),
            ));
        }
        Ok(())
    }
}

/// `M' * z_target + (1 - M') * z_source`, the mask broadcast over channels.
pub fn blend_latents(
    z_source: &Latent,
    z_target: &Latent,
    m_prime: &LatentMask,
) -> Result<Latent, EditError> {
    if z_source.shape() != z_target.shape() {
        return Err(EditError::Shape(format!(
            "source {:?} vs target {:?}",
            z_source.shape(),
            z_target.shape()
        )));
    }
    if z_source.spatial() != m_prime.dims() {
        return Err(EditError::Shape(format!(
            "latent {:?} vs mask {:?}",
            z_source.spatial(),
            m_prime.dims()
        )));
    }
    let (c, h, w) = z_source.shape();
    let mut out = z_source.clone();
    let plane = h * w;
    let bits = m_prime.bits.as_slice();
    for ch in 0..c {
        let base = ch * plane;
        for (i, &on) in bits.iter().enumerate() {
            if on {
                out.as_mut_slice()[base + i] = z_target.as_slice()[base + i];
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EditOutcome {
    /// Final target-branch latent.
    pub edited: Latent,
    /// Final source-branch latent.
    pub source: Latent,
    /// Source-branch state after each step.
    pub source_trajectory: Vec<Latent>,
    /// Gated mask `M'` used at the last blending step.
    pub effective_mask: LatentMask,
    /// Intermediates of the last attention-derived mask, if any.
    pub stages: Option<MaskStages>,
}

fn attention_mask(
    backend: &dyn DenoiserBackend,
    plan: &EditPlan,
    t: usize,
) -> Result<MaskStages, EditError> {
    let (_, h, w) = backend.latent_shape();
    let words = plan
        .detection
        .blend_pair()
        .ok_or_else(|| EditError::InvalidPlan("detection needs exactly two blend words".into()))?;
    let (pair, aff) = backend
        .attention_maps(t, words)
        .map_err(|e| EditError::Backend {
            step: t,
            message: e.0,
        })?;
    Ok(build_edit_mask(&pair, &aff, &plan.mask, h, w)?)
}

/// Runs one localized edit and returns both final branch latents.
pub fn run_localized_edit(
    backend: &mut dyn DenoiserBackend,
    plan: &EditPlan,
    z_init: &Latent,
) -> Result<EditOutcome, EditError> {
    plan.validate(backend)?;
    if z_init.shape() != backend.latent_shape() {
        return Err(EditError::Shape(format!(
            "initial latent {:?} vs backend {:?}",
            z_init.shape(),
            backend.latent_shape()
        )));
    }
    backend
        .prepare_edit(z_init, &plan.detection)
        .map_err(|e| EditError::Backend {
            step: 0,
            message: e.0,
        })?;
    let backend: &dyn DenoiserBackend = backend;

    let schedule = plan.schedule;
    let mut z_src = z_init.clone();
    let mut z_tgt = z_init.clone();
    let mut trajectory = Vec::with_capacity(schedule.total_steps);
    let mut m_prime: Option<LatentMask> = None;
    let mut stages: Option<MaskStages> = None;

    let step = |z: &Latent, t: usize, cond: &str| {
        backend.step(z, t, cond).map_err(|e| EditError::Backend {
            step: t,
            message: e.0,
        })
    };

    for t in 0..schedule.total_steps {
        z_src = step(&z_src, t, &plan.detection.source_prompt)?;
        z_tgt = step(&z_tgt, t, &plan.detection.target_prompt)?;
        if z_src.shape() != z_init.shape() || z_tgt.shape() != z_init.shape() {
            return Err(EditError::Backend {
                step: t,
                message: "backend changed the latent shape".into(),
            });
        }
        trajectory.push(z_src.clone());
        if t < schedule.blend_from {
            continue;
        }
        let recompute = match schedule.mask_policy {
            MaskPolicy::PerStep => true,
            MaskPolicy::Fixed => m_prime.is_none(),
        };
        if recompute {
            let m = match (&plan.fixed_mask, schedule.mask_policy) {
                (Some(m), MaskPolicy::Fixed) => m.clone(),
                _ => {
                    let s = attention_mask(backend, plan, t)?;
                    let m = s.mask.clone();
                    stages = Some(s);
                    m
                }
            };
            m_prime = Some(apply_gate(&m, &plan.gate)?);
        }
        let gated = m_prime.as_ref().expect("mask set above");
        z_tgt = blend_latents(&z_src, &z_tgt, gated)?;
    }

    Ok(EditOutcome {
        edited: z_tgt,
        source: z_src,
        source_trajectory: trajectory,
        effective_mask: m_prime.expect("at least one blending step"),
        stages,
    })
}

#[derive(Debug, Clone)]
pub struct MultiEditOutcome {
    pub latent: Latent,
    pub outcomes: Vec<EditOutcome>,
}

impl MultiEditOutcome {
    /// True when no plan ran and the input came back unchanged.
    pub fn is_noop(&self) -> bool {
        self.outcomes.is_empty()
    }
}

/// Applies the plans one after another, each consuming the previous output.
pub fn run_multi_concept_edit(
    backend: &mut dyn DenoiserBackend,
    plans: &[EditPlan],
    z_init: &Latent,
) -> Result<MultiEditOutcome, EditError> {
    let mut current = z_init.clone();
    let mut outcomes = Vec::with_capacity(plans.len());
    for (index, plan) in plans.iter().enumerate() {
        let out = run_localized_edit(backend, plan, &current).map_err(|e| EditError::Plan {
            index,
            source: Box::new(e),
        })?;
        current = out.edited.clone();
        outcomes.push(out);
    }
    Ok(MultiEditOutcome {
        latent: current,
        outcomes,
    })
}
