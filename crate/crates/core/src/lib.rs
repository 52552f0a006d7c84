//! Post-hoc safety editing for generated images.
//!
//! A VLM detector names policy-violating instances and boxes them
//! ([`protocol`], [`client`]); attention maps are turned into an
//! instance-gated latent mask ([`mask`]); two-branch denoising blends the
//! target branch into the source branch under that mask ([`edit`]); and
//! [`eval`] scores background fidelity, semantic alignment and moderation
//! outcomes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod client;
pub mod edit;
pub mod eval;
pub mod grid;
pub mod io;
pub mod mask;
pub mod protocol;

pub use client::{
    request_digest, AuditExchange, ClientConfig, ClientError, ClientMode, FixtureStore, VlmClient,
};
pub use edit::{
    blend_latents, run_localized_edit, run_multi_concept_edit, DenoiserBackend, EditError,
    EditPlan, EditSchedule, Latent, MaskPolicy, ToyDenoiser,
};
pub use grid::{BinaryGrid, RealGrid};
pub use mask::{
    aggregate_cross_attention, apply_gate, binarize_and_upsample, build_edit_mask, build_laplacian,
    gate_from_box, refine, CrossAttentionPair, LatentGate, LatentMask, MaskConfig, MaskError,
    RefinedMask, RefinementParams, SelfAffinity,
};
pub use protocol::{
    parse_detections, render_policy_prompt, to_pixel_box, validate_detection, Category,
    ConceptDetection, DetectionSet, DetectorBox, PixelBox, PolicyPrompt, ProtocolError,
};
