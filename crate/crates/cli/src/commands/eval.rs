use std::path::Path;

use serde::Serialize;

use safe_edit_core::eval::{
    alignment_report, background_mask, fidelity_report, AlignmentReport, FidelityReport,
    MockEmbedder, PromptPair, RandomProjectionLpips,
};
use safe_edit_core::io::read_rgb;
use safe_edit_core::protocol::{to_pixel_box, DetectionSet};

use crate::config::PipelineConfig;
use crate::error::CliError;

pub const EVAL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct EvalRecord {
    pub schema_version: u32,
    pub fidelity: FidelityReport,
    /// Absent when there are no detections to derive prompts from.
    pub alignment: Option<AlignmentReport>,
    pub providers: Providers,
}

#[derive(Debug, Clone, Serialize)]
pub struct Providers {
    pub perceptual: String,
    pub embedding: String,
}

/// Background fidelity over the complement of the detection boxes, plus
/// alignment toward each detection's target prompt.
pub fn eval_one(
    cfg: &PipelineConfig,
    original: &Path,
    edited: &Path,
    detections: &Path,
) -> Result<EvalRecord, CliError> {
    let a = read_rgb(original)?;
    let b = read_rgb(edited)?;
    if a.dimensions() != b.dimensions() {
        return Err(CliError::Eval(format!(
            "image sizes differ: {:?} vs {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    let text = std::fs::read_to_string(detections)
        .map_err(|e| CliError::Io(format!("{}: {e}", detections.display())))?;
    let set: DetectionSet = serde_json::from_str(&text)
        .map_err(|e| CliError::Protocol(format!("{}: {e}", detections.display())))?;

    let (w, h) = a.dimensions();
    let boxes = set
        .iter()
        .map(|d| to_pixel_box(d.bbox, w, h))
        .collect::<Result<Vec<_>, _>>()?;
    let mask = background_mask(w, h, &boxes)?;
    let e = &cfg.eval;
    let lpips = RandomProjectionLpips::new(e.lpips_seed, e.lpips_features);
    let embedder = MockEmbedder::new(e.embed_seed, e.embed_dim);
    let fidelity = fidelity_report(&lpips, &a, &b, &mask)?;
    let pairs: Vec<PromptPair> = set
        .iter()
        .map(|d| PromptPair::new(d.source_prompt.clone(), d.target_prompt.clone()))
        .collect();
    let alignment = if pairs.is_empty() {
        None
    } else {
        Some(alignment_report(&embedder, &a, &b, &pairs)?)
    };
    Ok(EvalRecord {
        schema_version: EVAL_SCHEMA_VERSION,
        fidelity,
        alignment,
        providers: Providers {
            perceptual: format!(
                "random-projection(seed={}, features={})",
                e.lpips_seed, e.lpips_features
            ),
            embedding: format!("mock(seed={}, dim={})", e.embed_seed, e.embed_dim),
        },
    })
}
