use std::path::Path;
use std::time::Instant;

use image::RgbImage;
use serde::Serialize;
use sha2::{Digest, Sha256};

use safe_edit_core::edit::{
    run_localized_edit, ColorKeyedAttention, EditPlan, Latent, ToyDenoiser,
};
use safe_edit_core::io::{
    image_to_latent, latent_to_image, write_binary_mask, write_real_map, write_rgb, MaskKind,
    MaskSidecar,
};
use safe_edit_core::mask::{gate_from_box, CellRect, LatentGate};
use safe_edit_core::protocol::{to_pixel_box, ConceptDetection, DetectionSet, PixelBox};

use super::{image_id, write_json};
use crate::config::{BackendKind, PipelineConfig};
use crate::error::CliError;

pub const RUN_RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Edited,
    NoOp,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanArtifacts {
    pub m_cross: String,
    pub m_star: String,
    pub mask: String,
    pub gate: String,
    pub gated: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanRecord {
    pub index: usize,
    pub label: String,
    pub blend_words: Vec<String>,
    pub pixel_box: PixelBox,
    pub gate_rect: Option<CellRect>,
    pub mask_cells: usize,
    pub gated_cells: usize,
    pub degenerate_mask: bool,
    pub solver_iterations: usize,
    pub solver_relative_residual: f64,
    pub artifacts: PlanArtifacts,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timings {
    pub load_ms: f64,
    /// Wall time of each plan, in detection order.
    pub plans_ms: Vec<f64>,
    pub write_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub image_id: String,
    pub status: RunStatus,
    pub input: String,
    /// Output paths are relative to the run directory.
    pub output: String,
    pub detections: DetectionSet,
    pub plans: Vec<PlanRecord>,
    pub timings: Timings,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn io_err(p: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", p.display()))
}

/// Color a blend word attends to under the toy backend, as RGB in `[0, 1]`.
pub fn word_color(cfg: &PipelineConfig, word: &str) -> [f64; 3] {
    let rgb = cfg
        .backend
        .word_colors
        .get(word)
        .copied()
        .unwrap_or_else(|| {
            let d = Sha256::digest(word.as_bytes());
            [d[0], d[1], d[2]]
        });
    rgb.map(|v| v as f64 / 255.0)
}

fn plan_gate(
    cfg: &PipelineConfig,
    d: &ConceptDetection,
    img: &RgbImage,
) -> Result<(PixelBox, LatentGate), CliError> {
    let (w, h) = img.dimensions();
    let pb = to_pixel_box(d.bbox, w, h)?;
    let gate = if cfg.gate {
        // The toy latent shares the image grid.
        gate_from_box(&pb, w, h, h as usize, w as usize)?
    } else {
        LatentGate::full(h as usize, w as usize)
    };
    Ok((pb, gate))
}

fn toy_backend(
    cfg: &PipelineConfig,
    z: &Latent,
    d: &ConceptDetection,
) -> Result<ToyDenoiser, CliError> {
    let (src, tgt) = d
        .blend_pair()
        .ok_or_else(|| CliError::Protocol("detection needs exactly two blend words".into()))?;
    let b = &cfg.backend;
    let attn = ColorKeyedAttention {
        grid_h: b.attention_grid,
        grid_w: b.attention_grid,
        sigma_cross: b.sigma_cross,
        sigma_self: b.sigma_self,
        ..ColorKeyedAttention::default()
    };
    // In the target branch the replacement token attends to the region being
    // rewritten, so both maps key on the source word's color.
    let sc = word_color(cfg, src);
    let (pair, aff) = attn.fixture(z, &sc, &sc)?;
    let tc = word_color(cfg, tgt);
    let (c, h, w) = z.shape();
    let target = Latent::from_fn(c, h, w, |ch, _, _| tc[ch]);
    let backend = ToyDenoiser::new(b.alpha, z.shape())
        .and_then(|t| t.with_pattern(d.target_prompt.clone(), target))
        .map_err(|e| CliError::Edit(e.0))?
        .with_default_attention(pair, aff)
        .reconstruct_source(true);
    Ok(backend)
}

/// Edits one image and writes the edited PNG, per-instance masks and the
/// RunRecord under `<out_dir>/<image_id>/`.
pub fn edit_one(
    cfg: &PipelineConfig,
    image: &Path,
    detections: &Path,
    out_dir: &Path,
) -> Result<RunRecord, CliError> {
    let t_total = Instant::now();
    let id = image_id(image);
    let dir = out_dir.join(&id);
    let masks = dir.join("masks");
    std::fs::create_dir_all(&masks).map_err(io_err(&masks))?;

    let t_load = Instant::now();
    let text = std::fs::read_to_string(detections).map_err(io_err(detections))?;
    let set: DetectionSet = serde_json::from_str(&text)
        .map_err(|e| CliError::Protocol(format!("{}: {e}", detections.display())))?;
    let bytes = std::fs::read(image).map_err(io_err(image))?;
    let img = image::load_from_memory(&bytes)
        .map_err(|e| CliError::Io(format!("{}: {e}", image.display())))?
        .into_rgb8();
    let load_ms = ms(t_load);

    if set.is_empty() {
        let t_write = Instant::now();
        let ext = image.extension().and_then(|e| e.to_str()).unwrap_or("png");
        let name = format!("edited.{ext}");
        let out = dir.join(&name);
        std::fs::write(&out, &bytes).map_err(io_err(&out))?;
        return finish(
            &dir,
            RunRecord {
                schema_version: RUN_RECORD_SCHEMA_VERSION,
                image_id: id,
                status: RunStatus::NoOp,
                input: image.display().to_string(),
                output: name,
                detections: set,
                plans: Vec::new(),
                timings: Timings {
                    load_ms,
                    plans_ms: Vec::new(),
                    write_ms: ms(t_write),
                    total_ms: ms(t_total),
                },
            },
        );
    }

    if cfg.backend.kind == BackendKind::External {
        return Err(CliError::Edit(
            "the external diffusion backend is not available in this build; use backend.kind = \"toy\"".into(),
        ));
    }

    let mut z = image_to_latent(&img);
    let mut plans = Vec::with_capacity(set.count());
    let mut plans_ms = Vec::with_capacity(set.count());
    for (i, d) in set.iter().enumerate() {
        let t_plan = Instant::now();
        let rec = run_plan(cfg, d, i, &img, &mut z, &masks)
            .map_err(|e| e.in_image(id.clone(), Some(i)))?;
        plans.push(rec);
        plans_ms.push(ms(t_plan));
    }

    let t_write = Instant::now();
    let out = dir.join("edited.png");
    write_rgb(&out, &latent_to_image(&z)?)?;
    finish(
        &dir,
        RunRecord {
            schema_version: RUN_RECORD_SCHEMA_VERSION,
            image_id: id,
            status: RunStatus::Edited,
            input: image.display().to_string(),
            output: "edited.png".into(),
            detections: set,
            plans,
            timings: Timings {
                load_ms,
                plans_ms,
                write_ms: ms(t_write),
                total_ms: ms(t_total),
            },
        },
    )
}

fn finish(dir: &Path, record: RunRecord) -> Result<RunRecord, CliError> {
    let path = dir.join("run.json");
    write_json(&path, &record)?;
    Ok(record)
}

fn run_plan(
    cfg: &PipelineConfig,
    d: &ConceptDetection,
    index: usize,
    img: &RgbImage,
    z: &mut Latent,
    masks: &Path,
) -> Result<PlanRecord, CliError> {
    let (pixel_box, gate) = plan_gate(cfg, d, img)?;
    let mut backend = toy_backend(cfg, z, d)?;
    let plan = EditPlan {
        detection: d.clone(),
        gate,
        schedule: cfg.schedule,
        mask: cfg.mask_config(),
        fixed_mask: None,
    };
    let outcome = run_localized_edit(&mut backend, &plan, z)?;
    let stages = outcome
        .stages
        .as_ref()
        .ok_or_else(|| CliError::Edit("backend produced no attention-derived mask".into()))?;

    let rel = |stage: &str| format!("masks/{index}_{stage}.png");
    let name = |stage: &str| masks.join(format!("{index}_{stage}.png"));
    let artifacts = PlanArtifacts {
        m_cross: rel("m_cross"),
        m_star: rel("m_star"),
        mask: rel("mask"),
        gate: rel("gate"),
        gated: rel("gated"),
    };
    let (h, w) = gate.dims();
    let sidecar = |kind, threshold| MaskSidecar {
        h,
        w,
        kind,
        threshold,
    };
    write_real_map(&name("m_cross"), &stages.m_cross)?;
    write_real_map(&name("m_star"), &stages.m_star.values)?;
    write_binary_mask(
        &name("mask"),
        &stages.mask.bits,
        &sidecar(MaskKind::Mask, Some(cfg.tau)),
    )?;
    write_binary_mask(&name("gate"), &gate.bits(), &sidecar(MaskKind::Gate, None))?;
    write_binary_mask(
        &name("gated"),
        &outcome.effective_mask.bits,
        &sidecar(MaskKind::Gated, Some(cfg.tau)),
    )?;

    let record = PlanRecord {
        index,
        label: d.label.clone(),
        blend_words: d.blend_words.clone(),
        pixel_box,
        gate_rect: gate.rect(),
        mask_cells: stages.mask.count_ones(),
        gated_cells: outcome.effective_mask.count_ones(),
        degenerate_mask: stages.mask.degenerate,
        solver_iterations: stages.m_star.iterations,
        solver_relative_residual: stages.m_star.relative_residual,
        artifacts,
    };
    *z = outcome.edited;
    Ok(record)
}
