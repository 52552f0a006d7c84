//! `safe-edit` command-line driver.
//!
//! Every command prints a JSON summary on stdout. On failure, a JSON error
//! object goes to stderr and the process exits with the code of the error
//! family (see [`error::EXIT_CODES`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};

use safe_edit_core::eval::{
    aggregate_detector_scores, moderation_rates, read_judgments, Condition, DetectorScoreTable,
};
use safe_edit_core::protocol::PolicyPrompt;
use safe_edit_core::VlmClient;

use commands::{check_exists, check_unique_ids, image_id, manifest, write_json};
pub use config::{Overrides, PipelineConfig};
pub use error::{CliError, EXIT_CODES};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "safe-edit", version, about = "Post-hoc safety editing of generated images", after_help = EXIT_CODES)]
pub struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ask the detector which policy-violating instances an image contains.
    Audit {
        /// Image to audit; repeat for a batch.
        #[arg(long = "image", required = true)]
        images: Vec<PathBuf>,
        /// Directory of recorded detector exchanges.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// One subdirectory per image is written here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Edit each detected instance out of an image.
    Edit {
        /// Image to edit; repeat for a batch.
        #[arg(long = "image", required = true)]
        images: Vec<PathBuf>,
        /// Detections JSON, one per `--image`, in the same order.
        #[arg(long = "detections", required = true)]
        detections: Vec<PathBuf>,
        /// One subdirectory per image is written here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Score background fidelity and alignment of an edit.
    Eval {
        /// Image before editing.
        #[arg(long)]
        orig: PathBuf,
        /// Image after editing.
        #[arg(long)]
        edited: PathBuf,
        /// Detections JSON; its boxes are excluded from the background.
        #[arg(long)]
        detections: PathBuf,
        /// Report path. The report is also printed.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the benchmark prompt manifest.
    GenManifest {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Number of single-concept prompts.
        #[arg(long, default_value_t = manifest::DEFAULT_SINGLE)]
        single: usize,
        /// Number of multi-concept prompts.
        #[arg(long, default_value_t = manifest::DEFAULT_MULTI)]
        multi: usize,
        /// Comma-separated category ids (default: all five).
        #[arg(long, value_delimiter = ',')]
        categories: Vec<String>,
        /// Comma-separated background list.
        #[arg(long, value_delimiter = ',')]
        backgrounds: Vec<String>,
    },
    /// Aggregate category-detector scores from CSV (`entity,original,general,specific`).
    Scores {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recognizability rates from moderation judgments CSV.
    Moderation {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, value_enum, default_value_t = ConditionArg::Edited)]
        condition: ConditionArg,
        /// Count generic labels as non-recognitions.
        #[arg(long)]
        exclude_generic: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the detector policy prompt for the configured categories.
    PolicyPrompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConditionArg {
    Original,
    Edited,
}

fn out_dir(cfg: &PipelineConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.paths.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))
}

fn maybe_write(out: Option<&Path>, value: &Value) -> Result<(), CliError> {
    if let Some(p) = out {
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
        }
        write_json(p, value)?;
    }
    Ok(())
}

/// Runs one parsed command and returns its stdout summary.
pub fn run(cli: Cli) -> Result<Value, CliError> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    cfg.apply(&cli.overrides);
    cfg.validate()?;

    match cli.command {
        Command::Audit {
            images,
            fixtures,
            out_dir: flag,
        } => {
            check_exists(&images)?;
            check_unique_ids(&images)?;
            let fixtures = fixtures.or_else(|| cfg.paths.fixtures.clone());
            let client = VlmClient::new(cfg.client.clone(), fixtures.as_deref())?;
            let prompt = PolicyPrompt::new(&cfg.categories()?)?;
            let dir = out_dir(&cfg, flag);
            let results: Vec<Result<Value, CliError>> = pool(cfg.workers)?.install(|| {
                images
                    .par_iter()
                    .map(|img| {
                        let (path, set) = commands::audit::audit_one(&client, &prompt, img, &dir)
                            .map_err(|e| e.in_image(image_id(img), None))?;
                        Ok(json!({
                            "image": img.display().to_string(),
                            "detections": path.display().to_string(),
                            "count": set.count(),
                        }))
                    })
                    .collect()
            });
            let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
            Ok(
                json!({"schema_version": SUMMARY_SCHEMA_VERSION, "command": "audit", "results": results}),
            )
        }
        Command::Edit {
            images,
            detections,
            out_dir: flag,
        } => {
            if images.len() != detections.len() {
                return Err(CliError::Config(format!(
                    "{} images but {} detection files",
                    images.len(),
                    detections.len()
                )));
            }
            check_exists(&images)?;
            check_exists(&detections)?;
            check_unique_ids(&images)?;
            let dir = out_dir(&cfg, flag);
            let results: Vec<Result<Value, CliError>> = pool(cfg.workers)?.install(|| {
                images
                    .par_iter()
                    .zip(detections.par_iter())
                    .map(|(img, det)| {
                        let rec =
                            commands::edit::edit_one(&cfg, img, det, &dir).map_err(
                                |e| match e {
                                    e @ CliError::Context { .. } => e,
                                    e => e.in_image(image_id(img), None),
                                },
                            )?;
                        Ok(json!({
                            "image": img.display().to_string(),
                            "run_dir": dir.join(&rec.image_id).display().to_string(),
                            "status": rec.status,
                            "instances": rec.plans.len(),
                        }))
                    })
                    .collect()
            });
            let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
            Ok(
                json!({"schema_version": SUMMARY_SCHEMA_VERSION, "command": "edit", "results": results}),
            )
        }
        Command::Eval {
            orig,
            edited,
            detections,
            out,
        } => {
            check_exists(&[&orig, &edited, &detections])?;
            let rec = commands::eval::eval_one(&cfg, &orig, &edited, &detections)?;
            let value = serde_json::to_value(&rec).expect("eval record serializes");
            maybe_write(out.as_deref(), &value)?;
            Ok(value)
        }
        Command::GenManifest {
            seed,
            out,
            single,
            multi,
            categories,
            backgrounds,
        } => {
            let cats = if categories.is_empty() {
                manifest::ALL_CATEGORIES.to_vec()
            } else {
                categories
                    .iter()
                    .map(|s| manifest::parse_category(s))
                    .collect::<Result<Vec<_>, _>>()?
            };
            let bgs = if backgrounds.is_empty() {
                manifest::DEFAULT_BACKGROUNDS
                    .iter()
                    .map(|s| s.to_string())
                    .collect()
            } else {
                backgrounds
            };
            let m = manifest::generate_manifest(seed, single, multi, &cats, &bgs)?;
            let value = serde_json::to_value(&m).expect("manifest serializes");
            maybe_write(Some(&out), &value)?;
            Ok(json!({
                "schema_version": SUMMARY_SCHEMA_VERSION,
                "command": "gen-manifest",
                "out": out.display().to_string(),
                "counts": m.counts,
            }))
        }
        Command::Scores { csv, out } => {
            let f = std::fs::File::open(&csv)
                .map_err(|e| CliError::Io(format!("{}: {e}", csv.display())))?;
            let summary = aggregate_detector_scores(&DetectorScoreTable::from_csv(f)?)?;
            let value = json!({"schema_version": SUMMARY_SCHEMA_VERSION, "scores": summary});
            maybe_write(out.as_deref(), &value)?;
            Ok(value)
        }
        Command::Moderation {
            csv,
            condition,
            exclude_generic,
            out,
        } => {
            let f = std::fs::File::open(&csv)
                .map_err(|e| CliError::Io(format!("{}: {e}", csv.display())))?;
            let records = read_judgments(f)?;
            let condition = match condition {
                ConditionArg::Original => Condition::Original,
                ConditionArg::Edited => Condition::Edited,
            };
            let report = moderation_rates(&records, condition, exclude_generic)?;
            let value = json!({
                "schema_version": SUMMARY_SCHEMA_VERSION,
                "condition": condition,
                "exclude_generic": exclude_generic,
                "moderation": report,
            });
            maybe_write(out.as_deref(), &value)?;
            Ok(value)
        }
        Command::PolicyPrompt => {
            let prompt = PolicyPrompt::new(&cfg.categories()?)?;
            Ok(json!({"schema_version": SUMMARY_SCHEMA_VERSION, "prompt": prompt.text()}))
        }
    }
}
