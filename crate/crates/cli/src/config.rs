//! Pipeline configuration: one TOML document plus command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use safe_edit_core::edit::EditSchedule;
use safe_edit_core::mask::{Aggregation, Confidence, MaskConfig, RefinementParams};
use safe_edit_core::protocol::Category;
use safe_edit_core::ClientConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Size of the per-image worker pool.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Intersect attention masks with the detector box. Disable only for
    /// ablations.
    #[serde(default = "default_true")]
    pub gate: bool,
    #[serde(default)]
    pub client: ClientConfig,
    #[serde(default)]
    pub refinement: RefinementSection,
    #[serde(default)]
    pub schedule: EditSchedule,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_tau() -> f64 {
    0.5
}
fn default_workers() -> usize {
    2
}
fn default_true() -> bool {
    true
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau: default_tau(),
            workers: default_workers(),
            gate: true,
            client: ClientConfig::default(),
            refinement: RefinementSection::default(),
            schedule: EditSchedule::default(),
            policy: PolicySection::default(),
            paths: PathsSection::default(),
            backend: BackendSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DwMode {
    #[default]
    Identity,
    Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementSection {
    pub lambda: f64,
    pub solver_tol: f64,
    pub max_iter: usize,
    pub dw_mode: DwMode,
    pub aggregation: Aggregation,
}

impl Default for RefinementSection {
    fn default() -> Self {
        let p = RefinementParams::default();
        Self {
            lambda: p.lambda,
            solver_tol: p.solver_tol,
            max_iter: p.max_iter,
            dw_mode: DwMode::Identity,
            aggregation: Aggregation::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    /// Category ids included in the policy prompt.
    pub categories: Vec<String>,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            categories: Category::ALL.iter().map(|c| c.id().to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub fixtures: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Toy,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Contraction rate of the toy denoiser.
    pub alpha: f64,
    pub attention_grid: usize,
    pub sigma_cross: f64,
    pub sigma_self: f64,
    /// RGB (0..=255) that each blend word attends to. Unlisted words get a
    /// color derived from a hash of the word.
    pub word_colors: BTreeMap<String, [u8; 3]>,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: BackendKind::Toy,
            alpha: 0.3,
            attention_grid: 16,
            sigma_cross: 0.12,
            sigma_self: 0.12,
            word_colors: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub lpips_seed: u64,
    pub lpips_features: usize,
    pub embed_seed: u64,
    pub embed_dim: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            lpips_seed: safe_edit_core::eval::RandomProjectionLpips::DEFAULT_SEED,
            lpips_features: safe_edit_core::eval::RandomProjectionLpips::DEFAULT_FEATURES,
            embed_seed: safe_edit_core::eval::MockEmbedder::DEFAULT_SEED,
            embed_dim: safe_edit_core::eval::MockEmbedder::DEFAULT_DIM,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Laplacian smoothing weight.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Binarization threshold in [0, 1].
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Relative residual target of the refinement solver.
    #[arg(long, global = true)]
    pub solver_tol: Option<f64>,
    /// Confidence weights of the refinement system.
    #[arg(long, global = true, value_enum)]
    pub dw_mode: Option<DwModeArg>,
    /// Skip box gating (ablation only).
    #[arg(long, global = true)]
    pub no_gate: bool,
    /// Worker pool size.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DwModeArg {
    Identity,
    Activation,
}

impl PipelineConfig {
    /// Loads `path` (or defaults when `None`). Relative paths inside the file
    /// resolve against the file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.paths.fixtures, &mut cfg.paths.output]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.lambda {
            self.refinement.lambda = v;
        }
        if let Some(v) = o.tau {
            self.tau = v;
        }
        if let Some(v) = o.solver_tol {
            self.refinement.solver_tol = v;
        }
        if let Some(m) = o.dw_mode {
            self.refinement.dw_mode = match m {
                DwModeArg::Identity => DwMode::Identity,
                DwModeArg::Activation => DwMode::Activation,
            };
        }
        if o.no_gate {
            self.gate = false;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(CliError::Config(format!(
                "tau {} must lie in [0, 1]",
                self.tau
            )));
        }
        if self.workers == 0 {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        self.mask_config()
            .refinement
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.schedule
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.client
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.categories()?;
        let b = &self.backend;
        if !(b.alpha > 0.0 && b.alpha < 1.0) {
            return Err(CliError::Config(format!(
                "backend.alpha {} must lie in (0, 1)",
                b.alpha
            )));
        }
        if b.attention_grid == 0 || !(b.sigma_cross > 0.0) || !(b.sigma_self > 0.0) {
            return Err(CliError::Config(
                "backend attention grid and bandwidths must be positive".into(),
            ));
        }
        if self.eval.lpips_features == 0 || self.eval.embed_dim < 2 {
            return Err(CliError::Config("eval feature sizes too small".into()));
        }
        Ok(())
    }

    pub fn categories(&self) -> Result<Vec<Category>, CliError> {
        if self.policy.categories.is_empty() {
            return Err(CliError::Config("policy.categories is empty".into()));
        }
        self.policy
            .categories
            .iter()
            .map(|s| {
                s.parse::<Category>()
                    .map_err(|e| CliError::Config(e.to_string()))
            })
            .collect()
    }

    pub fn mask_config(&self) -> MaskConfig {
        let r = &self.refinement;
        MaskConfig {
            aggregation: r.aggregation,
            refinement: RefinementParams {
                lambda: r.lambda,
                confidence: match r.dw_mode {
                    DwMode::Identity => Confidence::Identity,
                    DwMode::Activation => Confidence::Activation,
                },
                solver_tol: r.solver_tol,
                max_iter: r.max_iter,
            },
            tau: self.tau,
        }
    }
}
