//! Run configuration: one versioned JSON document per run, with CLI flags
//! overriding the seed, output directory, and overwrite policy.

use levy_tilt_core::error::{Error, Result};
use levy_tilt_core::io::WindowSpec;
use levy_tilt_core::neural::DriftKind;
use levy_tilt_core::stable::StableSpec;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Generate,
    Train,
    Forecast,
    Evaluate,
    Compare,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Generate => "generate",
            Mode::Train => "train",
            Mode::Forecast => "forecast",
            Mode::Evaluate => "evaluate",
            Mode::Compare => "compare",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Tilted,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftChoice {
    Ou,
    DoubleWell,
    Neural { width: usize },
}

impl DriftChoice {
    pub fn kind(&self) -> DriftKind {
        match self {
            DriftChoice::Ou => DriftKind::Ou,
            DriftChoice::DoubleWell => DriftKind::DoubleWell,
            DriftChoice::Neural { width } => DriftKind::Neural { width: *width },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    pub alpha: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_sigma_g")]
    pub sigma_g: f64,
}

fn default_tau() -> f64 {
    0.01
}

fn default_sigma_g() -> f64 {
    1.0
}

impl SpecConfig {
    pub fn build(&self) -> Result<StableSpec> {
        StableSpec::new(self.alpha, self.tau, self.sigma_g)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub m_paths: usize,
    pub n_steps: usize,
    pub k_samples: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2_scale: f64,
    pub alpha_grid: Option<Vec<f64>>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            m_paths: 500,
            n_steps: 1000,
            k_samples: 1000,
            iterations: 3000,
            learning_rate: 1e-4,
            l2_scale: 1e-4,
            alpha_grid: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchSection {
    pub n_ref: usize,
    pub embed_dim: usize,
    pub head_hidden: Vec<usize>,
    pub a_min: f64,
    pub learn_sigma_eps: bool,
}

impl Default for ArchSection {
    fn default() -> Self {
        ArchSection {
            n_ref: 100,
            embed_dim: 64,
            head_hidden: vec![256; 5],
            a_min: 0.001,
            learn_sigma_eps: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    /// Realisations per alpha value.
    pub realisations: usize,
    pub alpha_grid: Vec<f64>,
    pub horizon: f64,
    pub n_steps: usize,
    pub n_obs: usize,
    pub sigma_eps: f64,
    pub x0: Vec<f64>,
    /// OU: theta drawn uniformly from here (double well: theta1).
    pub theta_range: (f64, f64),
    /// OU: mu range (double well: theta2 range).
    pub mu_range: (f64, f64),
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection {
            realisations: 1,
            alpha_grid: vec![1.5],
            horizon: 1.0,
            n_steps: 1000,
            n_obs: 64,
            sigma_eps: 0.1,
            x0: vec![0.0],
            theta_range: (0.5, 2.5),
            mu_range: (-1.0, 1.0),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastSection {
    /// Ensemble members per window.
    pub m_paths: usize,
    /// Posterior simulations providing boundary samples.
    pub boundary_paths: usize,
    /// Latent steps over the forecast horizon; defaults proportional to the
    /// training grid when absent.
    pub n_steps: Option<usize>,
}

impl Default for ForecastSection {
    fn default() -> Self {
        ForecastSection { m_paths: 256, boundary_paths: 64, n_steps: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    /// Directory holding the forecast artifacts (defaults to `output_dir`).
    pub forecast_dir: Option<PathBuf>,
    pub percentiles: Vec<f64>,
    pub levels: Vec<f64>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            forecast_dir: None,
            percentiles: vec![90.0, 95.0, 97.5, 99.0],
            levels: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareRun {
    pub name: String,
    pub metrics: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Optional; when present it must match the subcommand.
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_model")]
    pub model: ModelChoice,
    #[serde(default)]
    pub spec: Option<SpecConfig>,
    #[serde(default = "default_drift")]
    pub drift: DriftChoice,
    /// Known observation-noise std for read modes (synthetic runs read it
    /// from the manifest when present).
    #[serde(default)]
    pub sigma_eps: Option<f64>,
    /// Center window values at the first train observation. OU only: the
    /// learned mu is un-centered on output; the double-well drift is not
    /// translation covariant, so centering it is a config error.
    #[serde(default)]
    pub center_values: bool,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub architecture: ArchSection,
    #[serde(default)]
    pub window: Option<WindowSpec>,
    #[serde(default)]
    pub generate: GenerateSection,
    #[serde(default)]
    pub forecast: ForecastSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub compare: Vec<CompareRun>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_model() -> ModelChoice {
    ModelChoice::Tilted
}

fn default_drift() -> DriftChoice {
    DriftChoice::Ou
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("bad config {}: {e}", path.display())))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::config(format!("unsupported config version {}", cfg.version)));
        }
        Ok(cfg)
    }

    pub fn check_mode(&self, actual: Mode) -> Result<()> {
        if let Some(declared) = self.mode {
            if declared != actual {
                return Err(Error::config(format!(
                    "config declares mode {} but the {} subcommand was invoked",
                    declared.as_str(),
                    actual.as_str()
                )));
            }
        }
        Ok(())
    }

    pub fn require_dataset(&self) -> Result<&Path> {
        let p = self
            .dataset
            .as_deref()
            .ok_or_else(|| Error::config("this mode needs a `dataset` path"))?;
        if !p.exists() {
            return Err(Error::config(format!("dataset {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn require_spec(&self) -> Result<StableSpec> {
        self.spec
            .as_ref()
            .ok_or_else(|| Error::config("this mode needs a `spec` section"))?
            .build()
    }
}
