use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{LabelRule, DATASET_START, DEFAULT_DATASET_SIZE, DEFAULT_DATASET_STEPS, TRAIN_FRACTION};
use crate::dynamics::SimParams;
use crate::error::{Error, Result};
use crate::landscape::{Position, PotentialSpec, WellSpec};
use crate::tpsrl::{Env, Td3Hyper};
use crate::vae::{VaeTrainHyper, VaeVariant, SIGMA_THETA};

/// File name of the resolved configuration written next to every output.
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

/// Every tunable of a run. Parsed from TOML with dotted keys such as
/// `sim.dt = 5e-3` or `td3.tau = 0.05`; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub sim: SimParams,
    pub wells: WellSpec,
    pub potential: PotentialSpec,
    pub dataset: DatasetConfig,
    pub vae: VaeConfig,
    pub env: EnvConfig,
    pub td3: Td3Hyper,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_traj: usize,
    pub n_steps: usize,
    pub q0: Position,
    pub label_rule: LabelRule,
    pub train_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_traj: DEFAULT_DATASET_SIZE,
            n_steps: DEFAULT_DATASET_STEPS,
            q0: DATASET_START,
            label_rule: LabelRule::FirstCrossing,
            train_fraction: TRAIN_FRACTION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub variant: VaeVariant,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub weight_decay: f64,
    pub samples: usize,
    pub sigma_theta: f64,
    pub kl_half: bool,
    /// Train on the first `subset` trajectories only; 0 uses all of them.
    pub subset: usize,
    pub transitions_only: bool,
}

impl Default for VaeConfig {
    fn default() -> Self {
        let h = VaeTrainHyper::default();
        Self {
            variant: VaeVariant::Bottleneck2D,
            lr: h.lr,
            epochs: h.epochs,
            batch: h.batch,
            weight_decay: h.weight_decay,
            samples: h.samples,
            sigma_theta: SIGMA_THETA,
            kl_half: true,
            subset: 0,
            transitions_only: false,
        }
    }
}

impl VaeConfig {
    pub fn hyper(&self) -> VaeTrainHyper {
        VaeTrainHyper {
            lr: self.lr,
            epochs: self.epochs,
            batch: self.batch,
            weight_decay: self.weight_decay,
            samples: self.samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub q0: Position,
    pub episode_length: usize,
    pub alpha: f64,
    pub c_max: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let e = Env::default();
        Self {
            q0: e.q0,
            episode_length: e.episode_length,
            alpha: e.alpha,
            c_max: e.c_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_rollouts: usize,
    /// Unbiased trajectories for the baseline transition estimate.
    pub n_baseline: usize,
    pub grid_x_min: f64,
    pub grid_x_max: f64,
    pub grid_y_min: f64,
    pub grid_y_max: f64,
    pub grid_nx: usize,
    pub grid_ny: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_rollouts: 1000,
            n_baseline: 10_000,
            grid_x_min: -2.0,
            grid_x_max: 2.0,
            grid_y_min: -1.5,
            grid_y_max: 2.5,
            grid_nx: 41,
            grid_ny: 41,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}


impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_toml_string())?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.env().validate()?;
        self.td3.validate()?;
        if !(self.dataset.train_fraction > 0.0 && self.dataset.train_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "dataset.train_fraction must lie in (0, 1], got {}",
                self.dataset.train_fraction
            )));
        }
        if !(self.vae.sigma_theta > 0.0) || self.vae.batch < 2 || !(self.vae.lr > 0.0) {
            return Err(Error::Config("vae needs sigma_theta > 0, batch >= 2, lr > 0".into()));
        }
        if self.eval.grid_nx == 0 || self.eval.grid_ny == 0 {
            return Err(Error::Config("eval grid needs at least one point per axis".into()));
        }
        Ok(())
    }

    /// Simulation parameters for dataset generation.
    pub fn dataset_sim(&self) -> SimParams {
        self.sim.with_steps(self.dataset.n_steps)
    }

    pub fn env(&self) -> Env {
        Env {
            wells: self.wells,
            potential: self.potential.clone(),
            sim: self.sim.with_steps(self.env.episode_length),
            q0: self.env.q0,
            episode_length: self.env.episode_length,
            alpha: self.env.alpha,
            c_max: self.env.c_max,
        }
    }
}
