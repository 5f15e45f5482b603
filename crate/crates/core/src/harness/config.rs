//! TOML experiment configuration. See `docs/config.md` for an annotated
//! example.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{AugmentConfig, DataSource};
use crate::ensemble::WeightMode;
use crate::error::{Error, Result};
use crate::generator::{GeneratorKind, GeneratorSpec};
use crate::losses::{KdConfig, KdMode};
use crate::model::{ArchSpec, InputShape};
use crate::search::RunConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Number of seeds, run as `seed, seed + 1, ...`.
    #[serde(default = "one")]
    pub repeat: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: usize,
    pub dataset: DataSource,
    #[serde(default)]
    pub run: RunBlock,
    pub generator: GeneratorBlock,
    #[serde(default)]
    pub augment: Option<AugmentConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn one() -> usize {
    1
}

/// The `[run]` table. Every key is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunBlock {
    pub iterations: usize,
    pub kd_mode: KdMode,
    pub temperature: f64,
    pub scale_by_t_squared: bool,
    pub lambda_kd: f64,
    pub weight_mode: WeightMode,
    pub steps_per_iteration: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub mixture_lr: f64,
    pub mixture_every: usize,
    pub mixture_final_steps: usize,
    pub log_every: usize,
}

impl Default for RunBlock {
    fn default() -> Self {
        let r = RunConfig::default();
        Self {
            iterations: r.iterations,
            kd_mode: r.kd.mode,
            temperature: r.kd.temperature,
            scale_by_t_squared: r.kd.scale_by_t_squared,
            lambda_kd: r.lambda_kd,
            weight_mode: r.weight_mode,
            steps_per_iteration: r.steps_per_iteration,
            batch_size: r.batch_size,
            base_lr: r.base_lr,
            momentum: r.momentum,
            clip_norm: r.clip_norm,
            mixture_lr: r.mixture_lr,
            mixture_every: r.mixture_every,
            mixture_final_steps: r.mixture_final_steps,
            log_every: r.log_every,
        }
    }
}

/// Dynamic-generator defaults, sized for desk-scale runs.
pub const DEFAULT_START: ArchSpec = ArchSpec { depth: 1, width: 8 };
pub const DEFAULT_DEPTH_INCREMENT: usize = 1;
pub const DEFAULT_WIDTH_INCREMENT: usize = 8;

/// The `[generator]` table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorBlock {
    pub kind: GeneratorKind,
    /// Required for `constant`.
    #[serde(default)]
    pub constant_arch: Option<ArchSpec>,
    /// Dynamic kinds only; defaults to [`DEFAULT_START`].
    #[serde(default)]
    pub start_arch: Option<ArchSpec>,
    #[serde(default)]
    pub depth_increment: Option<usize>,
    #[serde(default)]
    pub width_increment: Option<usize>,
    /// Unlimited when absent.
    #[serde(default)]
    pub budget: Option<u64>,
}

impl GeneratorBlock {
    pub fn to_spec(&self) -> Result<GeneratorSpec> {
        let budget = self.budget.unwrap_or(u64::MAX);
        let spec = match self.kind {
            GeneratorKind::Constant => {
                if self.start_arch.is_some() || self.depth_increment.is_some() || self.width_increment.is_some() {
                    return Err(Error::Config(
                        "generator: constant takes constant_arch only, not start_arch or increments".into(),
                    ));
                }
                let arch = self
                    .constant_arch
                    .ok_or_else(|| Error::Config("generator: constant needs constant_arch".into()))?;
                GeneratorSpec::constant(arch, budget)
            }
            kind => {
                if self.constant_arch.is_some() {
                    return Err(Error::Config(
                        "generator: dynamic kinds take start_arch, not constant_arch".into(),
                    ));
                }
                let spec = GeneratorSpec::dynamic(
                    self.start_arch.unwrap_or(DEFAULT_START),
                    self.depth_increment.unwrap_or(DEFAULT_DEPTH_INCREMENT),
                    self.width_increment.unwrap_or(DEFAULT_WIDTH_INCREMENT),
                    budget,
                );
                if kind == GeneratorKind::DynamicReconsider {
                    spec.reconsidering()
                } else {
                    spec
                }
            }
        };
        spec.validate().map_err(config_err)?;
        Ok(spec)
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Invalid(m) => Error::Config(m),
        other => other,
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates `path`. Relative dataset paths are resolved
    /// against the file's directory; `output_dir` stays relative to the
    /// working directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DataSource::Csv { train, test, .. } | DataSource::Binary { train, test } = &mut cfg.dataset {
            for p in [train, test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Checks everything that can be checked without touching the data.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!(
                "name {:?} must be a non-empty single path component",
                self.name
            )));
        }
        if self.repeat == 0 {
            return Err(Error::Config("repeat must be >= 1".into()));
        }
        self.run_config(self.seed)?;
        if let Some(aug) = &self.augment {
            if aug.crop_to == 0 || aug.pad_to < aug.crop_to {
                return Err(Error::Config(format!(
                    "augment: need pad_to >= crop_to >= 1 (pad_to {}, crop_to {})",
                    aug.pad_to, aug.crop_to
                )));
            }
        }
        Ok(())
    }

    /// Checks the augment block against the loaded data's shape.
    pub fn check_against(&self, input: InputShape) -> Result<()> {
        match (self.augment.as_ref(), input) {
            (None, _) => Ok(()),
            (Some(_), InputShape::Flat { .. }) => Err(Error::Config(
                "augment block given for a dataset without image shape".into(),
            )),
            (Some(a), InputShape::Image { height, width, .. }) => a.validate(height, width).map_err(config_err),
        }
    }

    /// The search configuration for one seed.
    pub fn run_config(&self, seed: u64) -> Result<RunConfig> {
        let r = &self.run;
        let cfg = RunConfig {
            iterations: r.iterations,
            kd: KdConfig {
                mode: r.kd_mode,
                temperature: r.temperature,
                scale_by_t_squared: r.scale_by_t_squared,
            },
            lambda_kd: r.lambda_kd,
            weight_mode: r.weight_mode,
            generator: self.generator.to_spec()?,
            steps_per_iteration: r.steps_per_iteration,
            batch_size: r.batch_size,
            base_lr: r.base_lr,
            momentum: r.momentum,
            clip_norm: r.clip_norm,
            mixture_lr: r.mixture_lr,
            mixture_every: r.mixture_every,
            mixture_final_steps: r.mixture_final_steps,
            log_every: r.log_every,
            seed,
            workers: self.workers,
        };
        cfg.validate().map_err(config_err)?;
        Ok(cfg)
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.repeat as u64).map(|k| self.seed.wrapping_add(k))
    }

    /// SHA-256 over every setting that affects results. Seeds, worker
    /// count and output location are excluded, so all seeds of one
    /// experiment share the hash.
    pub fn config_hash(&self) -> String {
        let key = serde_json::json!({
            "name": self.name,
            "dataset": self.dataset,
            "run": self.run,
            "generator": self.generator,
            "augment": self.augment,
        });
        hex::encode(Sha256::digest(key.to_string().as_bytes()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "smoke"

[dataset]
format = "synthetic"
kind = "gaussians"
train = 40
test = 20
classes = 2
noise = 0.3
seed = 1

[run]
iterations = 1
steps_per_iteration = 100

[generator]
kind = "constant"
constant_arch = "1@4"
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.repeat, 1);
        let run = cfg.run_config(7).unwrap();
        assert_eq!(
            (run.batch_size, run.base_lr, run.momentum, run.clip_norm),
            (32, 0.025, 0.9, 5.0)
        );
        assert_eq!(run.seed, 7);
        assert_eq!(run.generator.budget, u64::MAX);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("iterations = 1", "kd_mod = \"akd\"");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("kd_mod"), "{err}");
        let text = MINIMAL.replace("noise = 0.3", "noise = 0.3\nnoize = 1");
        assert!(ExperimentConfig::parse(&text)
            .unwrap_err()
            .to_string()
            .contains("noize"));
    }

    #[test]
    fn generator_block_rules() {
        let dynamic = MINIMAL.replace("kind = \"constant\"\nconstant_arch = \"1@4\"", "kind = \"dynamic\"");
        let spec = ExperimentConfig::parse(&dynamic).unwrap().generator.to_spec().unwrap();
        assert_eq!(spec.kind, GeneratorKind::Dynamic);
        assert_eq!(
            (spec.arch, spec.depth_increment, spec.width_increment),
            (DEFAULT_START, 1, 8)
        );
        let mixed = dynamic.replace("kind = \"dynamic\"", "kind = \"dynamic\"\nconstant_arch = \"1@4\"");
        assert!(ExperimentConfig::parse(&mixed)
            .unwrap_err()
            .to_string()
            .contains("constant_arch"));
        let constant = MINIMAL.replace("constant_arch = \"1@4\"", "");
        assert!(ExperimentConfig::parse(&constant)
            .unwrap_err()
            .to_string()
            .contains("constant_arch"));
    }

    #[test]
    fn hash_ignores_seed_and_workers() {
        let a = ExperimentConfig::parse(MINIMAL).unwrap();
        let mut b = a.clone();
        b.seed = 9;
        b.workers = 4;
        assert_eq!(a.config_hash(), b.config_hash());
        b.run.lambda_kd = 0.5;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn round_trips_through_toml() {
        let a = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(ExperimentConfig::parse(&a.to_toml().unwrap()).unwrap(), a);
    }
}
