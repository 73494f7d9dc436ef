//! Flat JSON run configuration.
//!
//! Every key is optional and falls back to [`RunConfig::default`]; unknown
//! keys are rejected. The resolved configuration is written as
//! `resolved_config.json` next to every command's outputs.

use std::fs;
use std::path::{Path, PathBuf};

use punet::eval::ablation::Benchmark;
use punet::model::{FineTuneMode, Insertion, UNetConfig};
use punet::synth::{default_profiles, DomainShift, RaterProfile, SceneConfig};
use punet::train::{Schedule, TrainConfig, TrainingStrategy, DEFAULT_SMOOTH};
use punet::Error;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const SEED_ENV: &str = "PUNET_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed. `--seed` beats this key, which beats `PUNET_SEED`.
    pub seed: Option<u64>,

    pub stages: usize,
    pub base_channels: usize,
    pub height: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn_ratio: usize,
    pub prompt_dim: usize,
    pub prompt_tokens: usize,
    pub insertion: Insertion,
    pub encoder_blocks: Vec<usize>,

    pub profiles: Vec<RaterProfile>,
    pub noise_std: f64,
    pub source_scenes: usize,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub target_contrast: f64,
    pub target_shift: f64,

    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_drops: Vec<usize>,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub finetune_drops: Vec<usize>,
    pub drop_factor: f64,
    pub batch_size: usize,
    pub smooth: f64,
    pub strategy: TrainingStrategy,
    pub mode: FineTuneMode,

    pub ablation_seeds: Vec<u64>,
    /// Test scenes rendered as overlays by `eval`.
    pub overlay_scenes: usize,

    pub data_dir: PathBuf,
    pub pretrain_dir: PathBuf,
    pub finetune_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = UNetConfig::default();
        let bench = Benchmark::default();
        RunConfig {
            seed: None,
            stages: model.stages,
            base_channels: model.base_channels,
            height: model.input_size.0,
            width: model.input_size.1,
            heads: model.heads,
            ffn_ratio: model.ffn_ratio,
            prompt_dim: model.prompt_dim,
            prompt_tokens: model.prompt_tokens,
            insertion: model.insertion,
            encoder_blocks: model.encoder_blocks,
            profiles: default_profiles(),
            noise_std: SceneConfig::default().noise_std,
            source_scenes: bench.source_scenes,
            train_scenes: bench.train_scenes,
            test_scenes: bench.test_scenes,
            target_contrast: bench.target.contrast,
            target_shift: bench.target.shift,
            pretrain_epochs: bench.pretrain.epochs,
            pretrain_lr: bench.pretrain.base_lr,
            pretrain_drops: bench.pretrain.drops.clone(),
            finetune_epochs: bench.finetune.epochs,
            finetune_lr: bench.finetune.base_lr,
            finetune_drops: bench.finetune.drops,
            drop_factor: bench.pretrain.drop_factor,
            batch_size: bench.batch_size,
            smooth: DEFAULT_SMOOTH,
            strategy: TrainingStrategy::Mix,
            mode: FineTuneMode::PromptAndHead,
            ablation_seeds: vec![1, 2, 3],
            overlay_scenes: 2,
            data_dir: "data".into(),
            pretrain_dir: "ckpt/pretrain".into(),
            finetune_dir: "ckpt/finetune".into(),
            report_dir: "report".into(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| CliError::ConfigFile {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Reads `path`, or returns the defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| Error::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                RunConfig::from_json(&text, p)
            }
        }
    }

    /// Applies the seed precedence: `cli`, then the file, then `env`, then 0.
    pub fn resolve_seed(&mut self, cli: Option<u64>, env: Option<&str>) -> Result<u64> {
        let from_env = match env {
            Some(s) => Some(
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("{SEED_ENV}=`{s}` is not an unsigned integer")))?,
            ),
            None => None,
        };
        let seed = cli.or(self.seed).or(from_env).unwrap_or(0);
        self.seed = Some(seed);
        Ok(seed)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn model(&self) -> UNetConfig {
        UNetConfig {
            stages: self.stages,
            base_channels: self.base_channels,
            input_size: (self.height, self.width),
            heads: self.heads,
            ffn_ratio: self.ffn_ratio,
            prompt_dim: self.prompt_dim,
            prompt_tokens: self.prompt_tokens,
            insertion: self.insertion,
            encoder_blocks: self.encoder_blocks.clone(),
            ..UNetConfig::default()
        }
    }

    pub fn pretrain_schedule(&self) -> Schedule {
        Schedule {
            base_lr: self.pretrain_lr,
            drops: self.pretrain_drops.clone(),
            drop_factor: self.drop_factor,
            epochs: self.pretrain_epochs,
        }
    }

    pub fn finetune_schedule(&self) -> Schedule {
        Schedule {
            base_lr: self.finetune_lr,
            drops: self.finetune_drops.clone(),
            drop_factor: self.drop_factor,
            epochs: self.finetune_epochs,
        }
    }

    pub fn target_shift(&self) -> DomainShift {
        DomainShift {
            contrast: self.target_contrast,
            shift: self.target_shift,
        }
    }

    /// The same run expressed as a library benchmark, so that CLI stages and
    /// `ablate` share seeds and data.
    pub fn benchmark(&self) -> Benchmark {
        Benchmark {
            model: self.model(),
            profiles: self.profiles.clone(),
            noise_std: self.noise_std,
            source_scenes: self.source_scenes,
            train_scenes: self.train_scenes,
            test_scenes: self.test_scenes,
            target: self.target_shift(),
            pretrain: self.pretrain_schedule(),
            finetune: self.finetune_schedule(),
            batch_size: self.batch_size,
            smooth: self.smooth,
        }
    }

    pub fn train_config(&self, mode: FineTuneMode, strategy: TrainingStrategy, schedule: Schedule, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            smooth: self.smooth,
            ..TrainConfig::new(mode, strategy, schedule, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model();
        model.validate()?;
        self.pretrain_schedule().validate()?;
        self.finetune_schedule().validate()?;
        SceneConfig {
            height: self.height,
            width: self.width,
            noise_std: self.noise_std,
            domain: self.target_shift(),
        }
        .validate()?;
        if self.profiles.len() < 2 {
            return Err(Error::Config(format!("need at least 2 rater profiles, got {}", self.profiles.len())).into());
        }
        for p in &self.profiles {
            p.validate(self.height, self.width)?;
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()).into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Writes `resolved_config.json` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_json()).map_err(|source| Error::Io { path, source })?;
        Ok(())
    }
}
