//! Prompt-free comparison models: majority-vote training, label sampling and
//! one segmentation head per rater.

use super::sampler::TrainingStrategy;
use super::schedule::Schedule;
use super::trainer::{train, TrainConfig, TrainSession};
use crate::error::{Error, Result};
use crate::model::{FineTuneMode, Insertion, PuNet, UNetConfig};
use crate::params::{ParamGroup, ParamStore};
use crate::scalar::Scalar;
use crate::synth::MultiRaterDataset;

/// Which prompt-free baseline to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    MajorityVote,
    LabelSampling,
    MultiHead,
}

impl Baseline {
    pub fn net(self, config: &UNetConfig, raters: usize) -> Result<PuNet> {
        let seg_heads = if self == Baseline::MultiHead { raters } else { 1 };
        PuNet::new(
            UNetConfig {
                insertion: Insertion::None,
                seg_heads,
                ..config.clone()
            },
            raters,
        )
    }

    pub fn strategy(self) -> TrainingStrategy {
        match self {
            Baseline::MajorityVote => TrainingStrategy::FusionOnly,
            Baseline::LabelSampling => TrainingStrategy::LabelSampling,
            Baseline::MultiHead => TrainingStrategy::IndividualOnly,
        }
    }
}

/// Copies every backbone parameter of `from` into `into` by name.
pub fn warm_start<T: Scalar>(into: &mut ParamStore<T>, from: &ParamStore<T>) -> Result<usize> {
    let names: Vec<String> = into
        .iter()
        .filter(|(_, p)| p.group == ParamGroup::Backbone)
        .map(|(n, _)| n.to_string())
        .collect();
    for name in &names {
        let src = from
            .get(name)
            .ok_or_else(|| Error::Config(format!("pretrained weights lack `{name}`")))?;
        into.set_value(name, src.value.clone())?;
    }
    Ok(names.len())
}

/// Trains `baseline` in full mode on `data`, optionally starting from the
/// backbone of `pretrained`.
pub fn train_baseline<T: Scalar>(
    baseline: Baseline,
    config: &UNetConfig,
    data: &MultiRaterDataset<T>,
    schedule: Schedule,
    seed: u64,
    pretrained: Option<&ParamStore<T>>,
) -> Result<TrainSession<T>> {
    if data.raters() < 2 && baseline != Baseline::LabelSampling {
        return Err(Error::Config("multi-rater baselines need at least 2 raters".into()));
    }
    let net = baseline.net(config, data.raters())?;
    let mut store = net.init_params(seed)?;
    if let Some(p) = pretrained {
        warm_start(&mut store, p)?;
    }
    let cfg = TrainConfig::new(FineTuneMode::Full, baseline.strategy(), schedule, seed);
    train(&net, store, data, cfg)
}

pub fn baseline_multihead<T: Scalar>(
    config: &UNetConfig,
    data: &MultiRaterDataset<T>,
    schedule: Schedule,
    seed: u64,
) -> Result<TrainSession<T>> {
    train_baseline(Baseline::MultiHead, config, data, schedule, seed, None)
}

pub fn baseline_label_sampling<T: Scalar>(
    config: &UNetConfig,
    data: &MultiRaterDataset<T>,
    schedule: Schedule,
    seed: u64,
) -> Result<TrainSession<T>> {
    train_baseline(Baseline::LabelSampling, config, data, schedule, seed, None)
}
