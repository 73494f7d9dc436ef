//! The epoch loop: sample, forward, Dice loss, backward, Adam.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::loss::{dice_loss, DEFAULT_SMOOTH};
use super::sampler::{epoch_order, TrainingStrategy};
use super::schedule::Schedule;
use crate::autodiff::{Gradients, Tape};
use crate::error::{Error, Result};
use crate::model::{param_partition, FineTuneMode, PuNet, RaterTag};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::synth::MultiRaterDataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: FineTuneMode,
    pub strategy: TrainingStrategy,
    pub schedule: Schedule,
    pub batch_size: usize,
    pub seed: u64,
    pub smooth: f64,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn new(mode: FineTuneMode, strategy: TrainingStrategy, schedule: Schedule, seed: u64) -> Self {
        TrainConfig {
            mode,
            strategy,
            schedule,
            batch_size: 4,
            seed,
            smooth: DEFAULT_SMOOTH,
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.smooth > 0.0) {
            return Err(Error::Config("dice smoothing must be positive".into()));
        }
        Ok(())
    }
}

/// One sample's loss within an optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub step: u64,
    pub tag: RaterTag,
    pub loss: f64,
    pub lr: f64,
}

pub fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(path, e)))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!("checked is_io_error"),
        }
    } else {
        Error::format(path, e.to_string())
    }
}

/// Mean logged loss per epoch, in epoch order.
pub fn epoch_means(rows: &[LogRow]) -> Vec<f64> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for r in rows {
        if out.len() <= r.epoch {
            out.resize(r.epoch + 1, (0.0, 0));
        }
        out[r.epoch].0 += r.loss;
        out[r.epoch].1 += 1;
    }
    out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
}

/// A training run that can be stopped after any epoch and resumed.
#[derive(Clone, Debug)]
pub struct TrainSession<T> {
    pub net: PuNet,
    pub store: ParamStore<T>,
    pub config: TrainConfig,
    pub adam: AdamState<T>,
    /// First epoch not yet run.
    pub next_epoch: usize,
    pub step: u64,
    pub log: Vec<LogRow>,
}

impl<T: Scalar> TrainSession<T> {
    /// Starts a run: freezes `store` according to `config.mode`.
    pub fn new(net: PuNet, mut store: ParamStore<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        param_partition(&mut store, config.mode);
        let adam = AdamState::new(&store, config.adam);
        Ok(TrainSession {
            net,
            store,
            config,
            adam,
            next_epoch: 0,
            step: 0,
            log: Vec::new(),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.next_epoch >= self.config.schedule.epochs
    }

    /// Runs epochs until `until` (exclusive) or the end of the schedule.
    pub fn run(&mut self, data: &MultiRaterDataset<T>, until: Option<usize>) -> Result<()> {
        if data.raters() != self.net.raters() {
            return Err(Error::Config(format!(
                "model expects {} raters, dataset has {}",
                self.net.raters(),
                data.raters()
            )));
        }
        let (h, w) = self.net.config().input_size;
        if (data.config.height, data.config.width) != (h, w) {
            return Err(Error::Config(format!(
                "model expects {h}×{w} images, dataset has {}×{}",
                data.config.height, data.config.width
            )));
        }
        let end = until.unwrap_or(usize::MAX).min(self.config.schedule.epochs);
        while self.next_epoch < end {
            self.run_epoch(data)?;
        }
        Ok(())
    }

    fn run_epoch(&mut self, data: &MultiRaterDataset<T>) -> Result<()> {
        let epoch = self.next_epoch;
        let lr = self.config.schedule.lr_at(epoch);
        let order = epoch_order(data.len(), data.raters(), self.config.strategy, self.config.seed, epoch)?;
        for batch in order.chunks(self.config.batch_size) {
            let mut acc: Option<Gradients<T>> = None;
            for &(scene, tag) in batch {
                let sample = data.sample(scene, tag)?;
                let mut tape = Tape::new();
                let x = tape.constant(sample.image.clone());
                let fwd = self.net.forward(&mut tape, &self.store, x, tag)?;
                let loss = dice_loss(&mut tape, fwd.logits, sample.mask, T::of(self.config.smooth))?;
                let value = tape.value(loss).item().as_f64();
                if !value.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss {value} at epoch {epoch}, step {}, scene {scene}, tag {tag}, lr {lr}",
                        self.step
                    )));
                }
                let g = tape.backward(loss, &self.store)?;
                match &mut acc {
                    None => acc = Some(g),
                    Some(a) => a.accumulate(&g),
                }
                self.log.push(LogRow {
                    epoch,
                    step: self.step,
                    tag,
                    loss: value,
                    lr,
                });
            }
            let mut grads = acc.expect("chunks are non-empty");
            grads.scale(T::one() / T::of(batch.len() as f64));
            if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for `{name}` at epoch {epoch}, step {}, lr {lr}",
                    self.step
                )));
            }
            self.adam.step(&mut self.store, &grads, lr)?;
            self.step += 1;
        }
        self.next_epoch += 1;
        Ok(())
    }
}

/// Trains `store` for the whole schedule and returns the finished session.
pub fn train<T: Scalar>(
    net: &PuNet,
    store: ParamStore<T>,
    data: &MultiRaterDataset<T>,
    config: TrainConfig,
) -> Result<TrainSession<T>> {
    let mut s = TrainSession::new(net.clone(), store, config)?;
    s.run(data, None)?;
    Ok(s)
}
