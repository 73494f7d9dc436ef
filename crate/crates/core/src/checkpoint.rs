//! Checkpoint directories.
//!
//! ```text
//! <dir>/manifest.json         model config, parameter table, optional trainer state
//! <dir>/params/<name>.ptnsr   one file per parameter
//! <dir>/optim/<name>.m.ptnsr  Adam first moment (trainer checkpoints only)
//! <dir>/optim/<name>.v.ptnsr  Adam second moment
//! <dir>/train_log.csv         per-sample losses so far (trainer checkpoints only)
//! ```
//!
//! Tensors are stored as `f32`, so a checkpoint of an `f32` run restores it
//! bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PuNet;
use crate::params::{ParamGroup, ParamStore};
use crate::ptnsr;
use crate::scalar::Scalar;
use crate::train::{read_log, write_log, AdamConfig, AdamState, Moments, TrainConfig, TrainSession};

pub const MANIFEST: &str = "manifest.json";
pub const TRAIN_LOG: &str = "train_log.csv";
const FORMAT: &str = "punet-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub file: String,
    pub group: ParamGroup,
    pub frozen: bool,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerEntry {
    pub config: AdamConfig,
    pub t: u64,
    /// Parameter name → (first-moment file, second-moment file).
    pub moments: BTreeMap<String, (String, String)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerEntry {
    pub config: TrainConfig,
    pub next_epoch: usize,
    pub step: u64,
    pub optimizer: OptimizerEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub model: PuNet,
    pub params: Vec<ParamEntry>,
    pub trainer: Option<TrainerEntry>,
}

fn params_dir(dir: &Path) -> PathBuf {
    dir.join("params")
}

fn write_params<T: Scalar>(dir: &Path, store: &ParamStore<T>) -> Result<Vec<ParamEntry>> {
    store
        .iter()
        .map(|(name, p)| {
            let file = format!("params/{name}.ptnsr");
            ptnsr::write(&dir.join(&file), &p.value)?;
            Ok(ParamEntry {
                name: name.to_string(),
                file,
                group: p.group,
                frozen: p.frozen,
                shape: p.value.shape().to_vec(),
            })
        })
        .collect()
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(m).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn prepare(dir: &Path) -> Result<()> {
    // Stale files from an earlier, larger model would otherwise linger.
    for sub in ["params", "optim"] {
        let d = dir.join(sub);
        if d.exists() {
            fs::remove_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
    }
    fs::create_dir_all(params_dir(dir)).map_err(|e| Error::io(dir, e))
}

/// Saves model weights and freeze flags.
pub fn save_model<T: Scalar>(dir: &Path, net: &PuNet, store: &ParamStore<T>) -> Result<()> {
    prepare(dir)?;
    let params = write_params(dir, store)?;
    write_manifest(
        dir,
        &Manifest {
            format: FORMAT.into(),
            model: net.clone(),
            params,
            trainer: None,
        },
    )
}

/// Saves a session so that [`load_session`] can continue it exactly.
pub fn save_session<T: Scalar>(dir: &Path, s: &TrainSession<T>) -> Result<()> {
    prepare(dir)?;
    let params = write_params(dir, &s.store)?;
    let mut moments = BTreeMap::new();
    for (name, mo) in s.adam.moments() {
        let (mf, vf) = (format!("optim/{name}.m.ptnsr"), format!("optim/{name}.v.ptnsr"));
        ptnsr::write(&dir.join(&mf), &mo.m)?;
        ptnsr::write(&dir.join(&vf), &mo.v)?;
        moments.insert(name.to_string(), (mf, vf));
    }
    write_log(&dir.join(TRAIN_LOG), &s.log)?;
    write_manifest(
        dir,
        &Manifest {
            format: FORMAT.into(),
            model: s.net.clone(),
            params,
            trainer: Some(TrainerEntry {
                config: s.config.clone(),
                next_epoch: s.next_epoch,
                step: s.step,
                optimizer: OptimizerEntry {
                    config: s.adam.config,
                    t: s.adam.t,
                    moments,
                },
            }),
        },
    )
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if m.format != FORMAT {
        return Err(Error::format(&path, format!("unsupported checkpoint format `{}`", m.format)));
    }
    Ok(m)
}

/// Loads weights and freeze flags, checking names and shapes against the
/// architecture recorded in the manifest.
pub fn load_model<T: Scalar>(dir: &Path) -> Result<(PuNet, ParamStore<T>)> {
    let m = read_manifest(dir)?;
    let net = PuNet::new(m.model.config().clone(), m.model.raters())?;
    let expected: ParamStore<T> = net.init_params(0)?;
    let mut store = ParamStore::new();
    for e in &m.params {
        let path = dir.join(&e.file);
        let value = ptnsr::read(&path)?;
        match expected.get(&e.name) {
            None => return Err(Error::format(&path, format!("`{}` is not part of this architecture", e.name))),
            Some(p) if p.value.shape() != value.shape() => {
                return Err(Error::format(
                    &path,
                    format!("`{}` has shape {:?}, architecture needs {:?}", e.name, value.shape(), p.value.shape()),
                ))
            }
            Some(p) if p.group != e.group => {
                return Err(Error::format(&path, format!("`{}` recorded in group {}", e.name, e.group)))
            }
            _ => {}
        }
        store.insert(&e.name, e.group, value)?;
        store.set_frozen(&e.name, e.frozen)?;
    }
    if store.len() != expected.len() {
        let missing: Vec<&str> = expected.names().filter(|n| store.get(n).is_none()).collect();
        return Err(Error::format(dir.join(MANIFEST), format!("missing parameters {missing:?}")));
    }
    Ok((net, store))
}

/// Restores a session saved by [`save_session`].
pub fn load_session<T: Scalar>(dir: &Path) -> Result<TrainSession<T>> {
    let (net, store) = load_model::<T>(dir)?;
    let m = read_manifest(dir)?;
    let tr = m
        .trainer
        .ok_or_else(|| Error::format(dir.join(MANIFEST), "checkpoint has no trainer state to resume"))?;
    let mut moments = BTreeMap::new();
    for (name, (mf, vf)) in &tr.optimizer.moments {
        moments.insert(
            name.clone(),
            Moments {
                m: ptnsr::read(&dir.join(mf))?,
                v: ptnsr::read(&dir.join(vf))?,
            },
        );
    }
    let log = read_log(&dir.join(TRAIN_LOG))?;
    Ok(TrainSession {
        net,
        store,
        config: tr.config,
        adam: AdamState::from_parts(tr.optimizer.config, tr.optimizer.t, moments),
        next_epoch: tr.next_epoch,
        step: tr.step,
        log,
    })
}
