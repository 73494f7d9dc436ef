//! Multi-rater datasets in memory and on disk.
//!
//! ```text
//! <dir>/dataset.json           manifest: seed, scene config, profiles, counts, geometry
//! <dir>/scenes/<k>/image.ptnsr H×W×3
//! <dir>/scenes/<k>/rater<j>.ptnsr  H×W×2 (disc, cup), j = 1..R
//! <dir>/scenes/<k>/mv.ptnsr    H×W×2 majority vote of the R rater masks
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, majority_vote, render_image, render_rater_mask, RaterProfile, SceneConfig, SyntheticScene};
use crate::error::{Error, Result};
use crate::model::RaterTag;
use crate::ptnsr;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DATASET_MANIFEST: &str = "dataset.json";
const FORMAT: &str = "punet-multirater-v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Scene<T> {
    pub index: usize,
    pub seed: u64,
    pub geometry: SyntheticScene,
    pub image: Tensor<T>,
    /// Rater `j`'s masks at position `j − 1`.
    pub raters: Vec<Tensor<T>>,
    pub mv: Tensor<T>,
}

impl<T: Scalar> Scene<T> {
    pub fn mask(&self, tag: RaterTag) -> &Tensor<T> {
        match tag {
            RaterTag::Aggregate => &self.mv,
            RaterTag::Rater(j) => &self.raters[j - 1],
        }
    }
}

/// One `(image, rater, mask)` triple.
#[derive(Clone, Copy, Debug)]
pub struct MultiRaterSample<'a, T> {
    pub scene: usize,
    pub image: &'a Tensor<T>,
    pub rater: RaterTag,
    pub mask: &'a Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiRaterDataset<T> {
    pub seed: u64,
    pub config: SceneConfig,
    pub profiles: Vec<RaterProfile>,
    pub scenes: Vec<Scene<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    seed: u64,
    config: SceneConfig,
    profiles: Vec<RaterProfile>,
    scenes: usize,
    raters: usize,
    samples: usize,
    first_index: usize,
    geometry: Vec<SyntheticScene>,
}

fn build_scene<T: Scalar>(
    index: usize,
    seed: u64,
    cfg: &SceneConfig,
    profiles: &[RaterProfile],
) -> Result<Scene<T>> {
    let scene_seed = derive_seed(seed, index as u64);
    let geometry = SyntheticScene::sample(scene_seed, cfg.height, cfg.width);
    let image = render_image(&geometry, cfg);
    let raters: Vec<Tensor<T>> = profiles
        .iter()
        .map(|p| render_rater_mask(&geometry, p, scene_seed, cfg.height, cfg.width))
        .collect();
    let mv = majority_vote(&raters.iter().collect::<Vec<_>>())?;
    Ok(Scene {
        index,
        seed: scene_seed,
        geometry,
        image,
        raters,
        mv,
    })
}

/// Generates `n_scenes` scenes with one mask per profile plus the majority vote.
///
/// Each scene draws from its own seed stream, so the result does not depend
/// on how generation is scheduled across threads.
pub fn build_dataset<T: Scalar>(
    n_scenes: usize,
    profiles: &[RaterProfile],
    seed: u64,
    cfg: &SceneConfig,
) -> Result<MultiRaterDataset<T>> {
    cfg.validate()?;
    if profiles.len() < 2 {
        return Err(Error::Config(format!(
            "a multi-rater dataset needs at least 2 raters, got {}",
            profiles.len()
        )));
    }
    for p in profiles {
        p.validate(cfg.height, cfg.width)?;
    }
    let scenes = (0..n_scenes)
        .into_par_iter()
        .map(|k| build_scene(k, seed, cfg, profiles))
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiRaterDataset {
        seed,
        config: cfg.clone(),
        profiles: profiles.to_vec(),
        scenes,
    })
}

impl<T: Scalar> MultiRaterDataset<T> {
    pub fn raters(&self) -> usize {
        self.profiles.len()
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// `(R + 1)·n`: every scene under every rater plus the aggregate.
    pub fn sample_count(&self) -> usize {
        (self.raters() + 1) * self.len()
    }

    pub fn sample(&self, scene: usize, rater: RaterTag) -> Result<MultiRaterSample<'_, T>> {
        rater.validate(self.raters())?;
        let s = self
            .scenes
            .get(scene)
            .ok_or_else(|| Error::Argument(format!("scene {scene} outside 0..{}", self.len())))?;
        Ok(MultiRaterSample {
            scene,
            image: &s.image,
            rater,
            mask: s.mask(rater),
        })
    }

    /// Splits into the first `n` scenes and the rest.
    pub fn split_at(mut self, n: usize) -> Result<(Self, Self)> {
        if n > self.len() {
            return Err(Error::Argument(format!("cannot split {} scenes at {n}", self.len())));
        }
        let tail = self.scenes.split_off(n);
        let rest = MultiRaterDataset {
            scenes: tail,
            ..self.clone()
        };
        Ok((self, rest))
    }

    pub fn cast<U: Scalar>(&self) -> MultiRaterDataset<U> {
        MultiRaterDataset {
            seed: self.seed,
            config: self.config.clone(),
            profiles: self.profiles.clone(),
            scenes: self
                .scenes
                .iter()
                .map(|s| Scene {
                    index: s.index,
                    seed: s.seed,
                    geometry: s.geometry.clone(),
                    image: s.image.cast(),
                    raters: s.raters.iter().map(Tensor::cast).collect(),
                    mv: s.mv.cast(),
                })
                .collect(),
        }
    }

    fn scene_dir(dir: &Path, index: usize) -> PathBuf {
        dir.join("scenes").join(index.to_string())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for s in &self.scenes {
            let sd = Self::scene_dir(dir, s.index);
            ptnsr::write(&sd.join("image.ptnsr"), &s.image)?;
            for (j, m) in s.raters.iter().enumerate() {
                ptnsr::write(&sd.join(format!("rater{}.ptnsr", j + 1)), m)?;
            }
            ptnsr::write(&sd.join("mv.ptnsr"), &s.mv)?;
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            seed: self.seed,
            config: self.config.clone(),
            profiles: self.profiles.clone(),
            scenes: self.len(),
            raters: self.raters(),
            samples: self.sample_count(),
            first_index: self.scenes.first().map_or(0, |s| s.index),
            geometry: self.scenes.iter().map(|s| s.geometry.clone()).collect(),
        };
        let path = dir.join(DATASET_MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(DATASET_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if m.format != FORMAT {
            return Err(Error::format(&path, format!("unsupported dataset format `{}`", m.format)));
        }
        if m.geometry.len() != m.scenes || m.profiles.len() != m.raters {
            return Err(Error::format(&path, "scene or rater counts disagree with their lists"));
        }
        let (h, w) = (m.config.height, m.config.width);
        let mut scenes = Vec::with_capacity(m.scenes);
        for (offset, geometry) in m.geometry.into_iter().enumerate() {
            let index = m.first_index + offset;
            let sd = Self::scene_dir(dir, index);
            let image: Tensor<T> = ptnsr::read(&sd.join("image.ptnsr"))?;
            let check = |t: &Tensor<T>, c: usize, p: &Path| {
                if t.shape() != [h, w, c] {
                    Err(Error::format(p, format!("expected shape {:?}, found {:?}", [h, w, c], t.shape())))
                } else {
                    Ok(())
                }
            };
            check(&image, 3, &sd.join("image.ptnsr"))?;
            let mut raters = Vec::with_capacity(m.raters);
            for j in 1..=m.raters {
                let p = sd.join(format!("rater{j}.ptnsr"));
                let t = ptnsr::read(&p)?;
                check(&t, super::CLASSES, &p)?;
                raters.push(t);
            }
            let mv = ptnsr::read(&sd.join("mv.ptnsr"))?;
            check(&mv, super::CLASSES, &sd.join("mv.ptnsr"))?;
            scenes.push(Scene {
                index,
                seed: derive_seed(m.seed, index as u64),
                geometry,
                image,
                raters,
                mv,
            });
        }
        Ok(MultiRaterDataset {
            seed: m.seed,
            config: m.config,
            profiles: m.profiles,
            scenes,
        })
    }
}
