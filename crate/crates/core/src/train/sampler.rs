//! Epoch orderings over `(scene, tag)` pairs.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RaterTag;
use crate::scalar::Scalar;
use crate::synth::{derive_seed, MultiRaterDataset, MultiRaterSample};

/// Which label subsets a run draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingStrategy {
    /// Every scene under every rater tag, never the aggregate.
    IndividualOnly,
    /// Every scene under the aggregate tag only.
    FusionOnly,
    /// Every scene under all `R + 1` tags.
    Mix,
    /// Every scene once per epoch under one rater drawn uniformly at random.
    LabelSampling,
}

impl fmt::Display for TrainingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainingStrategy::IndividualOnly => "individual",
            TrainingStrategy::FusionOnly => "fusion",
            TrainingStrategy::Mix => "mix",
            TrainingStrategy::LabelSampling => "label_sampling",
        })
    }
}

impl FromStr for TrainingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "individual" | "individual_only" => Ok(TrainingStrategy::IndividualOnly),
            "fusion" | "fusion_only" => Ok(TrainingStrategy::FusionOnly),
            "mix" => Ok(TrainingStrategy::Mix),
            "label_sampling" => Ok(TrainingStrategy::LabelSampling),
            _ => Err(Error::Argument(format!("unknown training strategy `{s}`"))),
        }
    }
}

impl TrainingStrategy {
    /// Tags enumerated for each scene, before shuffling.
    pub fn tags(self, raters: usize) -> Vec<RaterTag> {
        match self {
            TrainingStrategy::IndividualOnly => (1..=raters).map(RaterTag::Rater).collect(),
            TrainingStrategy::FusionOnly => vec![RaterTag::Aggregate],
            TrainingStrategy::Mix => RaterTag::all(raters).collect(),
            TrainingStrategy::LabelSampling => Vec::new(),
        }
    }
}

/// Rater drawn for `scene` in `epoch` under label sampling.
pub fn sampled_rater(seed: u64, epoch: usize, scene: usize, raters: usize) -> RaterTag {
    let s = derive_seed(derive_seed(seed, epoch as u64), scene as u64 ^ 0x1abe1);
    RaterTag::Rater(ChaCha8Rng::seed_from_u64(s).random_range(1..=raters))
}

/// The ordered `(scene, tag)` pairs of one epoch.
pub fn epoch_order(
    scenes: usize,
    raters: usize,
    strategy: TrainingStrategy,
    seed: u64,
    epoch: usize,
) -> Result<Vec<(usize, RaterTag)>> {
    let mut pairs: Vec<(usize, RaterTag)> = match strategy {
        TrainingStrategy::LabelSampling => (0..scenes)
            .map(|k| (k, sampled_rater(seed, epoch, k, raters)))
            .collect(),
        _ => {
            let tags = strategy.tags(raters);
            (0..scenes)
                .flat_map(|k| tags.iter().map(move |&t| (k, t)))
                .collect()
        }
    };
    if pairs.is_empty() {
        return Err(Error::Config(format!(
            "strategy {strategy} yields no samples from {scenes} scenes and {raters} raters"
        )));
    }
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64)));
    Ok(pairs)
}

/// One epoch of samples from `data` in seeded shuffled order.
pub fn mix_sampler<'a, T: Scalar>(
    data: &'a MultiRaterDataset<T>,
    strategy: TrainingStrategy,
    seed: u64,
    epoch: usize,
) -> Result<Vec<MultiRaterSample<'a, T>>> {
    epoch_order(data.len(), data.raters(), strategy, seed, epoch)?
        .into_iter()
        .map(|(k, tag)| data.sample(k, tag))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_enumerates_every_tag() {
        let order = epoch_order(1, 2, TrainingStrategy::Mix, 0, 0).unwrap();
        let mut tags: Vec<String> = order.iter().map(|(_, t)| t.to_string()).collect();
        tags.sort();
        assert_eq!(tags, ["c", "r1", "r2"]);
    }

    #[test]
    fn fusion_emits_only_aggregate() {
        let order = epoch_order(5, 6, TrainingStrategy::FusionOnly, 3, 1).unwrap();
        assert_eq!(order.len(), 5);
        assert!(order.iter().all(|(_, t)| *t == RaterTag::Aggregate));
    }

    #[test]
    fn individual_never_emits_aggregate() {
        let order = epoch_order(4, 3, TrainingStrategy::IndividualOnly, 3, 1).unwrap();
        assert_eq!(order.len(), 12);
        assert!(order.iter().all(|(_, t)| *t != RaterTag::Aggregate));
    }

    #[test]
    fn order_is_a_function_of_seed_and_epoch() {
        let a = epoch_order(8, 6, TrainingStrategy::Mix, 9, 2).unwrap();
        assert_eq!(a, epoch_order(8, 6, TrainingStrategy::Mix, 9, 2).unwrap());
        assert_ne!(a, epoch_order(8, 6, TrainingStrategy::Mix, 9, 3).unwrap());
        assert_ne!(a, epoch_order(8, 6, TrainingStrategy::Mix, 10, 2).unwrap());
    }

    #[test]
    fn empty_dataset_is_a_configuration_error() {
        assert!(matches!(
            epoch_order(0, 6, TrainingStrategy::Mix, 0, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn single_rater_label_sampling_is_plain_training() {
        let order = epoch_order(6, 1, TrainingStrategy::LabelSampling, 4, 0).unwrap();
        assert!(order.iter().all(|(_, t)| *t == RaterTag::Rater(1)));
    }
}
