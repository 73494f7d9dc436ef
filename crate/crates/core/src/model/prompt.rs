//! Rater tags, the prompt bank layout, and prompt propagation between stages.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

pub const EMBEDDINGS: &str = "prompt.embeddings";

/// Which label source a sample or prompt stands for.
///
/// Serialized as its display form: `c` for the aggregate, `r{j}` for rater `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, )]
pub enum RaterTag {
    /// The majority-vote label and its aggregation prompt.
    Aggregate,
    /// Rater `j`, numbered from 1.
    Rater(usize),
}

impl RaterTag {
    /// Slot in the prompt bank: 0 for the aggregate, `j` for rater `j`.
    pub fn slot(self) -> usize {
        match self {
            RaterTag::Aggregate => 0,
            RaterTag::Rater(j) => j,
        }
    }

    pub fn from_slot(slot: usize) -> Self {
        if slot == 0 {
            RaterTag::Aggregate
        } else {
            RaterTag::Rater(slot)
        }
    }

    pub fn validate(self, raters: usize) -> Result<()> {
        match self {
            RaterTag::Rater(j) if j == 0 || j > raters => Err(Error::Argument(format!(
                "rater tag r{j} outside 1..={raters}"
            ))),
            _ => Ok(()),
        }
    }

    /// All `R + 1` tags, aggregate first.
    pub fn all(raters: usize) -> impl Iterator<Item = RaterTag> {
        (0..=raters).map(RaterTag::from_slot)
    }

    /// Raters first, aggregate last; the column order of the reports.
    pub fn report_order(raters: usize) -> impl Iterator<Item = RaterTag> {
        (1..=raters).map(RaterTag::Rater).chain(std::iter::once(RaterTag::Aggregate))
    }
}

impl fmt::Display for RaterTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RaterTag::Aggregate => f.write_str("c"),
            RaterTag::Rater(j) => write!(f, "r{j}"),
        }
    }
}

impl Serialize for RaterTag {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RaterTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for RaterTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c" | "mv" => Ok(RaterTag::Aggregate),
            _ => s
                .strip_prefix('r')
                .and_then(|n| n.parse().ok())
                .map(RaterTag::Rater)
                .ok_or_else(|| Error::Argument(format!("unknown rater tag `{s}`"))),
        }
    }
}

pub fn map_weight(k: usize) -> String {
    format!("prompt.map{k}.weight")
}

pub fn map_bias(k: usize) -> String {
    format!("prompt.map{k}.bias")
}

/// Loads the `T×d` stage-0 prompt for `tag` from the `(R+1)×T×d` bank.
pub fn select_prompt<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, tag: RaterTag) -> Result<Var> {
    let bank = tape.param(store, EMBEDDINGS)?;
    let &[slots, tokens, dim] = tape.shape(bank) else {
        return Err(Error::Contract("prompt bank must be (R+1)×T×d".into()));
    };
    if tag.slot() >= slots {
        return Err(Error::Argument(format!(
            "rater tag {tag} has no prompt slot among {slots}"
        )));
    }
    let flat = tape.reshape(bank, &[slots * tokens, dim])?;
    tape.rows(flat, tag.slot() * tokens, tokens)
}

/// Carries prompt tokens to the next block's width: an affine map applied to
/// each token independently.
pub fn prompt_propagate<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prompt: Var,
    map: usize,
) -> Result<Var> {
    let w = tape.param(store, &map_weight(map))?;
    let b = tape.param(store, &map_bias(map))?;
    let y = tape.matmul(prompt, w)?;
    tape.add_bias(y, b)
}
