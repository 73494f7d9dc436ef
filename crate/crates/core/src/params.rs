//! Named parameter collection with per-parameter freeze flags.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Role of a parameter inside the network; drives freezing and accounting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Backbone,
    Itb,
    Prompt,
    StageMap,
    Head,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Backbone,
        ParamGroup::Itb,
        ParamGroup::Prompt,
        ParamGroup::StageMap,
        ParamGroup::Head,
    ];
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParamGroup::Backbone => "backbone",
            ParamGroup::Itb => "itb",
            ParamGroup::Prompt => "prompt",
            ParamGroup::StageMap => "stage_map",
            ParamGroup::Head => "head",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub group: ParamGroup,
    pub frozen: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, group: ParamGroup, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(
            name,
            Param {
                value,
                group,
                frozen: false,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::shape("set_value", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        self.entries
            .get_mut(name)
            .map(|p| p.frozen = frozen)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    /// Freezes every parameter whose group is not in `trainable`.
    pub fn freeze_except(&mut self, trainable: &[ParamGroup]) {
        for p in self.entries.values_mut() {
            p.frozen = !trainable.contains(&p.group);
        }
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|p| p.frozen)
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.iter().filter(|(_, p)| !p.frozen)
    }

    /// Total scalar count over parameters accepted by `filter`.
    pub fn count(&self, filter: impl Fn(&str, &Param<T>) -> bool) -> usize {
        self.iter()
            .filter(|(n, p)| filter(n, p))
            .map(|(_, p)| p.value.len())
            .sum()
    }

    pub fn count_total(&self) -> usize {
        self.count(|_, _| true)
    }

    pub fn count_trainable(&self) -> usize {
        self.count(|_, p| !p.frozen)
    }

    pub fn count_group(&self, group: ParamGroup) -> usize {
        self.count(|_, p| p.group == group)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            group: p.group,
                            frozen: p.frozen,
                        },
                    )
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a", ParamGroup::Head, Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("a", ParamGroup::Head, Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn group_counts_partition_total() {
        let mut s = ParamStore::<f32>::new();
        s.insert("w", ParamGroup::Backbone, Tensor::zeros(&[3, 4])).unwrap();
        s.insert("p", ParamGroup::Prompt, Tensor::zeros(&[7])).unwrap();
        s.insert("h", ParamGroup::Head, Tensor::zeros(&[2, 2])).unwrap();
        let by_group: usize = ParamGroup::ALL.iter().map(|&g| s.count_group(g)).sum();
        assert_eq!(by_group, s.count_total());
        assert_eq!(s.count(|_, _| false), 0);
        s.freeze_except(&[ParamGroup::Head]);
        assert_eq!(s.count_trainable(), 4);
    }
}
