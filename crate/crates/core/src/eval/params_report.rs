//! Parameter accounting per group and per fine-tuning mode.

use std::fmt;

use crate::model::{FineTuneMode, PuNet};
use crate::params::{ParamGroup, ParamStore};
use crate::scalar::Scalar;

/// Reference counts from the published comparison: a fully trained model,
/// prompt fine-tuning and head-only fine-tuning.
pub const REFERENCE_FULL_PARAMS: f64 = 29.94e6;
pub const REFERENCE_PROMPT_PARAMS: f64 = 0.10e6;
pub const REFERENCE_HEAD_PARAMS: f64 = 0.002e6;

/// Scalar count over parameters whose group is in `groups`.
pub fn count_params<T: Scalar>(store: &ParamStore<T>, groups: &[ParamGroup]) -> usize {
    store.count(|_, p| groups.contains(&p.group))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub total: usize,
    pub by_group: Vec<(ParamGroup, usize)>,
    pub by_mode: Vec<(FineTuneMode, usize)>,
    /// `(R + 1)·T·d + Σ stage maps + head`, from the configuration alone.
    pub prompt_formula: usize,
}

impl ParamReport {
    pub fn trainable(&self, mode: FineTuneMode) -> usize {
        self.by_mode.iter().find(|(m, _)| *m == mode).map_or(0, |(_, n)| *n)
    }

    pub fn ratio(&self, mode: FineTuneMode) -> f64 {
        self.trainable(mode) as f64 / self.total.max(1) as f64
    }

    pub fn reference_prompt_ratio() -> f64 {
        REFERENCE_PROMPT_PARAMS / REFERENCE_FULL_PARAMS
    }
}

pub fn params_report<T: Scalar>(net: &PuNet, store: &ParamStore<T>) -> ParamReport {
    let cfg = net.config();
    let mut formula = 0;
    if cfg.insertion.has_prompts() {
        formula += (net.raters() + 1) * cfg.prompt_tokens * cfg.prompt_dim;
        let mut width = cfg.prompt_dim;
        for pt in cfg.insertion_points() {
            formula += width * pt.channels + pt.channels;
            width = pt.channels;
        }
    }
    formula += cfg.seg_heads * (cfg.channels(0) * cfg.classes + cfg.classes);
    ParamReport {
        total: store.count_total(),
        by_group: ParamGroup::ALL.iter().map(|&g| (g, store.count_group(g))).collect(),
        by_mode: [FineTuneMode::Full, FineTuneMode::HeadOnly, FineTuneMode::PromptAndHead]
            .iter()
            .map(|&m| (m, count_params(store, m.trainable_groups())))
            .collect(),
        prompt_formula: formula,
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "total parameters: {}", self.total)?;
        for (g, n) in &self.by_group {
            writeln!(f, "group {g}: {n}")?;
        }
        for (m, n) in &self.by_mode {
            writeln!(f, "trainable in {m} mode: {n} ({:.4}%)", 100.0 * self.ratio(*m))?;
        }
        writeln!(f, "prompt-mode count from configuration: {}", self.prompt_formula)?;
        writeln!(
            f,
            "reference scale: prompt {:.2}M of {:.2}M = {:.2}%, head {:.3}M",
            REFERENCE_PROMPT_PARAMS / 1e6,
            REFERENCE_FULL_PARAMS / 1e6,
            100.0 * Self::reference_prompt_ratio(),
            REFERENCE_HEAD_PARAMS / 1e6
        )
    }
}
