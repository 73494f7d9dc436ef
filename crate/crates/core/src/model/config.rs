use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where implantable transformer blocks sit in the U.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Insertion {
    DownOnly,
    UpOnly,
    Both,
    /// Plain U-Net without blocks or prompts; used by the baselines.
    None,
}

impl Insertion {
    pub fn down(self) -> bool {
        matches!(self, Insertion::DownOnly | Insertion::Both)
    }

    pub fn up(self) -> bool {
        matches!(self, Insertion::UpOnly | Insertion::Both)
    }

    pub fn has_prompts(self) -> bool {
        self != Insertion::None
    }
}

impl fmt::Display for Insertion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Insertion::DownOnly => "down",
            Insertion::UpOnly => "up",
            Insertion::Both => "both",
            Insertion::None => "none",
        })
    }
}

impl FromStr for Insertion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "down" | "down_only" => Ok(Insertion::DownOnly),
            "up" | "up_only" => Ok(Insertion::UpOnly),
            "both" => Ok(Insertion::Both),
            "none" => Ok(Insertion::None),
            _ => Err(Error::Argument(format!("unknown insertion scheme `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    /// Number of downsampling (and upsampling) layers.
    pub stages: usize,
    pub base_channels: usize,
    /// `(H, W)` of input images.
    pub input_size: (usize, usize),
    pub classes: usize,
    /// Attention heads per block.
    pub heads: usize,
    pub ffn_ratio: usize,
    /// Width of the stage-0 prompt embeddings.
    pub prompt_dim: usize,
    /// Tokens per prompt.
    pub prompt_tokens: usize,
    pub insertion: Insertion,
    /// Residual blocks after each downsampling layer, one entry per stage.
    pub encoder_blocks: Vec<usize>,
    /// Number of segmentation heads (more than one only for the multi-head baseline).
    pub seg_heads: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            stages: 3,
            base_channels: 16,
            input_size: (64, 64),
            classes: 2,
            heads: 2,
            ffn_ratio: 4,
            prompt_dim: 16,
            prompt_tokens: 1,
            insertion: Insertion::Both,
            encoder_blocks: vec![1, 1, 2],
            seg_heads: 1,
        }
    }
}

/// One block location along the prompt's path through the network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InsertionPoint {
    /// Parameter prefix, e.g. `down1` or `up2`.
    pub name: String,
    pub level: usize,
    pub down: bool,
    pub channels: usize,
}

impl UNetConfig {
    /// Channel count of features at `level` (level 0 is full resolution).
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stages == 0 {
            return bad("stages must be at least 1".into());
        }
        let div = 1usize << self.stages;
        let (h, w) = self.input_size;
        if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
            return bad(format!(
                "input size {h}×{w} must be divisible by 2^{} = {div}",
                self.stages
            ));
        }
        if self.base_channels == 0 || self.classes == 0 || self.ffn_ratio == 0 {
            return bad("base_channels, classes and ffn_ratio must be positive".into());
        }
        if self.encoder_blocks.len() != self.stages {
            return bad(format!(
                "encoder_blocks has {} entries for {} stages",
                self.encoder_blocks.len(),
                self.stages
            ));
        }
        if self.seg_heads == 0 {
            return bad("seg_heads must be at least 1".into());
        }
        if self.insertion.has_prompts() {
            if self.prompt_dim == 0 || self.prompt_tokens == 0 || self.heads == 0 {
                return bad("prompt_dim, prompt_tokens and heads must be positive".into());
            }
            for p in self.insertion_points() {
                if p.channels % self.heads != 0 {
                    return bad(format!(
                        "{} channels at {} are not divisible by {} heads",
                        p.channels, p.name, self.heads
                    ));
                }
            }
        }
        Ok(())
    }

    /// Block locations in the order the prompt visits them: encoder levels
    /// `1..N` top-down, then decoder levels `N-1..1` bottom-up.
    pub fn insertion_points(&self) -> Vec<InsertionPoint> {
        let mut pts = Vec::new();
        if self.insertion.down() {
            for level in 1..self.stages {
                pts.push(InsertionPoint {
                    name: format!("down{level}"),
                    level,
                    down: true,
                    channels: self.channels(level),
                });
            }
        }
        if self.insertion.up() {
            for level in (1..self.stages).rev() {
                pts.push(InsertionPoint {
                    name: format!("up{level}"),
                    level,
                    down: false,
                    channels: self.channels(level),
                });
            }
        }
        pts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        UNetConfig::default().validate().unwrap();
    }

    #[test]
    fn insertion_point_counts() {
        let mut c = UNetConfig::default();
        assert_eq!(c.insertion_points().len(), 4);
        c.insertion = Insertion::DownOnly;
        assert_eq!(c.insertion_points().len(), c.stages - 1);
        c.insertion = Insertion::None;
        assert!(c.insertion_points().is_empty());
    }

    #[test]
    fn indivisible_input_rejected() {
        let c = UNetConfig {
            input_size: (60, 64),
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        let r: std::result::Result<UNetConfig, _> = serde_json::from_str(r#"{"stagez": 3}"#);
        assert!(r.is_err());
    }
}
