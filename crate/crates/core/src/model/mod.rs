//! The prompted U-Net.
//!
//! Encoder: a two-convolution stem at full resolution, then `N` levels of a
//! stride-2 convolution followed by residual blocks. Decoder: at each level the
//! deeper map is upsampled (nearest, ×2), concatenated with the encoder map of
//! the same resolution, and passed through two convolutions. Blocks sit after
//! encoder levels `1..N` and after decoder levels `N-1..1`, depending on the
//! insertion scheme. A 1×1 convolution produces per-class logits.
//!
//! The selected rater's prompt travels through every block in order; before
//! each block a stage map projects it to that block's channel width.

mod config;
pub mod itb;
mod layers;
mod prompt;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{InsertionPoint, Insertion, UNetConfig};
pub use itb::itb_forward;
pub use prompt::{map_bias, map_weight, prompt_propagate, select_prompt, RaterTag, EMBEDDINGS};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use layers::{add_conv, conv, normal};

pub(crate) const LN_EPS: f64 = 1e-5;
pub const PROMPT_INIT_STD: f64 = 0.02;

/// Which parameter groups a training run may update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FineTuneMode {
    Full,
    HeadOnly,
    PromptAndHead,
}

impl FineTuneMode {
    pub fn trainable_groups(self) -> &'static [ParamGroup] {
        match self {
            FineTuneMode::Full => &ParamGroup::ALL,
            FineTuneMode::HeadOnly => &[ParamGroup::Head],
            FineTuneMode::PromptAndHead => &[ParamGroup::Prompt, ParamGroup::StageMap, ParamGroup::Head],
        }
    }
}

impl fmt::Display for FineTuneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FineTuneMode::Full => "full",
            FineTuneMode::HeadOnly => "head",
            FineTuneMode::PromptAndHead => "prompt",
        })
    }
}

impl FromStr for FineTuneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(FineTuneMode::Full),
            "head" | "head_only" => Ok(FineTuneMode::HeadOnly),
            "prompt" | "prompt_and_head" => Ok(FineTuneMode::PromptAndHead),
            _ => Err(Error::Argument(format!("unknown fine-tune mode `{s}`"))),
        }
    }
}

/// Sets freeze flags on `store` for `mode`.
pub fn param_partition<T: Scalar>(store: &mut ParamStore<T>, mode: FineTuneMode) {
    store.freeze_except(mode.trainable_groups());
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardPass {
    pub logits: Var,
    /// Number of implantable blocks executed.
    pub itb_calls: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PuNet {
    config: UNetConfig,
    raters: usize,
}

impl PuNet {
    pub fn new(config: UNetConfig, raters: usize) -> Result<Self> {
        config.validate()?;
        if raters == 0 {
            return Err(Error::Config("at least one rater is required".into()));
        }
        if config.seg_heads > 1 && config.seg_heads != raters {
            return Err(Error::Config(format!(
                "{} segmentation heads for {raters} raters",
                config.seg_heads
            )));
        }
        Ok(PuNet { config, raters })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn raters(&self) -> usize {
        self.raters
    }

    /// Freshly initialized parameters, a pure function of `seed`.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamStore<T>> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let bb = ParamGroup::Backbone;
        let c0 = cfg.channels(0);

        add_conv(&mut s, &mut rng, "enc.stem.0", bb, 3, 3, c0)?;
        add_conv(&mut s, &mut rng, "enc.stem.1", bb, 3, c0, c0)?;
        for level in 1..=cfg.stages {
            let (cin, cout) = (cfg.channels(level - 1), cfg.channels(level));
            add_conv(&mut s, &mut rng, &format!("enc.l{level}.down"), bb, 3, cin, cout)?;
            for b in 0..cfg.encoder_blocks[level - 1] {
                add_conv(&mut s, &mut rng, &format!("enc.l{level}.res{b}.a"), bb, 3, cout, cout)?;
                add_conv(&mut s, &mut rng, &format!("enc.l{level}.res{b}.b"), bb, 3, cout, cout)?;
            }
        }
        for level in (1..=cfg.stages).rev() {
            let (deep, skip) = (cfg.channels(level), cfg.channels(level - 1));
            add_conv(&mut s, &mut rng, &format!("dec.l{level}.fuse"), bb, 3, deep + skip, skip)?;
            add_conv(&mut s, &mut rng, &format!("dec.l{level}.refine"), bb, 3, skip, skip)?;
        }

        if cfg.insertion.has_prompts() {
            let bank = normal(
                &mut rng,
                &[self.raters + 1, cfg.prompt_tokens, cfg.prompt_dim],
                PROMPT_INIT_STD,
            );
            s.insert(EMBEDDINGS, ParamGroup::Prompt, bank)?;
            let mut width = cfg.prompt_dim;
            for (k, pt) in cfg.insertion_points().iter().enumerate() {
                // Identity on the shared leading channels, zero elsewhere.
                let (din, dout) = (width, pt.channels);
                let w = Tensor::from_fn(&[din, dout], |i| {
                    if i / dout == i % dout { T::one() } else { T::zero() }
                });
                s.insert(map_weight(k), ParamGroup::StageMap, w)?;
                s.insert(map_bias(k), ParamGroup::StageMap, Tensor::zeros(&[dout]))?;
                itb::init(&mut s, &mut rng, &pt.name, pt.channels, cfg.ffn_ratio)?;
                width = dout;
            }
        }

        for h in 0..cfg.seg_heads {
            add_conv(&mut s, &mut rng, &head_prefix(h), ParamGroup::Head, 1, c0, cfg.classes)?;
        }
        Ok(s)
    }

    fn head_for(&self, tag: RaterTag) -> Result<usize> {
        if self.config.seg_heads == 1 {
            return Ok(0);
        }
        match tag {
            RaterTag::Rater(j) => Ok(j - 1),
            RaterTag::Aggregate => Err(Error::Argument(
                "a multi-head model has no head for the aggregate label".into(),
            )),
        }
    }

    /// Records the network on `tape` for `image` (`H×W×3`) conditioned on `tag`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        image: Var,
        tag: RaterTag,
    ) -> Result<ForwardPass> {
        let cfg = &self.config;
        let (h, w) = cfg.input_size;
        if tape.shape(image) != [h, w, 3] {
            return Err(Error::shape("forward", tape.shape(image), &[h, w, 3]));
        }
        tag.validate(self.raters)?;
        let head = self.head_for(tag)?;

        let mut prompt = if cfg.insertion.has_prompts() {
            Some(select_prompt(tape, store, tag)?)
        } else {
            None
        };
        let mut map_idx = 0;
        let mut itb_calls = 0;
        let mut implant = |tape: &mut Tape<T>, x: Var, point: String| -> Result<Var> {
            let Some(p) = prompt else { return Ok(x) };
            let p = prompt_propagate(tape, store, p, map_idx)?;
            let (x, p) = itb_forward(tape, store, &point, cfg.heads, x, p)?;
            prompt = Some(p);
            map_idx += 1;
            itb_calls += 1;
            Ok(x)
        };

        let mut x = conv(tape, store, "enc.stem.0", image, 1)?;
        x = tape.silu(x);
        x = conv(tape, store, "enc.stem.1", x, 1)?;
        x = tape.silu(x);
        let mut skips = vec![x];
        for level in 1..=cfg.stages {
            x = conv(tape, store, &format!("enc.l{level}.down"), x, 2)?;
            x = tape.silu(x);
            for b in 0..cfg.encoder_blocks[level - 1] {
                let r = conv(tape, store, &format!("enc.l{level}.res{b}.a"), x, 1)?;
                let r = tape.silu(r);
                let r = conv(tape, store, &format!("enc.l{level}.res{b}.b"), r, 1)?;
                let sum = tape.add(x, r)?;
                x = tape.silu(sum);
            }
            if level < cfg.stages && cfg.insertion.down() {
                x = implant(tape, x, format!("down{level}"))?;
            }
            skips.push(x);
        }

        for level in (1..=cfg.stages).rev() {
            let up = tape.upsample_nearest(x, 2)?;
            let cat = tape.concat_last(up, skips[level - 1])?;
            x = conv(tape, store, &format!("dec.l{level}.fuse"), cat, 1)?;
            x = tape.silu(x);
            x = conv(tape, store, &format!("dec.l{level}.refine"), x, 1)?;
            x = tape.silu(x);
            let out_level = level - 1;
            if out_level >= 1 && cfg.insertion.up() {
                x = implant(tape, x, format!("up{out_level}"))?;
            }
        }

        let logits = conv(tape, store, &head_prefix(head), x, 1)?;
        Ok(ForwardPass { logits, itb_calls })
    }

    /// Logits for one image without recording gradients.
    pub fn predict<T: Scalar>(&self, store: &ParamStore<T>, image: &Tensor<T>, tag: RaterTag) -> Result<Tensor<T>> {
        let mut tape = Tape::inference();
        let x = tape.constant(image.clone());
        let out = self.forward(&mut tape, store, x, tag)?;
        Ok(tape.value(out.logits).clone())
    }
}

pub fn head_prefix(h: usize) -> String {
    format!("head{h}")
}
