//! Deterministic multi-rater synthetic data.
//!
//! A scene is an elliptical "disc" with a concentric "cup" over a smooth
//! textured background. Each rater sees the same scene but draws boundaries
//! offset radially by a constant dilation plus a smooth, seeded jitter, so
//! every rater has a systematic bias and some idiosyncratic noise.

mod dataset;

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use dataset::{build_dataset, MultiRaterDataset, MultiRaterSample, Scene, DATASET_MANIFEST};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CLASSES: usize = 2;
const JITTER_HARMONICS: usize = 4;

/// Mixes a stream index into a seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaterProfile {
    pub id: usize,
    /// Systematic radial offset of every boundary; positive over-segments.
    pub dilation_px: i32,
    /// Peak amplitude of the smooth boundary jitter.
    pub jitter_amp: f64,
    pub jitter_seed_mix: u64,
}

impl RaterProfile {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let limit = height.min(width) as f64 / 8.0;
        if (self.dilation_px.unsigned_abs() as f64) >= limit {
            return Err(Error::Config(format!(
                "rater {} dilation {} px must stay below {limit} px for a {height}×{width} image",
                self.id, self.dilation_px
            )));
        }
        if !(self.jitter_amp >= 0.0 && self.jitter_amp.is_finite()) {
            return Err(Error::Config(format!(
                "rater {} jitter amplitude must be finite and non-negative",
                self.id
            )));
        }
        Ok(())
    }
}

/// Six raters with dilations −2, −1, 0, 0, +1, +2 px and jitter 0.5–1.5 px.
pub fn default_profiles() -> Vec<RaterProfile> {
    let dilations = [-2, -1, 0, 0, 1, 2];
    let jitters = [0.5, 1.0, 1.5, 0.5, 1.0, 1.5];
    dilations
        .iter()
        .zip(jitters)
        .enumerate()
        .map(|(i, (&d, j))| RaterProfile {
            id: i + 1,
            dilation_px: d,
            jitter_amp: j,
            jitter_seed_mix: 1000 + i as u64,
        })
        .collect()
}

/// Photometric transform separating a source from a target domain:
/// `pixel = mean + contrast·(base − mean) + shift`, with `mean` the base image mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainShift {
    pub contrast: f64,
    pub shift: f64,
}

impl DomainShift {
    pub const IDENTITY: DomainShift = DomainShift {
        contrast: 1.0,
        shift: 0.0,
    };
}

impl Default for DomainShift {
    fn default() -> Self {
        Self::IDENTITY
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub noise_std: f64,
    pub domain: DomainShift,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 64,
            width: 64,
            noise_std: 0.03,
            domain: DomainShift::IDENTITY,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config(format!(
                "scenes need at least 8×8 pixels, got {}×{}",
                self.height, self.width
            )));
        }
        if !(self.noise_std >= 0.0) || !self.domain.contrast.is_finite() || !self.domain.shift.is_finite() {
            return Err(Error::Config("noise and domain parameters must be finite".into()));
        }
        Ok(())
    }
}

/// Geometry and texture of one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub cx: f64,
    pub cy: f64,
    /// Horizontal and vertical disc semi-axes.
    pub a: f64,
    pub b: f64,
    /// Cup semi-axes relative to the disc, in (0, 1).
    pub cup_scale: f64,
    pub texture_seed: u64,
}

impl SyntheticScene {
    pub fn sample(seed: u64, height: usize, width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (height as f64, width as f64);
        let m = h.min(w);
        SyntheticScene {
            cx: w / 2.0 + rng.random_range(-0.1..0.1) * w,
            cy: h / 2.0 + rng.random_range(-0.1..0.1) * h,
            a: rng.random_range(0.2..0.3) * m,
            b: rng.random_range(0.2..0.3) * m,
            cup_scale: rng.random_range(0.45..0.7),
            texture_seed: rng.random(),
        }
    }

    fn axes(&self, class: usize) -> (f64, f64) {
        if class == 0 {
            (self.a, self.b)
        } else {
            (self.a * self.cup_scale, self.b * self.cup_scale)
        }
    }

    /// Pixel-centre offset from the scene centre, its length and angle.
    fn polar(&self, y: usize, x: usize) -> (f64, f64) {
        let (dx, dy) = (x as f64 + 0.5 - self.cx, y as f64 + 0.5 - self.cy);
        (dx.hypot(dy), dy.atan2(dx))
    }

    /// Ellipse radius along direction `theta`.
    fn radius(&self, class: usize, theta: f64) -> f64 {
        let (a, b) = self.axes(class);
        a * b / ((b * theta.cos()).powi(2) + (a * theta.sin()).powi(2)).sqrt()
    }
}

/// Smooth radial perturbation: a seeded sum of low harmonics whose
/// coefficients have unit `l1` norm, scaled to `amp`.
struct Jitter {
    amp: f64,
    coef: [f64; JITTER_HARMONICS],
    phase: [f64; JITTER_HARMONICS],
}

impl Jitter {
    fn new(seed: u64, amp: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coef = [0.0; JITTER_HARMONICS];
        let mut phase = [0.0; JITTER_HARMONICS];
        for k in 0..JITTER_HARMONICS {
            coef[k] = rng.random_range(0.2..1.0) / (k + 1) as f64;
            phase[k] = rng.random_range(0.0..TAU);
        }
        let norm: f64 = coef.iter().sum();
        coef.iter_mut().for_each(|c| *c /= norm);
        Jitter { amp, coef, phase }
    }

    fn at(&self, theta: f64) -> f64 {
        if self.amp == 0.0 {
            return 0.0;
        }
        let s: f64 = (0..JITTER_HARMONICS)
            .map(|k| self.coef[k] * ((k + 1) as f64 * theta + self.phase[k]).sin())
            .sum();
        self.amp * s
    }
}

/// Renders the scene image (`H×W×3`) under `cfg.domain`.
pub fn render_image<T: Scalar>(scene: &SyntheticScene, cfg: &SceneConfig) -> Tensor<T> {
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(scene.texture_seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.5..2.0) * TAU / w as f64,
                rng.random_range(0.5..2.0) * TAU / h as f64,
                rng.random_range(0.0..TAU),
                rng.random_range(0.02..0.06),
            )
        })
        .collect();
    let tilt = (rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
    let noise = Normal::new(0.0, cfg.noise_std.max(0.0)).expect("finite std");
    let edge = 0.1 * scene.a.min(scene.b).max(1.0);
    let soft = |d: f64, r: f64| 1.0 / (1.0 + (-(r - d) / edge).exp());
    // Per-channel response of background, disc rim and cup.
    let colour = [[0.45, 0.30, 0.45], [0.20, 0.30, 0.25], [0.10, 0.15, 0.20]];

    let mut base = vec![0.0f64; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 / w as f64 - 0.5, y as f64 / h as f64 - 0.5);
            let mut bg = tilt.0 * fx + tilt.1 * fy;
            for &(kx, ky, ph, amp) in &waves {
                bg += amp * (kx * x as f64 + ky * y as f64 + ph).sin();
            }
            let (d, theta) = scene.polar(y, x);
            let disc = soft(d, scene.radius(0, theta));
            let cup = soft(d, scene.radius(1, theta));
            for c in 0..3 {
                let v = colour[c][0] * (1.0 + bg) + colour[c][1] * disc + colour[c][2] * cup;
                base[(y * w + x) * 3 + c] = v + noise.sample(&mut rng);
            }
        }
    }
    let DomainShift { contrast, shift } = cfg.domain;
    let mean = base.iter().sum::<f64>() / base.len() as f64;
    Tensor::from_fn(&[h, w, 3], |i| T::of(mean + contrast * (base[i] - mean) + shift))
}

/// The geometric-truth masks (`H×W×2`, disc then cup).
pub fn ideal_mask<T: Scalar>(scene: &SyntheticScene, height: usize, width: usize) -> Tensor<T> {
    let ideal = RaterProfile {
        id: 0,
        dilation_px: 0,
        jitter_amp: 0.0,
        jitter_seed_mix: 0,
    };
    render_rater_mask(scene, &ideal, 0, height, width)
}

/// Masks (`H×W×2`) drawn by `profile` for the scene with per-scene seed `scene_seed`.
///
/// A pixel is inside a structure when its distance from the centre is below
/// the ellipse radius in its direction plus the rater's dilation and jitter.
/// The cup is clipped to the disc.
pub fn render_rater_mask<T: Scalar>(
    scene: &SyntheticScene,
    profile: &RaterProfile,
    scene_seed: u64,
    height: usize,
    width: usize,
) -> Tensor<T> {
    let jitter: Vec<Jitter> = (0..CLASSES)
        .map(|class| {
            let s = derive_seed(derive_seed(scene_seed, profile.jitter_seed_mix), class as u64);
            Jitter::new(s, profile.jitter_amp)
        })
        .collect();
    let dil = profile.dilation_px as f64;
    let mut out = vec![T::zero(); height * width * CLASSES];
    for y in 0..height {
        for x in 0..width {
            let (d, theta) = scene.polar(y, x);
            let inside = |class: usize| d < scene.radius(class, theta) + dil + jitter[class].at(theta);
            let disc = inside(0);
            let cup = disc && inside(1);
            let o = (y * width + x) * CLASSES;
            out[o] = if disc { T::one() } else { T::zero() };
            out[o + 1] = if cup { T::one() } else { T::zero() };
        }
    }
    Tensor::new(&[height, width, CLASSES], out).expect("mask shape")
}

/// Per-element strict majority: 1 iff more than half of the masks are 1.
pub fn majority_vote<T: Scalar>(masks: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Argument("majority vote needs at least one mask".into()))?;
    let mut counts = vec![0usize; first.len()];
    for m in masks {
        if m.shape() != first.shape() {
            return Err(Error::shape("majority_vote", first.shape(), m.shape()));
        }
        for (c, &v) in counts.iter_mut().zip(m.data()) {
            if v > T::of(0.5) {
                *c += 1;
            }
        }
    }
    let r = masks.len();
    Tensor::new(
        first.shape(),
        counts
            .into_iter()
            .map(|c| if 2 * c > r { T::one() } else { T::zero() })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> SyntheticScene {
        SyntheticScene::sample(11, 64, 64)
    }

    fn area(m: &Tensor<f64>, class: usize) -> usize {
        m.data().iter().skip(class).step_by(CLASSES).filter(|&&v| v > 0.5).count()
    }

    #[test]
    fn zero_profile_is_the_ideal_mask() {
        let s = scene();
        let p = RaterProfile {
            id: 3,
            dilation_px: 0,
            jitter_amp: 0.0,
            jitter_seed_mix: 77,
        };
        assert_eq!(render_rater_mask::<f64>(&s, &p, 5, 64, 64), ideal_mask(&s, 64, 64));
    }

    #[test]
    fn positive_dilation_grows_area() {
        let s = scene();
        let ideal: Tensor<f64> = ideal_mask(&s, 64, 64);
        let p = RaterProfile {
            id: 1,
            dilation_px: 2,
            jitter_amp: 0.0,
            jitter_seed_mix: 0,
        };
        let m: Tensor<f64> = render_rater_mask(&s, &p, 0, 64, 64);
        assert!(area(&m, 0) > area(&ideal, 0));
        assert!(area(&m, 1) > area(&ideal, 1));
    }

    #[test]
    fn dilation_limit_is_enforced() {
        let mut p = default_profiles()[0].clone();
        p.dilation_px = 8;
        assert!(p.validate(64, 64).is_err());
        p.dilation_px = -7;
        assert!(p.validate(64, 64).is_ok());
    }

    #[test]
    fn vote_tie_resolves_to_zero() {
        let one = Tensor::<f64>::ones(&[1]);
        let zero = Tensor::<f64>::zeros(&[1]);
        let four = [&one, &one, &one, &one, &zero, &zero];
        assert_eq!(majority_vote(&four).unwrap().item(), 1.0);
        let three = [&one, &one, &one, &zero, &zero, &zero];
        assert_eq!(majority_vote(&three).unwrap().item(), 0.0);
    }

    #[test]
    fn vote_rejects_mixed_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 2]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(majority_vote(&[&a, &b]), Err(Error::Shape { .. })));
    }

    #[test]
    fn derived_seeds_differ_per_stream() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(9, 4), derive_seed(9, 4));
    }
}
