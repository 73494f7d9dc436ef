//! Central finite-difference checks of the tape, in `f64`.
//!
//! Non-scalar outputs are reduced to a scalar by a fixed random weighting so
//! every output element contributes a distinct coefficient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{Insertion, PuNet, RaterTag, UNetConfig, EMBEDDINGS};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::train::{dice_loss, DEFAULT_SMOOTH};

pub const STEP: f64 = 1e-5;
pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const COMPOSITE_TOL: f64 = 1e-3;
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

type Build<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

/// Weighted scalar reduction of whatever `build` returns.
fn scalarize(tape: &mut Tape<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

/// Compares tape gradients of `build(inputs)` with central differences for
/// every element of every input.
pub fn check_fn(name: &str, inputs: &[Tensor<f64>], seed: u64, build: &Build<'_>) -> Result<CheckReport> {
    let probe = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        tape.shape(out).to_vec()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let weights = random(&mut rng, &probe, 0.5, 1.5);

    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::inference();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let loss = scalarize(&mut tape, out, &weights)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let loss = scalarize(&mut tape, out, &weights)?;
    let grads = tape.gradients(loss)?;

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut vals = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for e in 0..inputs[i].len() {
            let orig = inputs[i].data()[e];
            vals[i].data_mut()[e] = orig + STEP;
            let up = eval(&vals)?;
            vals[i].data_mut()[e] = orig - STEP;
            let down = eval(&vals)?;
            vals[i].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic.data()[e], numeric));
            checked += 1;
        }
    }
    Ok(CheckReport {
        name: name.to_string(),
        max_rel_err: worst,
        checked,
        tolerance: PRIMITIVE_TOL,
    })
}

/// Finite-difference checks of every differentiable primitive on small random inputs.
pub fn primitive_suite(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: &[usize]| random(&mut rng, shape, -1.0, 1.0);
    let mut out = Vec::new();
    let mut run = |name: &str, inputs: Vec<Tensor<f64>>, build: &Build<'_>| -> Result<()> {
        out.push(check_fn(name, &inputs, seed, build)?);
        Ok(())
    };

    run("matmul", vec![r(&[3, 4]), r(&[4, 2])], &|t, v| t.matmul(v[0], v[1]))?;
    run("transpose", vec![r(&[3, 2])], &|t, v| t.transpose(v[0]))?;
    run("reshape", vec![r(&[2, 6])], &|t, v| t.reshape(v[0], &[3, 4]))?;
    run("add", vec![r(&[2, 3]), r(&[2, 3])], &|t, v| t.add(v[0], v[1]))?;
    run("sub", vec![r(&[2, 3]), r(&[2, 3])], &|t, v| t.sub(v[0], v[1]))?;
    run("mul", vec![r(&[2, 3]), r(&[2, 3])], &|t, v| t.mul(v[0], v[1]))?;
    let denom = r(&[2, 3]).map(|x| x.signum() * (1.0 + x.abs()));
    run("div", vec![r(&[2, 3]), denom], &|t, v| t.div(v[0], v[1]))?;
    run("add_bias", vec![r(&[2, 2, 3]), r(&[3])], &|t, v| t.add_bias(v[0], v[1]))?;
    run("scale", vec![r(&[4])], &|t, v| Ok(t.scale(v[0], -2.5)))?;
    run("add_scalar", vec![r(&[4])], &|t, v| Ok(t.add_scalar(v[0], 0.75)))?;
    run("conv2d_s1_p1", vec![r(&[5, 5, 2]), r(&[3, 3, 2, 3])], &|t, v| {
        t.conv2d(v[0], v[1], 1, 1)
    })?;
    run("conv2d_s2_p1", vec![r(&[6, 6, 2]), r(&[3, 3, 2, 2])], &|t, v| {
        t.conv2d(v[0], v[1], 2, 1)
    })?;
    run("conv2d_s1_p0", vec![r(&[4, 5, 1]), r(&[2, 3, 1, 2])], &|t, v| {
        t.conv2d(v[0], v[1], 1, 0)
    })?;
    run("upsample_nearest", vec![r(&[2, 3, 2])], &|t, v| t.upsample_nearest(v[0], 2))?;
    run("concat", vec![r(&[3, 4]), r(&[2, 4])], &|t, v| t.concat(v[0], v[1]))?;
    run("split", vec![r(&[5, 3])], &|t, v| {
        let (a, b) = t.split(v[0], 2)?;
        let b = t.scale(b, 3.0);
        t.concat(b, a)
    })?;
    run("rows", vec![r(&[5, 3])], &|t, v| t.rows(v[0], 1, 3))?;
    run("concat_last", vec![r(&[2, 3]), r(&[2, 2])], &|t, v| t.concat_last(v[0], v[1]))?;
    run("slice_last", vec![r(&[3, 5])], &|t, v| t.slice_last(v[0], 1, 3))?;
    run("softmax", vec![r(&[3, 4]).map(|x| 3.0 * x)], &|t, v| Ok(t.softmax(v[0])))?;
    run("layer_norm", vec![r(&[3, 5]), r(&[5]), r(&[5])], &|t, v| {
        t.layer_norm(v[0], v[1], v[2], 1e-5)
    })?;
    run("silu", vec![r(&[6]).map(|x| 3.0 * x)], &|t, v| Ok(t.silu(v[0])))?;
    run("gelu", vec![r(&[6]).map(|x| 3.0 * x)], &|t, v| Ok(t.gelu(v[0])))?;
    run("sigmoid", vec![r(&[6]).map(|x| 3.0 * x)], &|t, v| Ok(t.sigmoid(v[0])))?;
    run("sum", vec![r(&[2, 3])], &|t, v| Ok(t.sum(v[0])))?;
    run("mean", vec![r(&[2, 3])], &|t, v| Ok(t.mean(v[0])))?;
    run("sum_rows", vec![r(&[2, 3, 2])], &|t, v| Ok(t.sum_rows(v[0])))?;
    let target = r(&[4, 4, 2]).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
    run("dice_loss", vec![r(&[4, 4, 2])], &|t, v| {
        dice_loss(t, v[0], &target, DEFAULT_SMOOTH)
    })?;
    Ok(out)
}

/// Small network used by [`composite_check`].
pub fn probe_config() -> UNetConfig {
    UNetConfig {
        stages: 2,
        base_channels: 4,
        input_size: (8, 8),
        prompt_dim: 4,
        insertion: Insertion::Both,
        encoder_blocks: vec![1, 1],
        ..UNetConfig::default()
    }
}

/// Full PU-Net forward plus Dice loss, differentiated with respect to one
/// scalar entry of each of four parameters spanning backbone, block, prompt
/// and head.
pub fn composite_check(seed: u64) -> Result<CheckReport> {
    let raters = 3;
    let net = PuNet::new(probe_config(), raters)?;
    let store: ParamStore<f64> = net.init_params(seed)?;
    let (h, w) = net.config().input_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let image = random(&mut rng, &[h, w, 3], 0.0, 1.0);
    let target = Tensor::from_fn(&[h, w, 2], |i| {
        let (y, x, c) = (i / (2 * w), (i / 2) % w, i % 2);
        let r = if c == 0 { 3.0 } else { 1.8 };
        let d = ((y as f64 - 3.5).powi(2) + (x as f64 - 3.5).powi(2)).sqrt();
        if d < r { 1.0 } else { 0.0 }
    });
    let tag = RaterTag::Rater(2);
    let probes = [
        ("enc.stem.0.weight", 5),
        ("itb.down1.q.weight", 3),
        (EMBEDDINGS, 2 * net.config().prompt_dim + 1),
        ("head0.weight", 1),
    ];

    let loss_of = |s: &ParamStore<f64>, inference: bool| -> Result<(Tape<f64>, Var)> {
        let mut tape = if inference { Tape::inference() } else { Tape::new() };
        let x = tape.constant(image.clone());
        let fwd = net.forward(&mut tape, s, x, tag)?;
        let loss = dice_loss(&mut tape, fwd.logits, &target, DEFAULT_SMOOTH)?;
        Ok((tape, loss))
    };

    let (tape, loss) = loss_of(&store, false)?;
    let grads = tape.backward(loss, &store)?;
    let mut worst = 0.0f64;
    let mut work = store.clone();
    for (name, idx) in probes {
        let analytic = grads
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no gradient for `{name}`")))?
            .data()[idx];
        let base = store.value(name)?.clone();
        let mut eval = |delta: f64| -> Result<f64> {
            let mut v = base.clone();
            v.data_mut()[idx] += delta;
            work.set_value(name, v)?;
            let (t, l) = loss_of(&work, true)?;
            Ok(t.value(l).item())
        };
        let numeric = (eval(STEP)? - eval(-STEP)?) / (2.0 * STEP);
        work.set_value(name, base)?;
        worst = worst.max(rel_err(analytic, numeric));
    }
    Ok(CheckReport {
        name: "punet_forward_dice".into(),
        max_rel_err: worst,
        checked: probes.len(),
        tolerance: COMPOSITE_TOL,
    })
}
