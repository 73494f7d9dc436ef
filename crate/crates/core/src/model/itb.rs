//! Implantable transformer block: tokenizes a feature map, appends prompt
//! tokens, runs one encoder layer and restores the map.
//!
//! The encoder layer normalizes each sublayer's output before the residual:
//!
//! ```text
//! hidden = LN(MSA(z)) + z
//! out    = LN(FFN(hidden)) + hidden
//! ```
//!
//! No positional embedding is added, so the layer is equivariant to any
//! permutation of the imaging tokens.

use rand_chacha::ChaCha8Rng;

use super::layers::{add_layer_norm, add_linear, layer_norm, linear};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};
use crate::scalar::Scalar;

pub fn prefix(point: &str) -> String {
    format!("itb.{point}")
}

/// Adds the parameters of one block named `itb.{point}` to `store`.
pub fn init<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    point: &str,
    channels: usize,
    ffn_ratio: usize,
) -> Result<()> {
    let p = prefix(point);
    let g = ParamGroup::Itb;
    for proj in ["q", "k", "v", "o"] {
        add_linear(store, rng, &format!("{p}.{proj}"), g, channels, channels)?;
    }
    add_layer_norm(store, &format!("{p}.ln1"), g, channels)?;
    add_linear(store, rng, &format!("{p}.ffn1"), g, channels, ffn_ratio * channels)?;
    add_linear(store, rng, &format!("{p}.ffn2"), g, ffn_ratio * channels, channels)?;
    add_layer_norm(store, &format!("{p}.ln2"), g, channels)
}

fn multi_head_attention<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    p: &str,
    heads: usize,
    z: Var,
) -> Result<Var> {
    let d = tape.shape(z)[1];
    let dh = d / heads;
    let q = linear(tape, store, &format!("{p}.q"), z)?;
    let k = linear(tape, store, &format!("{p}.k"), z)?;
    let v = linear(tape, store, &format!("{p}.v"), z)?;
    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut merged: Option<Var> = None;
    for h in 0..heads {
        let qh = tape.slice_last(q, h * dh, dh)?;
        let kh = tape.slice_last(k, h * dh, dh)?;
        let vh = tape.slice_last(v, h * dh, dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax(scores);
        let out = tape.matmul(attn, vh)?;
        merged = Some(match merged {
            None => out,
            Some(m) => tape.concat_last(m, out)?,
        });
    }
    let merged = merged.expect("at least one head");
    linear(tape, store, &format!("{p}.o"), merged)
}

/// Runs the block at insertion point `point` on feature map `f` (`H×W×C`)
/// and prompt tokens `prompt` (`T×C`); returns the enhanced map and prompt.
pub fn itb_forward<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    point: &str,
    heads: usize,
    f: Var,
    prompt: Var,
) -> Result<(Var, Var)> {
    let fshape = tape.shape(f).to_vec();
    let &[h, w, c] = fshape.as_slice() else {
        return Err(Error::Argument(format!("block input must be H×W×C, got {fshape:?}")));
    };
    if tape.shape(prompt).len() != 2 || tape.shape(prompt)[1] != c {
        return Err(Error::shape("itb_forward", &fshape, tape.shape(prompt)));
    }
    if heads == 0 || c % heads != 0 {
        return Err(Error::Config(format!("{c} channels not divisible by {heads} heads")));
    }
    let p = prefix(point);
    let n = h * w;

    let tokens = tape.reshape(f, &[n, c])?;
    let z = tape.concat(tokens, prompt)?;

    let attn = multi_head_attention(tape, store, &p, heads, z)?;
    let attn = layer_norm(tape, store, &format!("{p}.ln1"), attn)?;
    let hidden = tape.add(attn, z)?;

    let ff = linear(tape, store, &format!("{p}.ffn1"), hidden)?;
    let ff = tape.gelu(ff);
    let ff = linear(tape, store, &format!("{p}.ffn2"), ff)?;
    let ff = layer_norm(tape, store, &format!("{p}.ln2"), ff)?;
    let out = tape.add(ff, hidden)?;

    let (img, prompt_out) = tape.split(out, n)?;
    let f_hat = tape.reshape(img, &[h, w, c])?;
    Ok((f_hat, prompt_out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::layers::{normal, weight, bias};
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    fn block(channels: usize, seed: u64) -> ParamStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        init(&mut s, &mut rng, "t", channels, 4).unwrap();
        s
    }

    #[test]
    fn shape_contract() {
        let s = block(16, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::new();
        let f = tape.constant(normal(&mut rng, &[8, 8, 16], 1.0));
        let p = tape.constant(normal(&mut rng, &[1, 16], 1.0));
        let (fh, ph) = itb_forward(&mut tape, &s, "t", 2, f, p).unwrap();
        assert_eq!(tape.shape(fh), &[8, 8, 16]);
        assert_eq!(tape.shape(ph), &[1, 16]);
    }

    #[test]
    fn prompt_width_mismatch() {
        let s = block(16, 1);
        let mut tape = Tape::<f64>::new();
        let f = tape.constant(Tensor::zeros(&[4, 4, 16]));
        let p = tape.constant(Tensor::zeros(&[1, 8]));
        assert!(matches!(
            itb_forward(&mut tape, &s, "t", 2, f, p),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn zeroed_output_projections_make_identity() {
        let mut s = block(8, 3);
        for name in ["itb.t.o", "itb.t.ffn2"] {
            let shape = s.value(&weight(name)).unwrap().shape().to_vec();
            s.set_value(&weight(name), Tensor::zeros(&shape)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f0 = normal(&mut rng, &[4, 4, 8], 1.0);
        let mut tape = Tape::new();
        let f = tape.constant(f0.clone());
        let p = tape.constant(normal(&mut rng, &[2, 8], 1.0));
        let (fh, _) = itb_forward(&mut tape, &s, "t", 2, f, p).unwrap();
        assert_eq!(tape.value(fh), &f0);
        assert!(s.value(&bias("itb.t.o")).unwrap().max_abs() == 0.0);
    }
}
