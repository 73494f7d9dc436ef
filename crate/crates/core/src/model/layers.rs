//! Parameterized layer helpers shared by the backbone, the blocks and the heads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::{ParamGroup, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) fn weight(prefix: &str) -> String {
    format!("{prefix}.weight")
}

pub(crate) fn bias(prefix: &str) -> String {
    format!("{prefix}.bias")
}

pub(crate) fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
}

pub(crate) fn normal<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}

/// Registers a `k×k` convolution with Kaiming-uniform weights and zero bias.
pub(crate) fn add_conv<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    group: ParamGroup,
    k: usize,
    cin: usize,
    cout: usize,
) -> Result<()> {
    let bound = (6.0 / (k * k * cin) as f64).sqrt();
    store.insert(weight(prefix), group, uniform(rng, &[k, k, cin, cout], bound))?;
    store.insert(bias(prefix), group, Tensor::zeros(&[cout]))
}

/// Registers a dense `din→dout` layer with Xavier-uniform weights and zero bias.
pub(crate) fn add_linear<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    group: ParamGroup,
    din: usize,
    dout: usize,
) -> Result<()> {
    let bound = (6.0 / (din + dout) as f64).sqrt();
    store.insert(weight(prefix), group, uniform(rng, &[din, dout], bound))?;
    store.insert(bias(prefix), group, Tensor::zeros(&[dout]))
}

pub(crate) fn add_layer_norm<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    group: ParamGroup,
    d: usize,
) -> Result<()> {
    store.insert(format!("{prefix}.gamma"), group, Tensor::ones(&[d]))?;
    store.insert(format!("{prefix}.beta"), group, Tensor::zeros(&[d]))
}

pub(crate) fn conv<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    prefix: &str,
    x: Var,
    stride: usize,
) -> Result<Var> {
    let w = tape.param(store, &weight(prefix))?;
    let b = tape.param(store, &bias(prefix))?;
    let pad = tape.shape(w)[0] / 2;
    let y = tape.conv2d(x, w, stride, pad)?;
    tape.add_bias(y, b)
}

pub(crate) fn linear<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var> {
    let w = tape.param(store, &weight(prefix))?;
    let b = tape.param(store, &bias(prefix))?;
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

pub(crate) fn layer_norm<T: Scalar>(tape: &mut Tape<T>, store: &ParamStore<T>, prefix: &str, x: Var) -> Result<Var> {
    let g = tape.param(store, &format!("{prefix}.gamma"))?;
    let b = tape.param(store, &format!("{prefix}.beta"))?;
    tape.layer_norm(x, g, b, T::of(super::LN_EPS))
}
