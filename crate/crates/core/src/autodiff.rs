//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every differentiable operation appends a node to the tape; a node's inputs
//! always carry smaller ids than the node itself, so a single reverse sweep over
//! the node list visits each node once in a valid order. Nodes that do not
//! depend on any trainable leaf are marked constant and skipped by the sweep,
//! which is what makes frozen subgraphs cheap.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{col2im, gemm, gemm_nt, gemm_tn, im2col, layer_norm_forward, ConvGeom, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Conv2d {
        x: Var,
        w: Var,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Upsample(Var, usize),
    ConcatRows(Var, Var),
    SliceRows(Var, usize),
    ConcatLast(Var, Var),
    SliceLast(Var, usize),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Silu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records primitive applications for one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, Var>,
    inference: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients from a reverse sweep.
pub struct VarGrads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> VarGrads<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients<T> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new() -> Self {
        Gradients { map: BTreeMap::new() }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, g: Tensor<T>) {
        self.map.insert(name.into(), g);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Adds `other` into `self`, entry by entry, in name order.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (k, g) in &other.map {
            match self.map.get_mut(k) {
                Some(acc) => acc.add_assign(g),
                None => {
                    self.map.insert(k.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in self.map.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Scalar>(v: T) -> T {
    let (c, a) = (T::of(GELU_C), T::of(GELU_A));
    T::of(0.5) * v * (T::one() + (c * (v + a * v * v * v)).tanh())
}

fn gelu_grad<T: Scalar>(v: T) -> T {
    let (c, a) = (T::of(GELU_C), T::of(GELU_A));
    let t = (c * (v + a * v * v * v)).tanh();
    let half = T::of(0.5);
    half * (T::one() + t) + half * v * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * v * v)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            inference: false,
        }
    }

    /// A tape on which parameters load as constants; nothing is differentiable.
    pub fn inference() -> Self {
        Tape {
            inference: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// An unnamed leaf that receives gradient; used for gradient checks.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Loads a named parameter; repeated loads of the same name share one node.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let p = store
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
        let v = self.push(
            p.value.clone(),
            Op::Param,
            !p.frozen && !self.inference,
        );
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "div", |x, y| x / y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Div(a, b), rg))
    }

    /// Adds a vector of length `last_dim(x)` to every trailing-axis row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let d = xv.last_dim();
        if bv.shape() != [d] {
            return Err(Error::shape("add_bias", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        if d > 0 {
            for row in out.data_mut().chunks_mut(d) {
                for (o, &b) in row.iter_mut().zip(bv.data()) {
                    *o += b;
                }
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|v| v + s);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, padding)?;
        let cols = im2col(&geom, self.value(x).data());
        let mut out = vec![T::zero(); geom.out_pixels() * geom.cout];
        gemm(
            geom.out_pixels(),
            geom.patch(),
            geom.cout,
            &cols,
            self.value(w).data(),
            &mut out,
        );
        let out = Tensor::new(&[geom.oh, geom.ow, geom.cout], out)?;
        let rg = self.rg(&[x, w]);
        // Patches are only needed for the weight gradient.
        let cols = if self.requires_grad(w) { cols } else { Vec::new() };
        Ok(self.push(out, Op::Conv2d { x, w, geom, cols }, rg))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let out = self.value(x).upsample_nearest(factor)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::Upsample(x, factor), rg))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).concat_rows(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::ConcatRows(a, b), rg))
    }

    /// Splits the leading axis at `at`; the inverse of [`Tape::concat`].
    pub fn split(&mut self, x: Var, at: usize) -> Result<(Var, Var)> {
        let n = self.value(x).rows();
        if at > n || self.value(x).rank() == 0 {
            return Err(Error::Argument(format!(
                "split point {at} outside 0..={n} for shape {:?}",
                self.shape(x)
            )));
        }
        Ok((self.slice_rows(x, 0, at), self.slice_rows(x, at, n - at)))
    }

    fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice_rows(start, len);
        let rg = self.rg(&[x]);
        self.push(out, Op::SliceRows(x, start), rg)
    }

    /// Selects `len` rows starting at `start`.
    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.value(x).rows();
        if start + len > n {
            return Err(Error::Argument(format!(
                "row range {start}..{} outside 0..{n}",
                start + len
            )));
        }
        Ok(self.slice_rows(x, start, len))
    }

    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).concat_last(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::ConcatLast(a, b), rg))
    }

    /// Selects `len` trailing-axis channels starting at `start`.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let c = self.value(x).last_dim();
        if start + len > c {
            return Err(Error::Argument(format!(
                "channel range {start}..{} outside 0..{c}",
                start + len
            )));
        }
        let out = self.value(x).slice_last(start, len);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceLast(x, start), rg))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = self.value(x).softmax();
        let rg = self.rg(&[x]);
        self.push(out, Op::Softmax(x), rg)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (out, xhat, rstd) =
            layer_norm_forward(self.value(x), self.value(gamma), self.value(beta), eps)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * sigmoid(v));
        let rg = self.rg(&[x]);
        self.push(out, Op::Silu(x), rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(gelu);
        let rg = self.rg(&[x]);
        self.push(out, Op::Gelu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).mean());
        let rg = self.rg(&[x]);
        self.push(out, Op::Mean(x), rg)
    }

    /// Sums over every axis but the last, yielding a vector of length `last_dim`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let d = xv.last_dim();
        let mut out = vec![T::zero(); d];
        if d > 0 {
            for row in xv.data().chunks(d) {
                for (o, &v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        let out = Tensor::new(&[d], out).expect("vector shape");
        let rg = self.rg(&[x]);
        self.push(out, Op::SumRows(x), rg)
    }

    /// Reverse sweep from a scalar node; returns the gradient of every node that
    /// depends on a trainable leaf.
    pub fn gradients(&self, loss: Var) -> Result<VarGrads<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(VarGrads { grads });
        }
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(VarGrads { grads })
    }

    /// Gradients of `loss` for every non-frozen parameter of `params`.
    ///
    /// Trainable parameters that the loss does not touch get an all-zero entry;
    /// frozen parameters never appear in the result.
    pub fn backward(&self, loss: Var, params: &ParamStore<T>) -> Result<Gradients<T>> {
        let vg = self.gradients(loss)?;
        let mut out = Gradients::new();
        for (name, p) in params.trainable() {
            let g = match self.params.get(name) {
                Some(&v) => vg
                    .wrt(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape())),
                None => Tensor::zeros(p.value.shape()),
            };
            out.insert(name, g);
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(g.shape(), self.nodes[v.0].value.shape());
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    gemm_nt(m, n, k, g.data(), bv.data(), &mut da);
                    self.acc(grads, *a, Tensor::new(&[m, k], da)?);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    gemm_tn(k, m, n, av.data(), g.data(), &mut db);
                    self.acc(grads, *b, Tensor::new(&[k, n], db)?);
                }
            }
            Op::Transpose(a) => self.acc(grads, *a, g.transpose()?),
            Op::Reshape(a) => {
                let s = self.shape(*a).to_vec();
                self.acc(grads, *a, g.clone().reshape(&s)?);
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.acc(grads, *a, g.zip_map(self.value(*b), "mul", |g, b| g * b)?);
                }
                if self.wants(*b) {
                    self.acc(grads, *b, g.zip_map(self.value(*a), "mul", |g, a| g * a)?);
                }
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                if self.wants(*a) {
                    self.acc(grads, *a, g.zip_map(bv, "div", |g, b| g / b)?);
                }
                if self.wants(*b) {
                    let db = Tensor::from_fn(bv.shape(), |i| {
                        -g.data()[i] * y.data()[i] / bv.data()[i]
                    });
                    self.acc(grads, *b, db);
                }
            }
            Op::AddBias(x, bias) => {
                self.acc(grads, *x, g.clone());
                if self.wants(*bias) {
                    let d = g.last_dim();
                    let mut db = vec![T::zero(); d];
                    for row in g.data().chunks(d.max(1)) {
                        for (o, &v) in db.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    self.acc(grads, *bias, Tensor::new(&[d], db)?);
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, g.map(|v| v * *s)),
            Op::AddScalar(a) => self.acc(grads, *a, g.clone()),
            Op::Conv2d { x, w, geom, cols } => {
                let (p, co, np) = (geom.patch(), geom.cout, geom.out_pixels());
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); p * co];
                    gemm_tn(p, np, co, cols, g.data(), &mut dw);
                    self.acc(grads, *w, Tensor::new(self.shape(*w), dw)?);
                }
                if self.wants(*x) {
                    let mut dcols = vec![T::zero(); np * p];
                    gemm_nt(np, co, p, g.data(), self.value(*w).data(), &mut dcols);
                    let dx = col2im(geom, &dcols);
                    self.acc(grads, *x, Tensor::new(self.shape(*x), dx)?);
                }
            }
            Op::Upsample(x, f) => {
                let (h, w, c) = self.value(*x).expect_map("upsample_nearest")?;
                let ow = w * f;
                let mut dx = vec![T::zero(); h * w * c];
                for (pix, gp) in g.data().chunks(c.max(1)).enumerate() {
                    let (oy, ox) = (pix / ow, pix % ow);
                    let dst = ((oy / f) * w + ox / f) * c;
                    for (d, &v) in dx[dst..dst + c].iter_mut().zip(gp) {
                        *d += v;
                    }
                }
                self.acc(grads, *x, Tensor::new(&[h, w, c], dx)?);
            }
            Op::ConcatRows(a, b) => {
                let (ga, gb) = g.split_rows(self.value(*a).rows())?;
                self.acc(grads, *a, ga);
                self.acc(grads, *b, gb);
            }
            Op::SliceRows(x, start) => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.shape());
                let row: usize = xv.shape()[1..].iter().product();
                dx.data_mut()[start * row..start * row + g.len()].copy_from_slice(g.data());
                self.acc(grads, *x, dx);
            }
            Op::ConcatLast(a, b) => {
                let ca = self.value(*a).last_dim();
                let cb = self.value(*b).last_dim();
                if self.wants(*a) {
                    self.acc(grads, *a, g.slice_last(0, ca));
                }
                if self.wants(*b) {
                    self.acc(grads, *b, g.slice_last(ca, cb));
                }
            }
            Op::SliceLast(x, start) => {
                let xv = self.value(*x);
                let (c, len) = (xv.last_dim(), g.last_dim());
                let mut dx = Tensor::zeros(xv.shape());
                if len > 0 {
                    for (i, gr) in g.data().chunks(len).enumerate() {
                        dx.data_mut()[i * c + start..i * c + start + len].copy_from_slice(gr);
                    }
                }
                self.acc(grads, *x, dx);
            }
            Op::Softmax(x) => {
                let n = y.last_dim();
                let mut dx = vec![T::zero(); y.len()];
                if n > 0 {
                    for ((dr, yr), gr) in dx
                        .chunks_mut(n)
                        .zip(y.data().chunks(n))
                        .zip(g.data().chunks(n))
                    {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *d = yv * (gv - dot);
                        }
                    }
                }
                self.acc(grads, *x, Tensor::new(y.shape(), dx)?);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = y.last_dim();
                let gam = self.value(*gamma).data();
                if self.wants(*gamma) || self.wants(*beta) {
                    let mut dg = vec![T::zero(); d];
                    let mut db = vec![T::zero(); d];
                    for (gr, xr) in g.data().chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * xr[j];
                            db[j] += gr[j];
                        }
                    }
                    self.acc(grads, *gamma, Tensor::new(&[d], dg)?);
                    self.acc(grads, *beta, Tensor::new(&[d], db)?);
                }
                if self.wants(*x) {
                    let inv_d = T::one() / T::of(d as f64);
                    let mut dx = vec![T::zero(); y.len()];
                    for (r, ((dr, gr), xr)) in dx
                        .chunks_mut(d)
                        .zip(g.data().chunks(d))
                        .zip(xhat.chunks(d))
                        .enumerate()
                    {
                        let mut mean_g = T::zero();
                        let mut mean_gx = T::zero();
                        for j in 0..d {
                            let dxh = gr[j] * gam[j];
                            mean_g += dxh;
                            mean_gx += dxh * xr[j];
                        }
                        mean_g *= inv_d;
                        mean_gx *= inv_d;
                        for j in 0..d {
                            dr[j] = rstd[r] * (gr[j] * gam[j] - mean_g - xr[j] * mean_gx);
                        }
                    }
                    self.acc(grads, *x, Tensor::new(y.shape(), dx)?);
                }
            }
            Op::Silu(x) => {
                let xv = self.value(*x);
                let dx = g.zip_map(xv, "silu", |g, v| {
                    let s = sigmoid(v);
                    g * s * (T::one() + v * (T::one() - s))
                })?;
                self.acc(grads, *x, dx);
            }
            Op::Gelu(x) => {
                let dx = g.zip_map(self.value(*x), "gelu", |g, v| g * gelu_grad(v))?;
                self.acc(grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = g.zip_map(y, "sigmoid", |g, s| g * s * (T::one() - s))?;
                self.acc(grads, *x, dx);
            }
            Op::Sum(x) => {
                let s = self.shape(*x).to_vec();
                self.acc(grads, *x, Tensor::full(&s, g.item()));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let s = g.item() / T::of(xv.len().max(1) as f64);
                self.acc(grads, *x, Tensor::full(xv.shape(), s));
            }
            Op::SumRows(x) => {
                let xv = self.value(*x);
                let d = xv.last_dim();
                let dx = Tensor::from_fn(xv.shape(), |i| g.data()[i % d]);
                self.acc(grads, *x, dx);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamGroup;

    #[test]
    fn sum_of_unfrozen_param_has_unit_gradient() {
        let mut store = ParamStore::<f64>::new();
        store
            .insert("p", ParamGroup::Head, Tensor::from_fn(&[2, 3], |i| i as f64))
            .unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&store, "p").unwrap();
        let loss = tape.sum(p);
        let g = tape.backward(loss, &store).unwrap();
        assert_eq!(g.get("p").unwrap(), &Tensor::ones(&[2, 3]));

        store.set_frozen("p", true).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&store, "p").unwrap();
        let loss = tape.sum(p);
        let g = tape.backward(loss, &store).unwrap();
        assert!(g.get("p").is_none());
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::zeros(&[2]));
        assert!(matches!(tape.gradients(x), Err(Error::Contract(_))));
    }

    #[test]
    fn matmul_gradient_is_ones_times_b_transposed() {
        let a = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64 - 1.0);
        let b = Tensor::<f64>::from_fn(&[3, 4], |i| (i as f64).sin());
        let mut tape = Tape::new();
        let (va, vb) = (tape.input(a), tape.constant(b.clone()));
        let c = tape.matmul(va, vb).unwrap();
        let loss = tape.sum(c);
        let g = tape.gradients(loss).unwrap();
        let expected = Tensor::ones(&[2, 4]).matmul(&b.transpose().unwrap()).unwrap();
        let got = g.wrt(va).unwrap();
        for (x, y) in got.data().iter().zip(expected.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn unused_trainable_param_gets_zero_gradient() {
        let mut store = ParamStore::<f32>::new();
        store.insert("used", ParamGroup::Head, Tensor::ones(&[2])).unwrap();
        store.insert("idle", ParamGroup::Prompt, Tensor::ones(&[3])).unwrap();
        let mut tape = Tape::new();
        let u = tape.param(&store, "used").unwrap();
        let loss = tape.sum(u);
        let g = tape.backward(loss, &store).unwrap();
        assert_eq!(g.get("idle").unwrap(), &Tensor::zeros(&[3]));
    }

    #[test]
    fn upsample_backward_sums_blocks() {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(Tensor::zeros(&[2, 3, 2]));
        let y = tape.upsample_nearest(x, 3).unwrap();
        let loss = tape.sum(y);
        let g = tape.gradients(loss).unwrap();
        assert!(g.wrt(x).unwrap().data().iter().all(|&v| v == 9.0));
    }
}
