//! Layer descriptions shared by all families. A layer only stores the names
//! of its parameters; tensors live in the model's [`ParamStore`] and are
//! bound to graph leaves per forward pass through [`Ctx`].

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segtensor::kernels::BatchStats;
use segtensor::{Scalar, Tensor, Var};

pub type ParamStore<T> = BTreeMap<String, Tensor<T>>;

/// Running-mean name, running-variance name and the batch statistics to fold in.
pub(crate) type StatsUpdate<T> = (String, String, BatchStats<T>);

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// Allocates and initializes parameters under `<family>/<stage>/<layer>/<param>`.
pub(crate) struct Registry<T: Scalar> {
    family: &'static str,
    rng: ChaCha8Rng,
    pub params: ParamStore<T>,
    pub buffers: ParamStore<T>,
}

impl<T: Scalar> Registry<T> {
    pub fn new(family: &'static str, seed: u64) -> Self {
        Self {
            family,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: ParamStore::new(),
            buffers: ParamStore::new(),
        }
    }

    fn name(&self, stage: &str, layer: &str, param: &str) -> String {
        format!("{}/{stage}/{layer}/{param}", self.family)
    }

    /// Uniform in `±sqrt(6 / fan_in)`.
    fn fan_in_uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let bound = (6.0 / fan_in as f64).sqrt();
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
    }

    pub fn conv(&mut self, stage: &str, layer: &str, cin: usize, cout: usize, k: usize, bias: bool) -> Conv {
        let w = self.name(stage, layer, "weight");
        let t = self.fan_in_uniform(&[cout, cin, k, k], cin * k * k);
        self.params.insert(w.clone(), t);
        let b = bias.then(|| {
            let b = self.name(stage, layer, "bias");
            self.params.insert(b.clone(), Tensor::zeros(&[cout]));
            b
        });
        Conv { weight: w, bias: b, k }
    }

    pub fn bn(&mut self, stage: &str, layer: &str, c: usize) -> Bn {
        let bn = Bn {
            gamma: self.name(stage, layer, "gamma"),
            beta: self.name(stage, layer, "beta"),
            running_mean: self.name(stage, layer, "running_mean"),
            running_var: self.name(stage, layer, "running_var"),
        };
        self.params.insert(bn.gamma.clone(), Tensor::ones(&[c]));
        self.params.insert(bn.beta.clone(), Tensor::zeros(&[c]));
        self.buffers.insert(bn.running_mean.clone(), Tensor::zeros(&[c]));
        self.buffers.insert(bn.running_var.clone(), Tensor::ones(&[c]));
        bn
    }

    pub fn up(&mut self, stage: &str, layer: &str, cin: usize, cout: usize) -> UpConv {
        let w = self.name(stage, layer, "weight");
        let t = self.fan_in_uniform(&[cin, cout, 2, 2], cin);
        self.params.insert(w.clone(), t);
        let b = self.name(stage, layer, "bias");
        self.params.insert(b.clone(), Tensor::zeros(&[cout]));
        UpConv { weight: w, bias: b }
    }

    /// `conv{idx}` (+ `bn{idx}`) followed by `act`. Convolutions feeding a
    /// normalization carry no bias; the shift would be cancelled anyway.
    #[allow(clippy::too_many_arguments)]
    pub fn unit(&mut self, stage: &str, idx: usize, cin: usize, cout: usize, k: usize, bn: bool, act: Act) -> Unit {
        let conv = self.conv(stage, &format!("conv{idx}"), cin, cout, k, !bn);
        let bn = bn.then(|| self.bn(stage, &format!("bn{idx}"), cout));
        Unit { conv, bn, act }
    }

    /// `count` units `cin -> cout -> ... -> cout`.
    pub fn plain_block(&mut self, stage: &str, count: usize, cin: usize, cout: usize, bn: bool, act: Act) -> Block {
        let units = (0..count)
            .map(|i| self.unit(stage, i + 1, if i == 0 { cin } else { cout }, cout, 3, bn, act))
            .collect();
        Block::Plain(units)
    }

    /// Two 3x3 units with an additive shortcut; a 1x1 projection (`proj`)
    /// matches channels when `cin != cout`.
    pub fn residual_block(&mut self, stage: &str, cin: usize, cout: usize, bn: bool, act: Act) -> Block {
        let first = self.unit(stage, 1, cin, cout, 3, bn, act);
        let second = self.unit(stage, 2, cout, cout, 3, bn, Act::Identity);
        let proj = (cin != cout).then(|| {
            let conv = self.conv(stage, "proj", cin, cout, 1, !bn);
            let norm = bn.then(|| self.bn(stage, "projbn", cout));
            (conv, norm)
        });
        Block::Residual {
            first,
            second,
            proj,
            act,
        }
    }
}

/// Per-forward binding of parameters to graph leaves.
pub struct Ctx<'a, T: Scalar> {
    params: &'a ParamStore<T>,
    buffers: &'a ParamStore<T>,
    train: bool,
    track: bool,
    leaves: BTreeMap<String, Var<T>>,
    stats: Vec<StatsUpdate<T>>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub(crate) fn new(params: &'a ParamStore<T>, buffers: &'a ParamStore<T>, train: bool, track: bool) -> Self {
        Self {
            params,
            buffers,
            train,
            track,
            leaves: BTreeMap::new(),
            stats: Vec::new(),
        }
    }

    pub(crate) fn param(&mut self, name: &str) -> Var<T> {
        if let Some(v) = self.leaves.get(name) {
            return v.clone();
        }
        let t = self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} was never registered"))
            .clone();
        let v = Var::leaf(t, self.track);
        self.leaves.insert(name.to_string(), v.clone());
        v
    }

    fn buffer(&self, name: &str) -> &Tensor<T> {
        self.buffers
            .get(name)
            .unwrap_or_else(|| panic!("buffer {name} was never registered"))
    }

    pub(crate) fn into_parts(self) -> (BTreeMap<String, Var<T>>, Vec<StatsUpdate<T>>) {
        (self.leaves, self.stats)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Act {
    Relu,
    Leaky(f64),
    Identity,
}

impl Act {
    pub(crate) fn apply<T: Scalar>(self, x: Var<T>) -> Var<T> {
        match self {
            Act::Relu => x.relu(),
            Act::Leaky(slope) => x.leaky_relu(T::from_f64_lossy(slope)),
            Act::Identity => x,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: String,
    pub bias: Option<String>,
    pub k: usize,
}

impl Conv {
    pub(crate) fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: &Var<T>) -> Var<T> {
        let w = ctx.param(&self.weight);
        let b = self.bias.as_ref().map(|b| ctx.param(b));
        x.conv2d(&w, b.as_ref(), self.k / 2)
    }
}

#[derive(Debug, Clone)]
pub struct Bn {
    pub gamma: String,
    pub beta: String,
    pub running_mean: String,
    pub running_var: String,
}

impl Bn {
    pub(crate) fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: &Var<T>) -> Var<T> {
        let gamma = ctx.param(&self.gamma);
        let beta = ctx.param(&self.beta);
        let eps = T::from_f64_lossy(BN_EPS);
        if ctx.train {
            let (y, stats) = x.batch_norm_train(&gamma, &beta, eps);
            ctx.stats
                .push((self.running_mean.clone(), self.running_var.clone(), stats));
            y
        } else {
            let rm = ctx.buffer(&self.running_mean).clone();
            let rv = ctx.buffer(&self.running_var).clone();
            x.batch_norm_eval(&gamma, &beta, &rm, &rv, eps)
        }
    }
}

#[derive(Debug, Clone)]
pub struct UpConv {
    pub weight: String,
    pub bias: String,
}

impl UpConv {
    pub(crate) fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: &Var<T>) -> Var<T> {
        let w = ctx.param(&self.weight);
        let b = ctx.param(&self.bias);
        x.conv_transpose2x2(&w, Some(&b))
    }
}

#[derive(Debug, Clone)]
pub struct Unit {
    pub conv: Conv,
    pub bn: Option<Bn>,
    pub act: Act,
}

impl Unit {
    pub(crate) fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: &Var<T>) -> Var<T> {
        let mut y = self.conv.forward(ctx, x);
        if let Some(bn) = &self.bn {
            y = bn.forward(ctx, &y);
        }
        self.act.apply(y)
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Block {
    Plain(Vec<Unit>),
    Residual {
        first: Unit,
        second: Unit,
        proj: Option<(Conv, Option<Bn>)>,
        act: Act,
    },
}

impl Block {
    pub(crate) fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: &Var<T>) -> Var<T> {
        match self {
            Block::Plain(units) => {
                let mut h = x.clone();
                for u in units {
                    h = u.forward(ctx, &h);
                }
                h
            }
            Block::Residual {
                first,
                second,
                proj,
                act,
            } => {
                let h = first.forward(ctx, x);
                let h = second.forward(ctx, &h);
                let shortcut = match proj {
                    Some((conv, bn)) => {
                        let s = conv.forward(ctx, x);
                        match bn {
                            Some(bn) => bn.forward(ctx, &s),
                            None => s,
                        }
                    }
                    None => x.clone(),
                };
                act.apply(h.add(&shortcut))
            }
        }
    }
}
