//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Var`] is a reference-counted node holding its forward value. Nodes
//! built from at least one tracked input remember their inputs and a
//! backward rule; untracked nodes drop both immediately, so inference runs
//! in bounded memory. Node ids grow monotonically, which gives a valid
//! reverse topological order for [`Var::backward`] without a graph walk per
//! step.

use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::kernels::{self, PoolIndices};
use crate::{Scalar, Tensor};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Clamp into `[lo, hi]`, letting NaN through so divergence stays visible.
fn clamp_unit<T: Scalar>(p: T, lo: T, hi: T) -> T {
    if p.is_nan() {
        p
    } else {
        p.max(lo).min(hi)
    }
}

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &Tensor<T>, &[Var<T>]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Scalar> {
    id: u64,
    value: Tensor<T>,
    tracked: bool,
    parents: Vec<Var<T>>,
    backward: Option<BackwardFn<T>>,
    grad: RefCell<Option<Tensor<T>>>,
}

/// A value in the computation graph.
pub struct Var<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("tracked", &self.0.tracked)
            .finish()
    }
}

impl<T: Scalar> Var<T> {
    /// Leaf node; `requires_grad` leaves accumulate a gradient on backward.
    pub fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            tracked: requires_grad,
            parents: Vec::new(),
            backward: None,
            grad: RefCell::new(None),
        }))
    }

    pub fn constant(value: Tensor<T>) -> Self {
        Self::leaf(value, false)
    }

    fn from_op(value: Tensor<T>, parents: Vec<Var<T>>, backward: BackwardFn<T>) -> Self {
        let tracked = parents.iter().any(|p| p.0.tracked);
        Var(Rc::new(Node {
            id: next_id(),
            value,
            tracked,
            parents: if tracked { parents } else { Vec::new() },
            backward: if tracked { Some(backward) } else { None },
            grad: RefCell::new(None),
        }))
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.0.tracked
    }

    /// Accumulated gradient (after [`Var::backward`]) of a tracked leaf.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn take_grad(&self) -> Option<Tensor<T>> {
        self.0.grad.borrow_mut().take()
    }

    /// Back-propagate from this node, seeding it with ones. Gradients of
    /// interior nodes are released as soon as they have been consumed.
    pub fn backward(&self) {
        if !self.0.tracked {
            return;
        }
        let mut nodes: BTreeMap<u64, Var<T>> = BTreeMap::new();
        let mut stack = vec![self.clone()];
        while let Some(v) = stack.pop() {
            if !v.0.tracked || nodes.contains_key(&v.0.id) {
                continue;
            }
            for p in &v.0.parents {
                stack.push(p.clone());
            }
            nodes.insert(v.0.id, v);
        }
        *self.0.grad.borrow_mut() = Some(Tensor::ones(self.shape()));
        for v in nodes.values().rev() {
            let Some(rule) = v.0.backward.as_ref() else {
                continue;
            };
            let Some(g) = v.0.grad.borrow_mut().take() else {
                continue;
            };
            let grads = rule(&g, &v.0.value, &v.0.parents);
            debug_assert_eq!(grads.len(), v.0.parents.len());
            for (p, pg) in v.0.parents.iter().zip(grads) {
                let Some(pg) = pg else { continue };
                if !p.0.tracked {
                    continue;
                }
                debug_assert_eq!(pg.shape(), p.shape(), "gradient shape for parent");
                let mut slot = p.0.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => acc.add_assign(&pg),
                    None => *slot = Some(pg),
                }
            }
        }
    }

    /// Bytes held by the forward values of this node and everything it
    /// keeps alive for backward.
    pub fn graph_bytes(&self) -> usize {
        let mut seen = std::collections::BTreeSet::new();
        let mut stack = vec![self.clone()];
        let mut total = 0;
        while let Some(v) = stack.pop() {
            if !seen.insert(v.0.id) {
                continue;
            }
            total += v.0.value.len() * T::BYTES;
            stack.extend(v.0.parents.iter().cloned());
        }
        total
    }

    fn need(&self) -> bool {
        self.0.tracked
    }

    // ---- elementwise ----------------------------------------------------

    pub fn relu(&self) -> Self {
        self.leaky_relu(T::zero())
    }

    pub fn leaky_relu(&self, slope: T) -> Self {
        let y = self.value().map(|v| if v > T::zero() { v } else { v * slope });
        Self::from_op(
            y,
            vec![self.clone()],
            Box::new(move |g, _, ps| {
                let x = ps[0].value();
                vec![Some(g.zip_map(x, |g, x| if x > T::zero() { g } else { g * slope }))]
            }),
        )
    }

    /// Logistic function, clamped to `[eps, 1 - eps]` with `eps` the machine
    /// epsilon so outputs stay strictly inside the unit interval.
    pub fn sigmoid(&self) -> Self {
        let eps = T::epsilon();
        let hi = T::one() - eps;
        let y = self.value().map(|v| {
            let s = T::one() / (T::one() + (-v).exp());
            clamp_unit(s, eps, hi)
        });
        Self::from_op(
            y,
            vec![self.clone()],
            Box::new(|g, y, _| vec![Some(g.zip_map(y, |g, s| g * s * (T::one() - s)))]),
        )
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape(), "add: shape mismatch");
        let y = self.value().zip_map(other.value(), |a, b| a + b);
        Self::from_op(
            y,
            vec![self.clone(), other.clone()],
            Box::new(|g, _, ps| vec![ps[0].need().then(|| g.clone()), ps[1].need().then(|| g.clone())]),
        )
    }

    pub fn scale(&self, k: T) -> Self {
        Self::from_op(
            self.value().scale(k),
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(g.scale(k))]),
        )
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self) -> Self {
        let shape = self.shape().to_vec();
        Self::from_op(
            Tensor::scalar(self.value().sum()),
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(Tensor::full(&shape, g.data()[0]))]),
        )
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&self, c: &Tensor<T>) -> Self {
        let c = c.clone();
        let y = self.value().zip_map(&c, |a, b| a * b);
        Self::from_op(
            y,
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(g.zip_map(&c, |a, b| a * b))]),
        )
    }

    /// `sum_i w_i * x_i` over scalar-shaped inputs.
    pub fn weighted_sum(terms: &[(Self, T)]) -> Self {
        assert!(!terms.is_empty(), "weighted_sum of nothing");
        let total = terms.iter().fold(T::zero(), |acc, (v, w)| acc + v.value().sum() * *w);
        let weights: Vec<T> = terms.iter().map(|(_, w)| *w).collect();
        let shapes: Vec<Vec<usize>> = terms.iter().map(|(v, _)| v.shape().to_vec()).collect();
        Self::from_op(
            Tensor::scalar(total),
            terms.iter().map(|(v, _)| v.clone()).collect(),
            Box::new(move |g, _, ps| {
                ps.iter()
                    .zip(&weights)
                    .zip(&shapes)
                    .map(|((p, &w), s)| p.need().then(|| Tensor::full(s, g.data()[0] * w)))
                    .collect()
            }),
        )
    }

    /// Mean binary cross-entropy of probabilities against a 0/1 target.
    /// Probabilities are clamped to `[eps, 1 - eps]` before the logarithm.
    pub fn bce(&self, target: &Tensor<T>) -> Self {
        assert_eq!(self.shape(), target.shape(), "bce: shape mismatch");
        let eps = T::epsilon();
        let hi = T::one() - eps;
        let n = T::from_usize_lossy(target.len().max(1));
        let total = self
            .value()
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let p = clamp_unit(p, eps, hi);
                -(t * p.ln() + (T::one() - t) * (T::one() - p).ln())
            })
            .sum::<T>();
        let target = target.clone();
        Self::from_op(
            Tensor::scalar(total / n),
            vec![self.clone()],
            Box::new(move |g, _, ps| {
                let k = g.data()[0] / n;
                let grad = ps[0].value().zip_map(&target, |p, t| {
                    let p = clamp_unit(p, eps, hi);
                    k * (p - t) / (p * (T::one() - p))
                });
                vec![Some(grad)]
            }),
        )
    }

    // ---- structural -----------------------------------------------------

    /// Concatenate 4-D inputs along the channel axis.
    pub fn concat_channels(parts: &[Self]) -> Self {
        assert!(!parts.is_empty(), "concat of nothing");
        let (n, _, h, w) = parts[0].value().dims4();
        let chans: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (pn, pc, ph, pw) = p.value().dims4();
                assert_eq!((pn, ph, pw), (n, h, w), "concat_channels: shape mismatch");
                pc
            })
            .collect();
        let total: usize = chans.iter().sum();
        let hw = h * w;
        let mut y = Tensor::zeros(&[n, total, h, w]);
        for b in 0..n {
            let mut c0 = 0;
            for (p, &c) in parts.iter().zip(&chans) {
                let src = &p.value().data()[b * c * hw..(b + 1) * c * hw];
                y.data_mut()[(b * total + c0) * hw..(b * total + c0 + c) * hw].copy_from_slice(src);
                c0 += c;
            }
        }
        Self::from_op(
            y,
            parts.to_vec(),
            Box::new(move |g, _, ps| {
                let mut c0 = 0;
                ps.iter()
                    .zip(&chans)
                    .map(|(p, &c)| {
                        let out = p.need().then(|| {
                            let mut d = Tensor::zeros(&[n, c, h, w]);
                            for b in 0..n {
                                d.data_mut()[b * c * hw..(b + 1) * c * hw]
                                    .copy_from_slice(&g.data()[(b * total + c0) * hw..(b * total + c0 + c) * hw]);
                            }
                            d
                        });
                        c0 += c;
                        out
                    })
                    .collect()
            }),
        )
    }

    // ---- convolution and sampling ---------------------------------------

    /// Stride-1 convolution; `weight: [co, ci, k, k]`, `bias: [co]`.
    pub fn conv2d(&self, weight: &Self, bias: Option<&Self>, pad: usize) -> Self {
        let y = kernels::conv2d(self.value(), weight.value(), bias.map(|b| b.value()), pad);
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Self::from_op(
            y,
            parents,
            Box::new(move |g, _, ps| {
                let (dx, dw, db) = kernels::conv2d_backward(ps[0].value(), ps[1].value(), g, pad, ps[0].need());
                let mut out = vec![dx, ps[1].need().then_some(dw)];
                if ps.len() == 3 {
                    out.push(Some(db));
                }
                out
            }),
        )
    }

    /// 2x upsampling by a learned 2x2 stride-2 transposed convolution;
    /// `weight: [ci, co, 2, 2]`.
    pub fn conv_transpose2x2(&self, weight: &Self, bias: Option<&Self>) -> Self {
        let y = kernels::conv_transpose2x2(self.value(), weight.value(), bias.map(|b| b.value()));
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Self::from_op(
            y,
            parents,
            Box::new(move |g, _, ps| {
                let (dx, dw, db) = kernels::conv_transpose2x2_backward(ps[0].value(), ps[1].value(), g, ps[0].need());
                let mut out = vec![dx, ps[1].need().then_some(dw)];
                if ps.len() == 3 {
                    out.push(Some(db));
                }
                out
            }),
        )
    }

    pub fn max_pool2x2(&self) -> (Self, PoolIndices) {
        let (y, idx) = kernels::max_pool2x2(self.value());
        let saved = idx.clone();
        let v = Self::from_op(
            y,
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(kernels::max_pool2x2_backward(g, &saved))]),
        );
        (v, idx)
    }

    pub fn max_unpool2x2(&self, indices: &PoolIndices) -> Self {
        let y = kernels::max_unpool2x2(self.value(), indices);
        let saved = indices.clone();
        Self::from_op(
            y,
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(kernels::max_unpool2x2_backward(g, &saved))]),
        )
    }

    pub fn resize_bilinear(&self, oh: usize, ow: usize) -> Self {
        let (_, _, h, w) = self.value().dims4();
        if (h, w) == (oh, ow) {
            return self.clone();
        }
        let y = kernels::resize_bilinear(self.value(), oh, ow);
        Self::from_op(
            y,
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(kernels::resize_bilinear_backward(g, h, w))]),
        )
    }

    /// Training-mode batch normalization. Returns the batch statistics so
    /// the caller can update running estimates.
    pub fn batch_norm_train(&self, gamma: &Self, beta: &Self, eps: T) -> (Self, kernels::BatchStats<T>) {
        let (y, stats) = kernels::batch_norm_train(self.value(), gamma.value(), beta.value(), eps);
        let saved = stats.clone();
        let v = Self::from_op(
            y,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, _, ps| {
                let (dx, dg, db) = kernels::batch_norm_train_backward(ps[0].value(), ps[1].value(), &saved, g);
                vec![ps[0].need().then_some(dx), Some(dg), Some(db)]
            }),
        );
        (v, stats)
    }

    /// Evaluation-mode batch normalization with fixed running statistics.
    pub fn batch_norm_eval(
        &self,
        gamma: &Self,
        beta: &Self,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        eps: T,
    ) -> Self {
        let y = kernels::batch_norm_eval(
            self.value(),
            gamma.value(),
            beta.value(),
            running_mean,
            running_var,
            eps,
        );
        let rm = running_mean.clone();
        let rv = running_var.clone();
        Self::from_op(
            y,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, _, ps| {
                let (n, c, h, w) = g.dims4();
                let hw = h * w;
                let gamma = ps[1].value().data();
                let mut dx = Tensor::zeros(g.shape());
                let mut dg = vec![T::zero(); c];
                let mut db = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * hw;
                        let is = T::one() / (rv.data()[ch] + eps).sqrt();
                        for i in off..off + hw {
                            let gi = g.data()[i];
                            dx.data_mut()[i] = gi * gamma[ch] * is;
                            dg[ch] += gi * (ps[0].value().data()[i] - rm.data()[ch]) * is;
                            db[ch] += gi;
                        }
                    }
                }
                vec![
                    Some(dx),
                    Some(Tensor::from_vec(&[c], dg)),
                    Some(Tensor::from_vec(&[c], db)),
                ]
            }),
        )
    }
}
