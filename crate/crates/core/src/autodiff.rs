//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and enough saved
//! state to run the matching backward kernel. Nodes are only differentiated
//! when at least one input is tracked.

use crate::error::{Error, Result};
use crate::ops::{self, ConvGeometry};
use crate::scalar::Scalar;
use crate::tensor::{LabelMap, Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv1x1 {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu(Var),
    Resize(Var),
    SoftmaxSpatial(Var),
    Concat(Vec<Var>),
    WeightedPool {
        basis: Var,
        weights: Var,
    },
    Assemble {
        weights: Var,
        codewords: Var,
    },
    GlobalAvg(Var),
    AddBroadcast {
        x: Var,
        v: Var,
    },
    Add(Var, Var),
    CrossEntropy {
        logits: Var,
        labels: LabelMap,
        ignore: u32,
        probs: Tensor<T>,
        count: usize,
    },
    Dot {
        x: Var,
        r: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Output of a batch-norm node together with the statistics it used.
#[derive(Clone, Debug)]
pub struct BatchNormNode<T> {
    pub out: Var,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input; it is differentiated when `requires_grad` is set on it.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let tracked = t.requires_grad();
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input that gradients never flow into.
    pub fn constant(&mut self, mut t: Tensor<T>) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    /// Adds a differentiable input.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t.with_requires_grad())
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name.to_string() });
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv1x1(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let value = ops::conv1x1_forward(self.value(x), self.value(w), b.map(|b| self.value(b).data()))?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("conv1x1", value, Op::Conv1x1 { x, w, b }, &inputs)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeometry) -> Result<Var> {
        let value = ops::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b).data()), geom)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("conv2d", value, Op::Conv2d { x, w, b, geom }, &inputs)
    }

    /// Batch norm with batch statistics (`running = None`) or fixed statistics.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, running: Option<(&[T], &[T])>) -> Result<BatchNormNode<T>> {
        let out = ops::batch_norm(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            running,
            T::of(ops::BN_EPS),
        )?;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            mean: out.mean.clone(),
            inv_std: out.inv_std,
            batch_stats: running.is_none(),
        };
        let v = self.push("batch_norm", out.out, op, &[x, gamma, beta])?;
        Ok(BatchNormNode {
            out: v,
            mean: out.mean,
            var: out.var,
        })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = ops::relu(self.value(x));
        self.push("relu", value, Op::Relu(x), &[x])
    }

    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.h == out_h && s.w == out_w {
            return Ok(x);
        }
        let value = ops::bilinear_resize(self.value(x), out_h, out_w)?;
        self.push("bilinear_resize", value, Op::Resize(x), &[x])
    }

    pub fn softmax_spatial(&mut self, x: Var) -> Result<Var> {
        let value = ops::softmax_spatial(self.value(x));
        self.push("softmax_spatial", value, Op::SoftmaxSpatial(x), &[x])
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.len() == 1 {
            return Ok(xs[0]);
        }
        let refs: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let value = ops::concat_channels(&refs)?;
        self.push("concat_channels", value, Op::Concat(xs.to_vec()), xs)
    }

    pub fn weighted_pool(&mut self, basis: Var, weights: Var) -> Result<Var> {
        let value = ops::weighted_pool(self.value(basis), self.value(weights))?;
        self.push("weighted_pool", value, Op::WeightedPool { basis, weights }, &[basis, weights])
    }

    pub fn assemble(&mut self, weights: Var, codewords: Var) -> Result<Var> {
        let value = ops::assemble(self.value(weights), self.value(codewords))?;
        self.push("assemble", value, Op::Assemble { weights, codewords }, &[weights, codewords])
    }

    pub fn global_avg(&mut self, x: Var) -> Result<Var> {
        let value = ops::global_avg(self.value(x));
        self.push("global_avg", value, Op::GlobalAvg(x), &[x])
    }

    pub fn add_broadcast(&mut self, x: Var, v: Var) -> Result<Var> {
        let value = ops::add_broadcast(self.value(x), self.value(v))?;
        self.push("add_broadcast", value, Op::AddBroadcast { x, v }, &[x, v])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::add(self.value(a), self.value(b))?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    /// Scalar masked cross-entropy, shaped `(1, 1, 1, 1)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &LabelMap, ignore: u32) -> Result<Var> {
        let out = ops::cross_entropy_mask(self.value(logits), labels, ignore)?;
        let value = Tensor::new([1, 1, 1, 1], vec![out.loss])?;
        let op = Op::CrossEntropy {
            logits,
            labels: labels.clone(),
            ignore,
            probs: out.probs,
            count: out.count,
        };
        self.push("cross_entropy_mask", value, op, &[logits])
    }

    /// Scalar `sum(x * r)` for a constant `r` of the same size.
    pub fn dot(&mut self, x: Var, r: Vec<T>) -> Result<Var> {
        let xs = self.value(x);
        if r.len() != xs.numel() {
            return Err(Error::Shape {
                op: "dot",
                msg: format!("{} weights for {}", r.len(), xs.shape()),
            });
        }
        let s = ops::dot(xs.data(), &r);
        self.push("dot", Tensor::new([1, 1, 1, 1], vec![s])?, Op::Dot { x, r }, &[x])
    }

    /// Gradients of a scalar node with respect to every tracked node.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let s = self.shape(root);
        if s.numel() != 1 {
            return Err(Error::Shape {
                op: "backward",
                msg: format!("root must be a scalar, got {}", s),
            });
        }
        Ok(self.backward_with(root, vec![T::one()]))
    }

    /// Propagates an explicit upstream gradient `seed` from `root`.
    pub fn backward_with(&self, root: Var, seed: Vec<T>) -> Gradients<T> {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        assert_eq!(seed.len(), self.value(root).numel(), "seed size");
        if self.nodes[root.0].tracked {
            grads[root.0] = Some(seed);
        }
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let dy = Tensor::new(node.value.shape(), g).expect("gradient shape");
            self.propagate(node, &dy, &mut grads);
            grads[i] = Some(dy.into_data());
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.nodes[v.0].tracked {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv1x1 { x, w, b } => {
                let (dx, dw, db) = ops::conv1x1_backward(self.value(*x), self.value(*w), dy);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *w, dw);
                if let Some(b) = b {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = ops::conv2d_backward(self.value(*x), self.value(*w), dy, *geom);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *w, dw);
                if let Some(b) = b {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            } => {
                let g = ops::batch_norm_backward(self.value(*x), self.value(*gamma).data(), mean, inv_std, dy, *batch_stats);
                self.accumulate(grads, *x, g.dx);
                self.accumulate(grads, *gamma, g.dgamma);
                self.accumulate(grads, *beta, g.dbeta);
            }
            Op::Relu(x) => {
                let dx = ops::relu_backward(&node.value, dy);
                self.accumulate(grads, *x, dx);
            }
            Op::Resize(x) => {
                let dx = ops::bilinear_resize_backward(self.shape(*x), dy);
                self.accumulate(grads, *x, dx);
            }
            Op::SoftmaxSpatial(x) => {
                let dx = ops::softmax_spatial_backward(&node.value, dy);
                self.accumulate(grads, *x, dx);
            }
            Op::Concat(xs) => {
                let chans: Vec<usize> = xs.iter().map(|&v| self.shape(v).c).collect();
                for (v, g) in xs.iter().zip(ops::split_channels(dy, &chans)) {
                    self.accumulate(grads, *v, g);
                }
            }
            Op::WeightedPool { basis, weights } => {
                let (db, dw) = ops::weighted_pool_backward(self.value(*basis), self.value(*weights), dy);
                self.accumulate(grads, *basis, db);
                self.accumulate(grads, *weights, dw);
            }
            Op::Assemble { weights, codewords } => {
                let (dw, dc) = ops::assemble_backward(self.value(*weights), self.value(*codewords), dy);
                self.accumulate(grads, *weights, dw);
                self.accumulate(grads, *codewords, dc);
            }
            Op::GlobalAvg(x) => {
                let dx = ops::global_avg_backward(self.shape(*x), dy);
                self.accumulate(grads, *x, dx);
            }
            Op::AddBroadcast { x, v } => {
                let (dx, dv) = ops::add_broadcast_backward(dy);
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *v, dv);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.data().to_vec());
                self.accumulate(grads, *b, dy.data().to_vec());
            }
            Op::CrossEntropy {
                logits,
                labels,
                ignore,
                probs,
                count,
            } => {
                let d = ops::cross_entropy_mask_backward(probs, labels, *ignore, *count, dy.data()[0]);
                self.accumulate(grads, *logits, d);
            }
            Op::Dot { x, r } => {
                let g = dy.data()[0];
                self.accumulate(grads, *x, r.iter().map(|&v| v * g).collect());
            }
        }
    }
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v` as a flat slice, if any flowed into it.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
