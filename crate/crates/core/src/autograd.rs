//! A small reverse-mode tape over row-major `B x D` matrices.
//!
//! Every forward pass records its operations on a [`Tape`]; [`Tape::backward`]
//! then walks the record in reverse and accumulates gradients for the
//! parameters it touched. Rows are batch entries throughout.

use std::borrow::Cow;

use ndarray::{s, Array1, Array2, Axis, Zip};

use crate::params::{Gradients, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Array2<f64>),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    Gather(Var, Vec<usize>),
    SelectRows(Vec<bool>, Var, Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
        batch_stats: bool,
    },
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Array2<f64>,
    },
}

struct Node<'p> {
    value: Cow<'p, Array2<f64>>,
    op: Op,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node<'p>>,
}

/// Per-column batch statistics observed by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct ObservedStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    pub count: usize,
}

pub const BN_EPS: f64 = 1e-5;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant with no gradient.
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.input(Array2::zeros((rows, cols)))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(self.store.get(id)),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// Adds a `1 x D` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let value = self.value(x) + self.value(row);
        self.push(value, Op::AddRow(x, row))
    }

    /// `x W + b` for a weight `in x out` and bias `1 x out`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        let value = self.value(a) * &c;
        self.push(value, Op::MulConst(a, c))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat rows agree");
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(value, Op::Slice(a, start, len))
    }

    /// Row lookup into an embedding table.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut value = Array2::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            value.row_mut(r).assign(&t.row(id));
        }
        self.push(value, Op::Gather(table, ids.to_vec()))
    }

    /// Row `r` comes from `a` where `take_a[r]`, else from `b`.
    pub fn select_rows(&mut self, take_a: &[bool], a: Var, b: Var) -> Var {
        if take_a.iter().all(|&t| t) {
            return a;
        }
        if take_a.iter().all(|&t| !t) {
            return b;
        }
        let mut value = self.value(b).clone();
        for (r, &t) in take_a.iter().enumerate() {
            if t {
                value.row_mut(r).assign(&self.value(a).row(r));
            }
        }
        self.push(value, Op::SelectRows(take_a.to_vec(), a, b))
    }

    /// Batch norm using the statistics of the current batch. Returns the
    /// observed (biased) statistics so the caller can update running averages.
    pub fn batch_norm_train(&mut self, x: Var, gamma: ParamId, beta: ParamId) -> (Var, ObservedStats) {
        let xv = self.value(x);
        let n = xv.nrows() as f64;
        let mean = xv.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = xv - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let stats = ObservedStats {
            mean: mean.clone(),
            var: var.clone(),
            count: xv.nrows(),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let xhat = centered * &inv_std;
        (self.batch_norm_apply(x, gamma, beta, xhat, inv_std, true), stats)
    }

    /// Batch norm with fixed statistics.
    pub fn batch_norm_frozen(
        &mut self,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        mean: &Array1<f64>,
        var: &Array1<f64>,
    ) -> Var {
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let xhat = (self.value(x) - mean) * &inv_std;
        self.batch_norm_apply(x, gamma, beta, xhat, inv_std, false)
    }

    fn batch_norm_apply(
        &mut self,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
        batch_stats: bool,
    ) -> Var {
        let gamma = self.param(gamma);
        let beta = self.param(beta);
        let value = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        )
    }

    /// `sum_r weights[r] * -log softmax(logits[r])[targets[r]]` as a `1 x 1`.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Var {
        let logp = log_softmax_rows(self.value(logits));
        let loss: f64 = targets
            .iter()
            .zip(weights)
            .enumerate()
            .filter(|(_, (_, &w))| w != 0.0)
            .map(|(r, (&t, &w))| -w * logp[[r, t]])
            .sum();
        let probs = logp.mapv(f64::exp);
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
        )
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// Back-propagates from the `1 x 1` node `root` and returns the gradient
    /// of every parameter (zero for parameters that were not used).
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads = Gradients::zeros_like(self.store);
        self.backward_into(root, &mut grads);
        grads
    }

    pub fn backward_into(&self, root: Var, out: &mut Gradients) {
        let mut grads: Vec<Option<Array2<f64>>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Array2::ones(self.value(root).raw_dim()));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(x, row) => {
                    let grow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, grow);
                    acc(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MulConst(a, c) => acc(&mut grads, *a, g * c),
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(node.value.as_ref())
                        .for_each(|g, &y| *g *= y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(node.value.as_ref())
                        .for_each(|g, &y| *g *= 1.0 - y * y);
                    acc(&mut grads, *a, ga);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::Slice(a, start, len) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![.., *start..*start + *len]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::Gather(table, ids) => {
                    let mut gt = Array2::zeros(self.value(*table).raw_dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut dst = gt.row_mut(id);
                        dst += &g.row(r);
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::SelectRows(take_a, a, b) => {
                    let mut ga = Array2::zeros(g.raw_dim());
                    let mut gb = g;
                    for (r, &t) in take_a.iter().enumerate() {
                        if t {
                            ga.row_mut(r).assign(&gb.row(r));
                            gb.row_mut(r).fill(0.0);
                        }
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    batch_stats,
                } => {
                    acc(&mut grads, *beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(
                        &mut grads,
                        *gamma,
                        (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                    let gamma_row = self.value(*gamma).row(0).to_owned();
                    let gxhat = &g * &gamma_row;
                    let gx = if *batch_stats {
                        let mean_g = gxhat.mean_axis(Axis(0)).expect("non-empty");
                        let mean_gx = (&gxhat * xhat).mean_axis(Axis(0)).expect("non-empty");
                        (&gxhat - &mean_g - &(xhat * &mean_gx)) * inv_std
                    } else {
                        gxhat * inv_std
                    };
                    acc(&mut grads, *x, gx);
                }
                Op::SoftmaxXent {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let scale = g[[0, 0]];
                    let mut gl = probs.clone();
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        let mut row = gl.row_mut(r);
                        if w == 0.0 {
                            row.fill(0.0);
                        } else {
                            row[t] -= 1.0;
                            row *= w * scale;
                        }
                    }
                    acc(&mut grads, *logits, gl);
                }
            }
        }
    }
}
