//! Reverse-mode differentiation over a closed set of matrix operations.
//!
//! Every value on the tape is a dense `rows x cols` matrix; scalars are `1x1`.
//! The operation set is exactly what the MLPs, the message-passing steps, the
//! dot-product decoder and the logistic loss need.

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};

use super::loss::{bce_term, bce_term_grad};
use super::segment::{segment_counts, segment_reduce_unchecked};
use super::{Activation, Aggregation, MlpParams, NnError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Act(Var, Activation),
    Concat(Vec<Var>),
    Gather(Var, Arc<[usize]>),
    Segment {
        input: Var,
        ids: Arc<[usize]>,
        mode: Aggregation,
    },
    RowDot(Var, Var),
    Scale(Var, f64),
    Bce {
        scores: Var,
        labels: Arc<Array2<f64>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `x + 1ᵀb` where `b` is a `1 x d` row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let v = self.value(x) + self.value(b);
        self.push(v, Op::AddRow(x, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add: shape mismatch");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        let v = self.value(x).mapv(|z| act.apply(z));
        self.push(v, Op::Act(x, act))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x) * c;
        self.push(v, Op::Scale(x, c))
    }

    /// Column-wise concatenation. A single part is returned as is.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        if let [only] = parts {
            return *only;
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat: row counts differ");
        self.push(v, Op::Concat(parts.to_vec()))
    }

    /// Row selection `out[r] = x[index[r]]`.
    pub fn gather(&mut self, x: Var, index: Arc<[usize]>) -> Var {
        let v = self.value(x).select(Axis(0), &index);
        self.push(v, Op::Gather(x, index))
    }

    pub fn segment_reduce(
        &mut self,
        x: Var,
        ids: Arc<[usize]>,
        num_segments: usize,
        mode: Aggregation,
    ) -> Var {
        debug_assert!(ids.iter().all(|&i| i < num_segments));
        let v = segment_reduce_unchecked(self.value(x).view(), &ids, num_segments, mode);
        self.push(
            v,
            Op::Segment {
                input: x,
                ids,
                mode,
            },
        )
    }

    /// Row-wise inner products, `n x d` with `n x d` to `n x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dim(), vb.dim(), "row_dot: shape mismatch");
        let v = (va * vb).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::RowDot(a, b))
    }

    /// Mean sigmoid cross-entropy over every element of `scores`.
    pub fn bce_with_logits(&mut self, scores: Var, labels: Arc<Array2<f64>>) -> Var {
        let s = self.value(scores);
        assert_eq!(s.dim(), labels.dim(), "bce: label shape mismatch");
        let n = s.len().max(1) as f64;
        let total: f64 = Zip::from(s)
            .and(labels.as_ref())
            .fold(0.0, |acc, &z, &y| acc + bce_term(z, y));
        let v = Array2::from_elem((1, 1), total / n);
        self.push(v, Op::Bce { scores, labels })
    }

    pub fn bind_mlp(&mut self, params: &MlpParams) -> BoundMlp {
        let weights = params.weights.iter().map(|w| self.leaf(w.clone())).collect();
        let biases = params
            .biases
            .iter()
            .map(|b| self.leaf(b.clone().insert_axis(Axis(0))))
            .collect();
        BoundMlp {
            weights,
            biases,
            activation: params.activation,
        }
    }

    pub fn mlp(&mut self, mlp: &BoundMlp, input: Var) -> Var {
        let last = mlp.weights.len() - 1;
        let mut x = input;
        for (i, (&w, &b)) in mlp.weights.iter().zip(&mlp.biases).enumerate() {
            let h = self.matmul(x, w);
            x = self.add_row(h, b);
            if i < last {
                x = self.activation(x, mlp.activation);
            }
        }
        x
    }

    /// Gradients of the `1 x 1` value `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(x, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Act(x, act) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|gv, &z| *gv *= act.derivative(z));
                    accumulate(&mut grads, *x, gx);
                }
                Op::Scale(x, c) => {
                    accumulate(&mut grads, *x, g * *c);
                }
                Op::Concat(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        let gp = g.slice(s![.., col..col + w]).to_owned();
                        accumulate(&mut grads, p, gp);
                        col += w;
                    }
                }
                Op::Gather(x, index) => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (row, &src) in g.rows().into_iter().zip(index.iter()) {
                        let mut target = gx.row_mut(src);
                        target += &row;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Segment { input, ids, mode } => {
                    let mut gx = g.select(Axis(0), ids);
                    if *mode == Aggregation::SegmentMean {
                        let counts = segment_counts(ids, g.nrows());
                        for (mut row, &s) in gx.rows_mut().into_iter().zip(ids.iter()) {
                            row /= counts[s] as f64;
                        }
                    }
                    accumulate(&mut grads, *input, gx);
                }
                Op::RowDot(a, b) => {
                    let ga = self.value(*b) * &g;
                    let gb = self.value(*a) * &g;
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Bce { scores, labels } => {
                    let s = self.value(*scores);
                    let scale = g[[0, 0]] / s.len().max(1) as f64;
                    let mut gs = Array2::zeros(s.dim());
                    Zip::from(&mut gs)
                        .and(s)
                        .and(labels.as_ref())
                        .for_each(|o, &z, &y| *o = scale * bce_term_grad(z, y));
                    accumulate(&mut grads, *scores, gs);
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
    match &mut grads[v.0] {
        Some(g) => *g += &delta,
        slot => *slot = Some(delta),
    }
}

#[derive(Clone, Debug)]
pub struct BoundMlp {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
    pub activation: Activation,
}

impl BoundMlp {
    pub fn gradients(&self, tape: &Tape, grads: &Gradients) -> MlpParams {
        MlpParams {
            weights: self.weights.iter().map(|&w| grads.wrt(tape, w)).collect(),
            biases: self
                .biases
                .iter()
                .map(|&b| grads.wrt(tape, b).remove_axis(Axis(0)))
                .collect(),
            activation: self.activation,
        }
    }
}

#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient with respect to a leaf; zeros when the loss does not depend on it.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Array2<f64> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Array2::zeros(tape.value(v).dim()))
    }
}

/// Evaluates a scalar closure built from tape operations and returns its
/// value with the exact gradient for each input matrix.
pub fn grad<F>(params: &[Array2<f64>], f: F) -> Result<(f64, Vec<Array2<f64>>), NnError>
where
    F: FnOnce(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &leaves);
    if tape.value(loss).dim() != (1, 1) {
        return Err(NnError::ShapeMismatch(format!(
            "loss must be 1x1, got {:?}",
            tape.value(loss).dim()
        )));
    }
    let value = tape.value(loss)[[0, 0]];
    if !value.is_finite() {
        return Err(NnError::NonFiniteLoss(value));
    }
    let grads = tape.backward(loss);
    Ok((value, leaves.iter().map(|&l| grads.wrt(&tape, l)).collect()))
}
