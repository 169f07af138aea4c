//! Minimal reverse-mode automatic differentiation over 2-D `f64` arrays.
//!
//! The recurrent generator and critic are too irregular for the hand-derived
//! backward pass used by the classifier, and the gradient penalty needs the
//! derivative of the critic's *input gradient* with respect to the critic
//! weights. Backward passes here therefore build graph nodes instead of plain
//! arrays: calling [`grad`] on a value produced by a previous [`grad`] yields
//! exact second-order derivatives.
//!
//! Shapes are deliberately restricted to two axes. Sequences are handled as
//! lists of `[batch, features]` nodes, one per timestep.

use ndarray::{concatenate, s, Array2, Axis};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

enum Op {
    Leaf { trainable: bool },
    MatMul,
    Transpose,
    /// Elementwise add; the right operand may be a `[1, k]` row broadcast
    /// over the left operand's rows.
    Add,
    /// Elementwise subtract with the same broadcast rule as `Add`.
    Sub,
    /// Elementwise multiply; shapes must match exactly.
    Mul,
    Scale(f64),
    AddScalar,
    Recip,
    Sigmoid,
    Tanh,
    LeakyRelu(f64),
    Square,
    Sqrt,
    SoftmaxRows,
    SumAll,
    SumRows,
    SumCols,
    Broadcast,
    ConcatCols,
    SliceCols { start: usize },
    PadCols { start: usize },
}

struct Node {
    value: Array2<f64>,
    parents: Vec<Var>,
    op: Op,
    needs_grad: bool,
}

/// A node in the differentiation graph. Cheap to clone (shared reference).
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl Var {
    fn new(value: Array2<f64>, op: Op, parents: Vec<Var>) -> Var {
        let needs_grad = match op {
            Op::Leaf { trainable } => trainable,
            _ => parents.iter().any(|p| p.0.needs_grad),
        };
        Var(Rc::new(Node { value, parents, op, needs_grad }))
    }

    /// A leaf that participates in differentiation (weights, penalty inputs).
    pub fn leaf(value: Array2<f64>) -> Var {
        Var::new(value, Op::Leaf { trainable: true }, Vec::new())
    }

    /// A leaf treated as a constant: no gradient flows into it.
    pub fn constant(value: Array2<f64>) -> Var {
        Var::new(value, Op::Leaf { trainable: false }, Vec::new())
    }

    /// The constant `[1, 1]` array holding `x`.
    pub fn scalar_constant(x: f64) -> Var {
        Var::constant(Array2::from_elem((1, 1), x))
    }

    pub fn value(&self) -> &Array2<f64> {
        &self.0.value
    }

    pub fn rows(&self) -> usize {
        self.0.value.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.value.ncols()
    }

    /// Extracts the value of a `[1, 1]` node.
    pub fn scalar(&self) -> f64 {
        assert_eq!(self.0.value.dim(), (1, 1), "scalar() on non-scalar node");
        self.0.value[(0, 0)]
    }

    /// A constant copy of this node's value, cut off from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    fn id(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    pub fn matmul(&self, rhs: &Var) -> Var {
        assert_eq!(
            self.cols(),
            rhs.rows(),
            "matmul: [{},{}] x [{},{}]",
            self.rows(),
            self.cols(),
            rhs.rows(),
            rhs.cols()
        );
        let value = self.value().dot(rhs.value());
        Var::new(value, Op::MatMul, vec![self.clone(), rhs.clone()])
    }

    pub fn t(&self) -> Var {
        Var::new(self.value().t().to_owned(), Op::Transpose, vec![self.clone()])
    }

    fn rowwise_compatible(&self, rhs: &Var) -> bool {
        rhs.value().dim() == self.value().dim() || (rhs.rows() == 1 && rhs.cols() == self.cols())
    }

    pub fn add(&self, rhs: &Var) -> Var {
        assert!(self.rowwise_compatible(rhs), "add: shape mismatch");
        let value = self.value() + rhs.value();
        Var::new(value, Op::Add, vec![self.clone(), rhs.clone()])
    }

    pub fn sub(&self, rhs: &Var) -> Var {
        assert!(self.rowwise_compatible(rhs), "sub: shape mismatch");
        let value = self.value() - rhs.value();
        Var::new(value, Op::Sub, vec![self.clone(), rhs.clone()])
    }

    pub fn mul(&self, rhs: &Var) -> Var {
        assert_eq!(self.value().dim(), rhs.value().dim(), "mul: shape mismatch");
        let value = self.value() * rhs.value();
        Var::new(value, Op::Mul, vec![self.clone(), rhs.clone()])
    }

    pub fn scale(&self, factor: f64) -> Var {
        Var::new(self.value() * factor, Op::Scale(factor), vec![self.clone()])
    }

    pub fn neg(&self) -> Var {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, term: f64) -> Var {
        Var::new(self.value() + term, Op::AddScalar, vec![self.clone()])
    }

    pub fn recip(&self) -> Var {
        Var::new(self.value().mapv(|x| 1.0 / x), Op::Recip, vec![self.clone()])
    }

    pub fn sigmoid(&self) -> Var {
        let value = self.value().mapv(|x| 1.0 / (1.0 + (-x).exp()));
        Var::new(value, Op::Sigmoid, vec![self.clone()])
    }

    pub fn tanh(&self) -> Var {
        Var::new(self.value().mapv(f64::tanh), Op::Tanh, vec![self.clone()])
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        let value = self.value().mapv(|x| if x > 0.0 { x } else { slope * x });
        Var::new(value, Op::LeakyRelu(slope), vec![self.clone()])
    }

    pub fn square(&self) -> Var {
        Var::new(self.value().mapv(|x| x * x), Op::Square, vec![self.clone()])
    }

    pub fn sqrt(&self) -> Var {
        Var::new(self.value().mapv(f64::sqrt), Op::Sqrt, vec![self.clone()])
    }

    /// Numerically stable softmax along each row.
    pub fn softmax_rows(&self) -> Var {
        let mut value = self.value().clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        Var::new(value, Op::SoftmaxRows, vec![self.clone()])
    }

    /// Sum of every entry, as a `[1, 1]` node.
    pub fn sum_all(&self) -> Var {
        let value = Array2::from_elem((1, 1), self.value().sum());
        Var::new(value, Op::SumAll, vec![self.clone()])
    }

    /// Mean of every entry, as a `[1, 1]` node.
    pub fn mean_all(&self) -> Var {
        let n = (self.rows() * self.cols()) as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Column sums: `[r, c] -> [1, c]`.
    pub fn sum_rows(&self) -> Var {
        let value = self.value().sum_axis(Axis(0)).insert_axis(Axis(0));
        Var::new(value, Op::SumRows, vec![self.clone()])
    }

    /// Row sums: `[r, c] -> [r, 1]`.
    pub fn sum_cols(&self) -> Var {
        let value = self.value().sum_axis(Axis(1)).insert_axis(Axis(1));
        Var::new(value, Op::SumCols, vec![self.clone()])
    }

    /// Broadcasts a `[1, 1]`, `[1, c]` or `[r, 1]` node up to `[rows, cols]`.
    pub fn broadcast_to(&self, rows: usize, cols: usize) -> Var {
        let (r, c) = self.value().dim();
        assert!(
            (r == rows || r == 1) && (c == cols || c == 1),
            "broadcast: [{r},{c}] -> [{rows},{cols}]"
        );
        let value = self.value().broadcast((rows, cols)).expect("broadcast").to_owned();
        Var::new(value, Op::Broadcast, vec![self.clone()])
    }

    /// Horizontal concatenation: `[r, a] ++ [r, b] -> [r, a + b]`.
    pub fn concat_cols(&self, rhs: &Var) -> Var {
        assert_eq!(self.rows(), rhs.rows(), "concat_cols: row mismatch");
        let value = concatenate(Axis(1), &[self.value().view(), rhs.value().view()])
            .expect("concat_cols");
        Var::new(value, Op::ConcatCols, vec![self.clone(), rhs.clone()])
    }

    /// Column slice `[r, W] -> [r, len]` starting at `start`.
    pub fn slice_cols(&self, start: usize, len: usize) -> Var {
        assert!(len >= 1 && start + len <= self.cols(), "slice_cols: out of range");
        let value = self.value().slice(s![.., start..start + len]).to_owned();
        Var::new(value, Op::SliceCols { start }, vec![self.clone()])
    }

    /// Embeds `[r, w]` into a zero matrix `[r, total]` at column `start`.
    /// Adjoint of `slice_cols`.
    fn pad_cols(&self, start: usize, total: usize) -> Var {
        assert!(start + self.cols() <= total, "pad_cols: out of range");
        let mut value = Array2::zeros((self.rows(), total));
        value
            .slice_mut(s![.., start..start + self.cols()])
            .assign(self.value());
        Var::new(value, Op::PadCols { start }, vec![self.clone()])
    }
}

/// Gradient of a scalar node with respect to each of `wrt`.
///
/// The returned nodes are themselves part of the graph, so they can be fed
/// back into further arithmetic and differentiated again. Vars in `wrt` that
/// the output does not depend on get a zero gradient of matching shape.
pub fn grad(output: &Var, wrt: &[&Var]) -> Vec<Var> {
    assert_eq!(output.value().dim(), (1, 1), "grad: output must be scalar");

    // Topological order over the sub-graph that can reach a trainable leaf.
    let mut order: Vec<Var> = Vec::new();
    let mut seen: HashSet<usize> = HashSet::new();
    let mut stack: Vec<(Var, usize)> = Vec::new();
    if output.0.needs_grad {
        stack.push((output.clone(), 0));
        seen.insert(output.id());
    }
    while let Some((node, child)) = stack.pop() {
        let next = node.0.parents[child..]
            .iter()
            .position(|p| p.0.needs_grad && !seen.contains(&p.id()));
        match next {
            Some(offset) => {
                let parent = node.0.parents[child + offset].clone();
                seen.insert(parent.id());
                stack.push((node, child + offset + 1));
                stack.push((parent, 0));
            }
            None => order.push(node),
        }
    }

    let mut adjoints: HashMap<usize, Var> = HashMap::new();
    adjoints.insert(output.id(), Var::constant(Array2::ones((1, 1))));

    let accumulate = |adjoints: &mut HashMap<usize, Var>, var: &Var, contribution: Var| {
        if !var.0.needs_grad {
            return;
        }
        let total = match adjoints.remove(&var.id()) {
            Some(existing) => existing.add(&contribution),
            None => contribution,
        };
        adjoints.insert(var.id(), total);
    };

    for node in order.iter().rev() {
        let Some(g) = adjoints.get(&node.id()).cloned() else { continue };
        let parents = &node.0.parents;
        match node.0.op {
            Op::Leaf { .. } => {}
            Op::MatMul => {
                let (a, b) = (&parents[0], &parents[1]);
                accumulate(&mut adjoints, a, g.matmul(&b.t()));
                accumulate(&mut adjoints, b, a.t().matmul(&g));
            }
            Op::Transpose => accumulate(&mut adjoints, &parents[0], g.t()),
            Op::Add | Op::Sub => {
                let (a, b) = (&parents[0], &parents[1]);
                let negate = matches!(node.0.op, Op::Sub);
                accumulate(&mut adjoints, a, g.clone());
                let mut db = if b.value().dim() == node.value().dim() {
                    g.clone()
                } else {
                    g.sum_rows()
                };
                if negate {
                    db = db.neg();
                }
                accumulate(&mut adjoints, b, db);
            }
            Op::Mul => {
                let (a, b) = (&parents[0], &parents[1]);
                accumulate(&mut adjoints, a, g.mul(b));
                accumulate(&mut adjoints, b, g.mul(a));
            }
            Op::Scale(factor) => accumulate(&mut adjoints, &parents[0], g.scale(factor)),
            Op::AddScalar => accumulate(&mut adjoints, &parents[0], g.clone()),
            Op::Recip => {
                // d(1/x) = -y^2 dx, written in terms of the output y.
                accumulate(&mut adjoints, &parents[0], g.mul(&node.square()).neg());
            }
            Op::Sigmoid => {
                let one_minus = node.neg().add_scalar(1.0);
                accumulate(&mut adjoints, &parents[0], g.mul(node).mul(&one_minus));
            }
            Op::Tanh => {
                let one_minus_sq = node.square().neg().add_scalar(1.0);
                accumulate(&mut adjoints, &parents[0], g.mul(&one_minus_sq));
            }
            Op::LeakyRelu(slope) => {
                // Piecewise-constant derivative: a constant mask is exact
                // almost everywhere and contributes nothing to higher orders.
                let mask = Var::constant(
                    parents[0].value().mapv(|x| if x > 0.0 { 1.0 } else { slope }),
                );
                accumulate(&mut adjoints, &parents[0], g.mul(&mask));
            }
            Op::Square => {
                accumulate(&mut adjoints, &parents[0], g.mul(&parents[0]).scale(2.0));
            }
            Op::Sqrt => {
                accumulate(&mut adjoints, &parents[0], g.mul(&node.scale(2.0).recip()));
            }
            Op::SoftmaxRows => {
                let dot = g.mul(node).sum_cols().broadcast_to(node.rows(), node.cols());
                accumulate(&mut adjoints, &parents[0], node.mul(&g.sub(&dot)));
            }
            Op::SumAll | Op::SumRows | Op::SumCols => {
                let a = &parents[0];
                accumulate(&mut adjoints, a, g.broadcast_to(a.rows(), a.cols()));
            }
            Op::Broadcast => {
                let a = &parents[0];
                let db = match a.value().dim() {
                    d if d == node.value().dim() => g.clone(),
                    (1, 1) => g.sum_all(),
                    (1, _) => g.sum_rows(),
                    (_, 1) => g.sum_cols(),
                    d => unreachable!("broadcast from {d:?}"),
                };
                accumulate(&mut adjoints, a, db);
            }
            Op::ConcatCols => {
                let (a, b) = (&parents[0], &parents[1]);
                accumulate(&mut adjoints, a, g.slice_cols(0, a.cols()));
                accumulate(&mut adjoints, b, g.slice_cols(a.cols(), b.cols()));
            }
            Op::SliceCols { start } => {
                let a = &parents[0];
                accumulate(&mut adjoints, a, g.pad_cols(start, a.cols()));
            }
            Op::PadCols { start } => {
                let a = &parents[0];
                accumulate(&mut adjoints, a, g.slice_cols(start, a.cols()));
            }
        }
    }

    wrt.iter()
        .map(|v| match adjoints.get(&v.id()) {
            Some(adjoint) => adjoint.clone(),
            None => Var::constant(Array2::zeros(v.value().raw_dim())),
        })
        .collect()
}
