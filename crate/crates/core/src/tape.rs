//! Reverse-mode automatic differentiation over dense arrays.
//!
//! The primitive set is closed: add, elementwise mul, scale and offset by a
//! constant, matmul (with transposes), tanh, softplus, exp, log and a full
//! sum. Every adjoint rule is itself written with these primitives, which is
//! what lets [`Tape::grad_graph`] record the backward pass as new nodes and
//! differentiate it again (double backprop). Broadcasting is expressed as a
//! product with a constant ones vector.
//!
//! Nodes are appended in evaluation order, so the index order is a
//! topological order and a backward sweep is a reverse scan.

use alloc::vec;
use alloc::vec::Vec;

use crate::dense::{gemm, DenseArray};
use crate::error::{contract, Result};
use crate::special::{exp, log, sigmoid, softplus, tanh};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul { a: Var, ta: bool, b: Var, tb: bool },
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 2] {
        match *self {
            Op::Leaf => [None, None],
            Op::Add(a, b) | Op::Mul(a, b) | Op::MatMul { a, b, .. } => [Some(a), Some(b)],
            Op::Scale(a, _) | Op::Offset(a) | Op::Tanh(a) | Op::Softplus(a) | Op::Exp(a) | Op::Log(a) | Op::Sum(a) => {
                [Some(a), None]
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: DenseArray,
}

#[derive(Debug, Clone, Default)]
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

    pub fn value(&self, v: Var) -> &DenseArray {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: DenseArray) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// An input node. Constants are leaves that are simply never asked for.
    pub fn leaf(&mut self, value: DenseArray) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(DenseArray::scalar(value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(Op::Scale(a, c), v)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::Offset(a), v)
    }

    /// `op(a) · op(b)` where `ta`/`tb` select a transpose.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let v = DenseArray::matmul(self.value(a), ta, self.value(b), tb);
        self.push(Op::MatMul { a, ta, b, tb }, v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(Op::Softplus(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(exp);
        self.push(Op::Exp(a), v)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(log);
        self.push(Op::Log(a), v)
    }

    /// Sum of all entries, as a `1 × 1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = DenseArray::scalar(self.value(a).sum());
        self.push(Op::Sum(a), v)
    }

    // Composites built from the primitives above.

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let nb = self.neg(b);
        self.add(a, nb)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    /// `σ(a) = exp(a − softplus(a))`
    pub fn sigmoid(&mut self, a: Var) -> Var {
        let sp = self.softplus(a);
        self.sigmoid_from(a, sp)
    }

    fn sigmoid_from(&mut self, a: Var, softplus_a: Var) -> Var {
        let d = self.sub(a, softplus_a);
        self.exp(d)
    }

    pub fn swish(&mut self, a: Var) -> Var {
        let s = self.sigmoid(a);
        self.mul(a, s)
    }

    /// `rows × cols` array of ones as a leaf.
    pub fn ones(&mut self, rows: usize, cols: usize) -> Var {
        self.leaf(DenseArray::filled(&[rows, cols], 1.0))
    }

    /// Adds a `1 × n` row to every row of an `m × n` node.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let m = self.value(a).rows();
        let ones = self.ones(m, 1);
        let b = self.matmul(ones, row);
        self.add(a, b)
    }

    /// Copies a `1 × 1` node into an `m × n` node.
    pub fn broadcast_scalar(&mut self, s: Var, m: usize, n: usize) -> Var {
        if m == 1 && n == 1 {
            return s;
        }
        let left = self.ones(m, 1);
        let right = self.ones(1, n);
        let col = self.matmul(left, s);
        self.matmul(col, right)
    }

    /// Column `j` of an `m × n` node as an `m × 1` node.
    pub fn column(&mut self, a: Var, j: usize) -> Var {
        let n = self.value(a).cols();
        let mut e = DenseArray::zeros(&[n, 1]);
        e.data_mut()[j] = 1.0;
        let e = self.leaf(e);
        self.matmul(a, e)
    }

    /// Marks every node that depends on one of `wrt`.
    fn dependents(&self, upto: usize, wrt: &[Var]) -> Vec<bool> {
        let mut needs = vec![false; upto + 1];
        for w in wrt {
            if w.0 <= upto {
                needs[w.0] = true;
            }
        }
        for i in 0..=upto {
            if needs[i] {
                continue;
            }
            needs[i] = self.nodes[i].op.inputs().iter().flatten().any(|v| needs[v.0]);
        }
        needs
    }

    fn check_output(&self, output: Var) -> Result<()> {
        contract!(output.0 < self.nodes.len(), "output node {} not on this tape", output.0);
        contract!(
            self.value(output).len() == 1,
            "gradient of a non-scalar output with shape {:?}",
            self.value(output).shape()
        );
        Ok(())
    }

    /// `∂output/∂w` for every `w` in `wrt`, as plain arrays.
    ///
    /// The tape is not modified. Nodes that `output` does not depend on get
    /// a gradient of zeros.
    pub fn grad(&self, output: Var, wrt: &[Var]) -> Result<Vec<DenseArray>> {
        self.check_output(output)?;
        let needs = self.dependents(output.0, wrt);
        let mut keep = vec![false; output.0 + 1];
        for w in wrt.iter().filter(|w| w.0 <= output.0) {
            keep[w.0] = true;
        }
        let mut adj: Vec<Option<DenseArray>> = vec![None; output.0 + 1];
        adj[output.0] = Some(DenseArray::filled(self.value(output).shape(), 1.0));

        for i in (0..=output.0).rev() {
            if !needs[i] {
                continue;
            }
            let g = if keep[i] { adj[i].clone() } else { adj[i].take() };
            let Some(g) = g else { continue };
            let node = &self.nodes[i];
            let push = |v: Var, contrib: DenseArray, adj: &mut Vec<Option<DenseArray>>| match &mut adj[v.0] {
                Some(acc) => acc.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            };
            match node.op {
                Op::Leaf => continue,
                Op::Add(a, b) => {
                    if needs[a.0] {
                        push(a, g.clone(), &mut adj);
                    }
                    if needs[b.0] {
                        push(b, g, &mut adj);
                    }
                }
                Op::Mul(a, b) => {
                    if needs[a.0] {
                        push(a, g.zip_map(self.value(b), |x, y| x * y), &mut adj);
                    }
                    if needs[b.0] {
                        push(b, g.zip_map(self.value(a), |x, y| x * y), &mut adj);
                    }
                }
                Op::Scale(a, c) => push(a, g.map(|x| c * x), &mut adj),
                Op::Offset(a) => push(a, g, &mut adj),
                Op::MatMul { a, ta, b, tb } => {
                    let (av, bv) = (self.value(a), self.value(b));
                    if needs[a.0] {
                        let mut da = DenseArray::zeros(av.shape());
                        // C = op(A)op(B): dA = G op(B)ᵀ, transposed back when ta.
                        if ta {
                            gemm(bv, tb, &g, true, 0.0, &mut da);
                        } else {
                            gemm(&g, false, bv, !tb, 0.0, &mut da);
                        }
                        push(a, da, &mut adj);
                    }
                    if needs[b.0] {
                        let mut db = DenseArray::zeros(bv.shape());
                        if tb {
                            gemm(&g, true, av, ta, 0.0, &mut db);
                        } else {
                            gemm(av, !ta, &g, false, 0.0, &mut db);
                        }
                        push(b, db, &mut adj);
                    }
                }
                Op::Tanh(a) => push(a, g.zip_map(&node.value, |x, t| x * (1.0 - t * t)), &mut adj),
                Op::Softplus(a) => push(a, g.zip_map(self.value(a), |x, z| x * sigmoid(z)), &mut adj),
                Op::Exp(a) => push(a, g.zip_map(&node.value, |x, e| x * e), &mut adj),
                Op::Log(a) => push(a, g.zip_map(self.value(a), |x, z| x / z), &mut adj),
                Op::Sum(a) => {
                    let s = g.item();
                    push(a, DenseArray::filled(self.value(a).shape(), s), &mut adj);
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|w| {
                adj.get_mut(w.0)
                    .and_then(|slot| slot.take())
                    .unwrap_or_else(|| DenseArray::zeros(self.value(*w).shape()))
            })
            .collect())
    }

    /// Like [`Tape::grad`] but records the backward pass on the tape and
    /// returns nodes, so the gradients can be differentiated again.
    pub fn grad_graph(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        self.check_output(output)?;
        let needs = self.dependents(output.0, wrt);
        let mut adj: Vec<Option<Var>> = vec![None; output.0 + 1];
        let seed = self.leaf(DenseArray::filled(self.value(output).shape(), 1.0));
        adj[output.0] = Some(seed);

        for i in (0..=output.0).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = adj[i] else { continue };
            let op = self.nodes[i].op.clone();
            let me = Var(i);
            let mut contribs: Vec<(Var, Var)> = Vec::with_capacity(2);
            match op {
                Op::Leaf => continue,
                Op::Add(a, b) => {
                    if needs[a.0] {
                        contribs.push((a, g));
                    }
                    if needs[b.0] {
                        contribs.push((b, g));
                    }
                }
                Op::Mul(a, b) => {
                    if needs[a.0] {
                        let c = self.mul(g, b);
                        contribs.push((a, c));
                    }
                    if needs[b.0] {
                        let c = self.mul(g, a);
                        contribs.push((b, c));
                    }
                }
                Op::Scale(a, c) => {
                    let s = self.scale(g, c);
                    contribs.push((a, s));
                }
                Op::Offset(a) => contribs.push((a, g)),
                Op::MatMul { a, ta, b, tb } => {
                    if needs[a.0] {
                        let da = if ta { self.matmul_t(b, tb, g, true) } else { self.matmul_t(g, false, b, !tb) };
                        contribs.push((a, da));
                    }
                    if needs[b.0] {
                        let db = if tb { self.matmul_t(g, true, a, ta) } else { self.matmul_t(a, !ta, g, false) };
                        contribs.push((b, db));
                    }
                }
                Op::Tanh(a) => {
                    let t2 = self.mul(me, me);
                    let neg = self.scale(t2, -1.0);
                    let d = self.offset(neg, 1.0);
                    let c = self.mul(g, d);
                    contribs.push((a, c));
                }
                Op::Softplus(a) => {
                    let s = self.sigmoid_from(a, me);
                    let c = self.mul(g, s);
                    contribs.push((a, c));
                }
                Op::Exp(a) => {
                    let c = self.mul(g, me);
                    contribs.push((a, c));
                }
                Op::Log(a) => {
                    // 1/a = exp(−log a)
                    let nl = self.scale(me, -1.0);
                    let inv = self.exp(nl);
                    let c = self.mul(g, inv);
                    contribs.push((a, c));
                }
                Op::Sum(a) => {
                    let (m, n) = (self.value(a).rows(), self.value(a).cols());
                    let c = self.broadcast_scalar(g, m, n);
                    contribs.push((a, c));
                }
            }
            for (v, c) in contribs {
                adj[v.0] = Some(match adj[v.0] {
                    Some(prev) => self.add(prev, c),
                    None => c,
                });
            }
        }

        let mut out = Vec::with_capacity(wrt.len());
        for w in wrt {
            let g = match adj.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let shape = self.value(*w).shape().to_vec();
                    self.leaf(DenseArray::zeros(&shape))
                }
            };
            out.push(g);
        }
        Ok(out)
    }
}

/// `∇ₓ output` for a registered input node `x`.
pub fn input_grad(tape: &Tape, output: Var, x: Var) -> Result<DenseArray> {
    Ok(tape.grad(output, &[x])?.remove(0))
}
