//! Tensor-level reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive in evaluation order, so a single
//! reverse sweep over the node list visits each node exactly once after all
//! of its consumers. Parameters are borrowed from a [`ParamStore`] rather
//! than copied; their adjoints are accumulated into [`ParamGrads`].
//!
//! A tape is built per pixel per minibatch and dropped after `backward`.

use std::collections::HashMap;

use super::params::{ParamGrads, ParamId, ParamStore};
use super::simplex::{project_with_support, simplex_jacobian_vjp};
use super::tensor::{matmul_into, Tensor};

/// Inputs to `log` are clamped to this floor; below it the gradient is zero.
pub const LOG_FLOOR: f64 = 1e-12;

/// Node handle on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Param(ParamId),
    Input,
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddConst(Var),
    ScaleConst(Var, f64),
    MulScalar(Var, Var),
    Broadcast(Var),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Transpose(Var, usize, usize),
    Reshape(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Square(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    L1Norm(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    SimplexProject(Var, Vec<bool>),
    FloorRenorm(Var, f64),
    Center(Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
}

/// Append-only computation graph.
pub struct Tape<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, Var>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::with_capacity(256),
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || shape.iter().product::<usize>() == value.len());
        self.nodes.push(Node { op, shape, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].op {
            Op::Param(id) => self.params.expect("param node without store").get(*id).data(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn size(&self, v: Var) -> usize {
        self.shape(v).iter().product()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        assert_eq!(self.size(v), 1, "scalar_value on non-scalar node");
        self.value(v)[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec())
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes.get(&id) {
            return *v;
        }
        let shape = self
            .params
            .expect("tape has no parameter store")
            .get(id)
            .shape()
            .to_vec();
        let v = self.push(Op::Param(id), shape, Vec::new());
        self.param_nodes.insert(id, v);
        v
    }

    /// Leaf holding a constant (or a differentiable input queried through
    /// [`Gradients::wrt`]).
    pub fn input(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(Op::Input, shape, t.into_data())
    }

    /// Leaf that never receives an adjoint; products with it skip the
    /// corresponding half of the reverse sweep.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(Op::Const, shape, t.into_data())
    }

    fn is_const(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Const)
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> Var {
        self.input(Tensor::vector(data))
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.input(Tensor::scalar(v))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) {
        assert_eq!(
            self.shape(a),
            self.shape(b),
            "shape mismatch in {op}: {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Var {
        self.same_shape(name, a, b);
        let value: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(op, shape, value)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value: Vec<f64> = self.value(a).iter().map(|x| f(*x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(op, shape, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b), "div", |x, y| x / y)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddConst(a), |x| x + c)
    }

    pub fn scale_const(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::ScaleConst(a, c), |x| x * c)
    }

    /// Tensor `a` times a single-element node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.size(s), 1, "mul_scalar expects a scalar multiplier");
        let sv = self.value(s)[0];
        self.unary(a, Op::MulScalar(a, s), |x| x * sv)
    }

    /// Repeat a single-element node into a vector of length `n`.
    pub fn broadcast(&mut self, s: Var, n: usize) -> Var {
        assert_eq!(self.size(s), 1, "broadcast expects a scalar");
        let v = self.value(s)[0];
        self.push(Op::Broadcast(s), vec![n], vec![v; n])
    }

    /// `a` is `[m, k]`; `b` is `[k, n]` (matrix result) or `[k]` (vector result).
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        assert_eq!(sa.len(), 2, "matmul lhs must be a matrix, got {sa:?}");
        let (m, k) = (sa[0], sa[1]);
        let (k2, n, out_shape) = match sb.len() {
            1 => (sb[0], 1, vec![m]),
            2 => (sb[0], sb[1], vec![m, sb[1]]),
            _ => panic!("matmul rhs must be vector or matrix, got {sb:?}"),
        };
        assert_eq!(k, k2, "shape mismatch in matmul: {sa:?} x {sb:?}");
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a), self.value(b), &mut out, m, k, n);
        self.push(Op::MatMul { a, b, m, k, n }, out_shape, out)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let s = self.shape(a).to_vec();
        assert_eq!(s.len(), 2, "transpose expects a matrix");
        let (r, c) = (s[0], s[1]);
        let src = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push(Op::Transpose(a, r, c), vec![c, r], out)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        assert_eq!(shape.iter().product::<usize>(), self.size(a), "reshape size mismatch");
        let v = self.value(a).to_vec();
        self.push(Op::Reshape(a), shape.to_vec(), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    /// Natural log with inputs clamped below at [`LOG_FLOOR`].
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |x| x.max(LOG_FLOOR).ln())
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = softmax(self.value(a));
        let shape = self.shape(a).to_vec();
        self.push(Op::Softmax(a), shape, v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(Op::Sum(a), vec![], vec![s])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.size(a) as f64;
        let s = self.value(a).iter().sum::<f64>() / n;
        self.push(Op::Mean(a), vec![], vec![s])
    }

    pub fn l1norm(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().map(|x| x.abs()).sum();
        self.push(Op::L1Norm(a), vec![], vec![s])
    }

    /// Concatenate flattened operands into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut v = Vec::new();
        for p in parts {
            v.extend_from_slice(self.value(*p));
        }
        let n = v.len();
        self.push(Op::Concat(parts.to_vec()), vec![n], v)
    }

    /// Contiguous slice `[start, start+len)` of the flattened operand.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= self.size(a), "slice out of range");
        let v = self.value(a)[start..start + len].to_vec();
        self.push(Op::Slice(a, start), vec![len], v)
    }

    /// Euclidean projection onto the unit simplex (piecewise-linear adjoint).
    pub fn simplex_project(&mut self, a: Var) -> Var {
        let (p, support) = project_with_support(self.value(a));
        let shape = self.shape(a).to_vec();
        self.push(Op::SimplexProject(a, support), shape, p)
    }

    /// `max(v_i, floor) / Σ_j max(v_j, floor)`.
    pub fn floor_renorm(&mut self, a: Var, floor: f64) -> Var {
        let clamped: Vec<f64> = self.value(a).iter().map(|x| x.max(floor)).collect();
        let s: f64 = clamped.iter().sum();
        let v = clamped.into_iter().map(|x| x / s).collect();
        let shape = self.shape(a).to_vec();
        self.push(Op::FloorRenorm(a, floor), shape, v)
    }

    /// Subtract the mean from every entry.
    pub fn center(&mut self, a: Var) -> Var {
        let vals = self.value(a);
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        self.unary(a, Op::Center(a), |x| x - m)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.size(root),
            1,
            "backward requires a scalar root, got shape {:?}",
            self.shape(root)
        );
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); root.0 + 1];
        adj[root.0] = vec![1.0];

        for i in (0..=root.0).rev() {
            if adj[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut adj[i]);
            self.propagate(i, &g, &mut adj);
            adj[i] = g;
        }
        Gradients { adj }
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Vec<f64>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Param(_) | Op::Input | Op::Const => {}
            Op::Add(a, b) => {
                accumulate(adj, *a, g.iter().copied(), g.len());
                accumulate(adj, *b, g.iter().copied(), g.len());
            }
            Op::Sub(a, b) => {
                accumulate(adj, *a, g.iter().copied(), g.len());
                accumulate(adj, *b, g.iter().map(|x| -x), g.len());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(adj, *a, g.iter().zip(vb).map(|(g, y)| g * y), g.len());
                accumulate(adj, *b, g.iter().zip(va).map(|(g, x)| g * x), g.len());
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                accumulate(adj, *a, g.iter().zip(vb).map(|(g, y)| g / y), g.len());
                accumulate(
                    adj,
                    *b,
                    g.iter().zip(out).zip(vb).map(|((g, q), y)| -g * q / y),
                    g.len(),
                );
            }
            Op::AddConst(a) => accumulate(adj, *a, g.iter().copied(), g.len()),
            Op::ScaleConst(a, c) => accumulate(adj, *a, g.iter().map(|x| x * c), g.len()),
            Op::MulScalar(a, s) => {
                let sv = self.value(*s)[0];
                let va = self.value(*a);
                accumulate(adj, *a, g.iter().map(|x| x * sv), g.len());
                let ds: f64 = g.iter().zip(va).map(|(g, x)| g * x).sum();
                accumulate(adj, *s, std::iter::once(ds), 1);
            }
            Op::Broadcast(s) => {
                let ds: f64 = g.iter().sum();
                accumulate(adj, *s, std::iter::once(ds), 1);
            }
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let (va, vb) = (self.value(*a), self.value(*b));
                // dA = G · Bᵀ
                if !self.is_const(*a) {
                let mut da = vec![0.0; m * k];
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    let darow = &mut da[r * k..(r + 1) * k];
                    for (p, d) in darow.iter_mut().enumerate() {
                        let brow = &vb[p * n..(p + 1) * n];
                        *d = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                accumulate(adj, *a, da.into_iter(), m * k);
                }
                // dB = Aᵀ · G
                if !self.is_const(*b) {
                let mut db = vec![0.0; k * n];
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    let arow = &va[r * k..(r + 1) * k];
                    for (p, ap) in arow.iter().enumerate() {
                        if *ap == 0.0 {
                            continue;
                        }
                        let dbrow = &mut db[p * n..(p + 1) * n];
                        for (d, gv) in dbrow.iter_mut().zip(grow) {
                            *d += ap * gv;
                        }
                    }
                }
                accumulate(adj, *b, db.into_iter(), k * n);
                }
            }
            Op::Transpose(a, r, c) => {
                let (r, c) = (*r, *c);
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = g[j * r + i];
                    }
                }
                accumulate(adj, *a, da.into_iter(), r * c);
            }
            Op::Reshape(a) => accumulate(adj, *a, g.iter().copied(), g.len()),
            Op::Exp(a) => accumulate(adj, *a, g.iter().zip(out).map(|(g, y)| g * y), g.len()),
            Op::Log(a) => {
                let va = self.value(*a);
                accumulate(
                    adj,
                    *a,
                    g.iter()
                        .zip(va)
                        .map(|(g, x)| if *x < LOG_FLOOR { 0.0 } else { g / x }),
                    g.len(),
                );
            }
            Op::Tanh(a) => accumulate(
                adj,
                *a,
                g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)),
                g.len(),
            ),
            Op::Sigmoid(a) => accumulate(
                adj,
                *a,
                g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)),
                g.len(),
            ),
            Op::Relu(a) => {
                let va = self.value(*a);
                accumulate(
                    adj,
                    *a,
                    g.iter().zip(va).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }),
                    g.len(),
                );
            }
            Op::Square(a) => {
                let va = self.value(*a);
                accumulate(adj, *a, g.iter().zip(va).map(|(g, x)| 2.0 * g * x), g.len());
            }
            Op::Softmax(a) => {
                let gy: f64 = g.iter().zip(out).map(|(g, y)| g * y).sum();
                accumulate(
                    adj,
                    *a,
                    g.iter().zip(out).map(|(g, y)| y * (g - gy)),
                    g.len(),
                );
            }
            Op::Sum(a) => {
                let n = self.size(*a);
                accumulate(adj, *a, std::iter::repeat_n(g[0], n), n);
            }
            Op::Mean(a) => {
                let n = self.size(*a);
                accumulate(adj, *a, std::iter::repeat_n(g[0] / n as f64, n), n);
            }
            Op::L1Norm(a) => {
                let va = self.value(*a);
                accumulate(
                    adj,
                    *a,
                    va.iter().map(|x| g[0] * if *x > 0.0 { 1.0 } else if *x < 0.0 { -1.0 } else { 0.0 }),
                    va.len(),
                );
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.size(*p);
                    accumulate(adj, *p, g[off..off + n].iter().copied(), n);
                    off += n;
                }
            }
            Op::Slice(a, start) => {
                let n = self.size(*a);
                let start = *start;
                let len = g.len();
                accumulate(
                    adj,
                    *a,
                    (0..n).map(|j| if j >= start && j < start + len { g[j - start] } else { 0.0 }),
                    n,
                );
            }
            Op::SimplexProject(a, support) => {
                let d = simplex_jacobian_vjp(support, g);
                accumulate(adj, *a, d.into_iter(), g.len());
            }
            Op::FloorRenorm(a, floor) => {
                let va = self.value(*a);
                let s: f64 = va.iter().map(|x| x.max(*floor)).sum();
                let gy: f64 = g.iter().zip(out).map(|(g, y)| g * y).sum();
                accumulate(
                    adj,
                    *a,
                    g.iter()
                        .zip(va)
                        .map(|(g, x)| if *x > *floor { (g - gy) / s } else { 0.0 }),
                    g.len(),
                );
            }
            Op::Center(a) => {
                let gm = g.iter().sum::<f64>() / g.len() as f64;
                accumulate(adj, *a, g.iter().map(|x| x - gm), g.len());
            }
        }
    }

    /// Adjoints of all parameter leaves, summed into `into`.
    pub fn accumulate_param_grads(&self, grads: &Gradients, into: &mut ParamGrads) {
        for (id, v) in &self.param_nodes {
            if let Some(g) = grads.wrt(*v) {
                for (dst, src) in into.get_mut(*id).data_mut().iter_mut().zip(g) {
                    *dst += src;
                }
            }
        }
    }
}

fn accumulate(adj: &mut [Vec<f64>], v: Var, g: impl Iterator<Item = f64>, n: usize) {
    let slot = &mut adj[v.0];
    if slot.is_empty() {
        slot.extend(g);
        debug_assert_eq!(slot.len(), n);
    } else {
        for (s, x) in slot.iter_mut().zip(g) {
            *s += x;
        }
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    adj: Vec<Vec<f64>>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` when the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.adj.get(v.0).filter(|a| !a.is_empty()).map(|a| a.as_slice())
    }

    /// Adjoint of `v`, zeros when the root does not depend on it.
    pub fn wrt_or_zero(&self, v: Var, len: usize) -> Vec<f64> {
        self.wrt(v).map(|a| a.to_vec()).unwrap_or_else(|| vec![0.0; len])
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::scalar(3.0));
        let y = tape.mul(x, x);
        let g = tape.backward(y);
        assert_eq!(g.wrt(x).unwrap(), &[6.0]);
    }

    #[test]
    fn softmax_uniform() {
        let s = softmax(&[0.0, 0.0, 0.0]);
        for v in s {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sigmoid_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn log_clamps_small_inputs() {
        let mut tape = Tape::new();
        let x = tape.constant_vec(vec![0.0, -1.0, 1e-13, 2.0]);
        let y = tape.log(x);
        let v = tape.value(y).to_vec();
        assert_eq!(v[0], LOG_FLOOR.ln());
        assert_eq!(v[1], LOG_FLOOR.ln());
        assert_eq!(v[2], LOG_FLOOR.ln());
        assert_eq!(v[3], 2f64.ln());
        let s = tape.sum(y);
        let g = tape.backward(s);
        assert_eq!(g.wrt(x).unwrap(), &[0.0, 0.0, 0.0, 0.5]);
    }

    #[test]
    #[should_panic(expected = "scalar root")]
    fn non_scalar_root_panics() {
        let mut tape = Tape::new();
        let x = tape.constant_vec(vec![1.0, 2.0]);
        let y = tape.exp(x);
        let _ = tape.backward(y);
    }

    #[test]
    #[should_panic(expected = "shape mismatch")]
    fn add_shape_mismatch_panics() {
        let mut tape = Tape::new();
        let a = tape.constant_vec(vec![1.0, 2.0]);
        let b = tape.constant_vec(vec![1.0, 2.0, 3.0]);
        let _ = tape.add(a, b);
    }

    #[test]
    fn param_grads_accumulate() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let mut tape = Tape::with_params(&store);
        let wv = tape.param(w);
        let x = tape.constant_vec(vec![1.0, -1.0]);
        let y = tape.matmul(wv, x);
        let s = tape.sum(y);
        let g = tape.backward(s);
        let mut pg = store.zeros_like();
        tape.accumulate_param_grads(&g, &mut pg);
        assert_eq!(pg.get(w).data(), &[1.0, -1.0, 1.0, -1.0]);
    }
}
