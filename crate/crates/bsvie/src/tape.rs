//! Reverse-mode automatic differentiation on a per-step tape.
//!
//! The tape is rebuilt for every loss evaluation (define-by-run): graph
//! shape depends on the number of time steps, so nothing is cached across
//! steps. Ops eagerly fold when no input tracks gradients, which keeps the
//! no-grad evaluation path (validation, closed-form bypass) allocation-light
//! on the backward side.
//!
//! A `Tape` is single-owner. Parallel gradient evaluation happens with one
//! tape per path sub-batch; the per-sub-batch gradients are reduced in a
//! fixed order by the caller.

use crate::error::{Error, Result};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// a[r x c] scaled per row by s[r x 1]
    MulColBroadcast(Var, Var),
    /// a[r x c] scaled per column by b[1 x c]
    MulRowBroadcast(Var, Var),
    /// a[r x c] shifted per column by b[1 x c]
    AddRowBroadcast(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Square(Var),
    Sin(Var),
    Cos(Var),
    Sum(Var),
    RowSum(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize, usize),
    TileRows(Var, usize),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Gradients keyed by tape node, as produced by [`Tape::backward`].
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        debug_assert!(value.all_finite(), "non-finite tensor from {:?}", op);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Value that does not track gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Constant)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Gradient-tracked input (a trainable parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn record(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Var {
        if self.any_grad(inputs) {
            self.push(value, true, op)
        } else {
            self.push(value, false, Op::Constant)
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = gemm_nn(self.value(a), self.value(b));
        self.record(value, &[a, b], Op::Matmul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(va.shape().to_vec(), data);
        self.record(value, &[a, b], Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "sub shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(va.shape().to_vec(), data);
        self.record(value, &[a, b], Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "mul shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), data);
        self.record(value, &[a, b], Op::Mul(a, b))
    }

    /// Multiply each row of `a` by the per-row scalar in `s` (shape r x 1).
    pub fn mul_col_broadcast(&mut self, a: Var, s: Var) -> Var {
        let (va, vs) = (self.value(a), self.value(s));
        let (r, c) = (va.rows(), va.cols());
        assert_eq!(vs.shape(), &[r, 1], "mul_col_broadcast scalar column");
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let si = vs.data()[i];
            data.extend(va.row(i).iter().map(|x| x * si));
        }
        let value = Tensor::matrix(r, c, data);
        self.record(value, &[a, s], Op::MulColBroadcast(a, s))
    }

    /// Multiply each row of `a` elementwise by the row vector `b` (1 x c).
    pub fn mul_row_broadcast(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (r, c) = (va.rows(), va.cols());
        assert_eq!(vb.shape(), &[1, c], "mul_row_broadcast row vector");
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(va.row(i).iter().zip(vb.data()).map(|(x, y)| x * y));
        }
        let value = Tensor::matrix(r, c, data);
        self.record(value, &[a, b], Op::MulRowBroadcast(a, b))
    }

    /// Add the row vector `b` (1 x c) to each row of `a` (bias add).
    pub fn add_row_broadcast(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let (r, c) = (va.rows(), va.cols());
        assert_eq!(vb.shape(), &[1, c], "add_row_broadcast row vector");
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(va.row(i).iter().zip(vb.data()).map(|(x, y)| x + y));
        }
        let value = Tensor::matrix(r, c, data);
        self.record(value, &[a, b], Op::AddRowBroadcast(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data);
        self.record(value, &[a], Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| x + c).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data);
        self.record(value, &[a], Op::AddScalar(a))
    }

    /// Elementwise max(0, x). The subgradient at 0 is taken to be 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|x| x.max(0.0)).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data);
        self.record(value, &[a], Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|x| x * x).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data);
        self.record(value, &[a], Op::Square(a))
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|x| x.sin()).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data);
        self.record(value, &[a], Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|x| x.cos()).collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data);
        self.record(value, &[a], Op::Cos(a))
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.record(Tensor::scalar(s), &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Per-row sums: [r x c] -> [r x 1].
    pub fn row_sum(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        let data = (0..r).map(|i| va.row(i).iter().sum()).collect();
        let value = Tensor::matrix(r, 1, data);
        let _ = c;
        self.record(value, &[a], Op::RowSum(a))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let r = self.value(parts[0]).rows();
        let total_c: usize = parts.iter().map(|v| self.value(*v).cols()).sum();
        let mut data = Vec::with_capacity(r * total_c);
        for i in 0..r {
            for v in parts {
                data.extend_from_slice(self.value(*v).row(i));
            }
        }
        let value = Tensor::matrix(r, total_c, data);
        self.record(value, parts, Op::ConcatCols(parts.to_vec()))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let c = self.value(parts[0]).cols();
        let total_r: usize = parts.iter().map(|v| self.value(*v).rows()).sum();
        let mut data = Vec::with_capacity(total_r * c);
        for v in parts {
            assert_eq!(self.value(*v).cols(), c, "concat_rows column mismatch");
            data.extend_from_slice(self.value(*v).data());
        }
        let value = Tensor::matrix(total_r, c, data);
        self.record(value, parts, Op::ConcatRows(parts.to_vec()))
    }

    /// Copy of rows r0..r1.
    pub fn slice_rows(&mut self, a: Var, r0: usize, r1: usize) -> Var {
        let va = self.value(a);
        let c = va.cols();
        assert!(r0 <= r1 && r1 <= va.rows(), "slice_rows out of range");
        let data = va.data()[r0 * c..r1 * c].to_vec();
        let value = Tensor::matrix(r1 - r0, c, data);
        self.record(value, &[a], Op::SliceRows(a, r0, r1))
    }

    /// Stack `reps` copies of `a` vertically.
    pub fn tile_rows(&mut self, a: Var, reps: usize) -> Var {
        let va = self.value(a);
        let (r, c) = (va.rows(), va.cols());
        let mut data = Vec::with_capacity(r * c * reps);
        for _ in 0..reps {
            data.extend_from_slice(va.data());
        }
        let value = Tensor::matrix(r * reps, c, data);
        self.record(value, &[a], Op::TileRows(a, reps))
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let value = self.value(a).reshaped(shape);
        self.record(value, &[a], Op::Reshape(a))
    }

    /// Reverse pass from a scalar loss. Returns per-node gradients;
    /// accumulation across fan-out is additive. Each node is visited once.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf | Op::Constant) {
                continue;
            }
            // Parents all have smaller ids, so this node's gradient is final.
            let Some(g) = grads[id].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
        }
        Ok(Gradients(grads))
    }

    fn propagate(&self, op: &Op, _out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Constant | Op::Leaf => {}
            Op::Matmul(a, b) => {
                if self.requires_grad(*a) {
                    self.acc(grads, *a, gemm_nt(g, self.value(*b)));
                }
                if self.requires_grad(*b) {
                    self.acc(grads, *b, gemm_tn(self.value(*a), g));
                }
            }
            Op::Add(a, b) => {
                self.acc_if(grads, *a, || g.clone());
                self.acc_if(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.acc_if(grads, *a, || g.clone());
                self.acc_if(grads, *b, || {
                    Tensor::new(g.shape().to_vec(), g.data().iter().map(|x| -x).collect())
                });
            }
            Op::Mul(a, b) => {
                self.acc_if(grads, *a, || elementwise(g, self.value(*b), |x, y| x * y));
                self.acc_if(grads, *b, || elementwise(g, self.value(*a), |x, y| x * y));
            }
            Op::MulColBroadcast(a, s) => {
                let vs = self.value(*s);
                self.acc_if(grads, *a, || {
                    let (r, c) = (g.rows(), g.cols());
                    let mut d = Vec::with_capacity(r * c);
                    for i in 0..r {
                        let si = vs.data()[i];
                        d.extend(g.row(i).iter().map(|x| x * si));
                    }
                    Tensor::matrix(r, c, d)
                });
                self.acc_if(grads, *s, || {
                    let va = self.value(*a);
                    let r = g.rows();
                    let d = (0..r)
                        .map(|i| g.row(i).iter().zip(va.row(i)).map(|(x, y)| x * y).sum())
                        .collect();
                    Tensor::matrix(r, 1, d)
                });
            }
            Op::MulRowBroadcast(a, b) => {
                let vb = self.value(*b);
                self.acc_if(grads, *a, || {
                    let (r, c) = (g.rows(), g.cols());
                    let mut d = Vec::with_capacity(r * c);
                    for i in 0..r {
                        d.extend(g.row(i).iter().zip(vb.data()).map(|(x, y)| x * y));
                    }
                    Tensor::matrix(r, c, d)
                });
                self.acc_if(grads, *b, || {
                    let va = self.value(*a);
                    let (r, c) = (g.rows(), g.cols());
                    let mut d = vec![0.0; c];
                    for i in 0..r {
                        for (acc, (x, y)) in d.iter_mut().zip(g.row(i).iter().zip(va.row(i))) {
                            *acc += x * y;
                        }
                    }
                    Tensor::matrix(1, c, d)
                });
            }
            Op::AddRowBroadcast(a, b) => {
                self.acc_if(grads, *a, || g.clone());
                self.acc_if(grads, *b, || {
                    let (r, c) = (g.rows(), g.cols());
                    let mut d = vec![0.0; c];
                    for i in 0..r {
                        for (acc, x) in d.iter_mut().zip(g.row(i)) {
                            *acc += x;
                        }
                    }
                    Tensor::matrix(1, c, d)
                });
            }
            Op::Scale(a, c) => {
                self.acc_if(grads, *a, || {
                    Tensor::new(g.shape().to_vec(), g.data().iter().map(|x| x * c).collect())
                });
            }
            Op::AddScalar(a) => {
                self.acc_if(grads, *a, || g.clone());
            }
            Op::Relu(a) => {
                self.acc_if(grads, *a, || {
                    elementwise(g, self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })
                });
            }
            Op::Square(a) => {
                self.acc_if(grads, *a, || {
                    elementwise(g, self.value(*a), |gv, x| 2.0 * x * gv)
                });
            }
            Op::Sin(a) => {
                self.acc_if(grads, *a, || {
                    elementwise(g, self.value(*a), |gv, x| x.cos() * gv)
                });
            }
            Op::Cos(a) => {
                self.acc_if(grads, *a, || {
                    elementwise(g, self.value(*a), |gv, x| -x.sin() * gv)
                });
            }
            Op::Sum(a) => {
                self.acc_if(grads, *a, || {
                    Tensor::full(self.value(*a).shape().to_vec(), g.item())
                });
            }
            Op::RowSum(a) => {
                self.acc_if(grads, *a, || {
                    let va = self.value(*a);
                    let (r, c) = (va.rows(), va.cols());
                    let mut d = Vec::with_capacity(r * c);
                    for i in 0..r {
                        let gi = g.data()[i];
                        d.extend(std::iter::repeat_n(gi, c));
                    }
                    Tensor::matrix(r, c, d)
                });
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                let r = g.rows();
                for v in parts {
                    let c = self.value(*v).cols();
                    self.acc_if(grads, *v, || {
                        let mut d = Vec::with_capacity(r * c);
                        for i in 0..r {
                            d.extend_from_slice(&g.row(i)[offset..offset + c]);
                        }
                        Tensor::matrix(r, c, d)
                    });
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let c = g.cols();
                for v in parts {
                    let r = self.value(*v).rows();
                    self.acc_if(grads, *v, || {
                        Tensor::matrix(r, c, g.data()[offset * c..(offset + r) * c].to_vec())
                    });
                    offset += r;
                }
            }
            Op::SliceRows(a, r0, _r1) => {
                self.acc_if(grads, *a, || {
                    let va = self.value(*a);
                    let (r, c) = (va.rows(), va.cols());
                    let mut d = vec![0.0; r * c];
                    d[r0 * c..r0 * c + g.len()].copy_from_slice(g.data());
                    Tensor::matrix(r, c, d)
                });
            }
            Op::TileRows(a, reps) => {
                self.acc_if(grads, *a, || {
                    let va = self.value(*a);
                    let (r, c) = (va.rows(), va.cols());
                    let mut d = vec![0.0; r * c];
                    for rep in 0..*reps {
                        let block = &g.data()[rep * r * c..(rep + 1) * r * c];
                        for (acc, x) in d.iter_mut().zip(block) {
                            *acc += x;
                        }
                    }
                    Tensor::matrix(r, c, d)
                });
            }
            Op::Reshape(a) => {
                self.acc_if(grads, *a, || {
                    g.reshaped(self.value(*a).shape().to_vec())
                });
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        match &mut grads[v.0] {
            Some(existing) => {
                debug_assert_eq!(existing.shape(), delta.shape());
                for (a, b) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn acc_if(&self, grads: &mut [Option<Tensor>], v: Var, make: impl FnOnce() -> Tensor) {
        if self.requires_grad(v) {
            self.acc(grads, v, make());
        }
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

/// Worst-case relative error between reverse-mode gradients and central
/// finite differences of a parameterized scalar function.
///
/// The relative error uses denominator max(|analytic|, |numeric|, 1e-12).
pub fn finite_diff_check<F>(f: F, params: &[Tensor], step: f64) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss).expect("scalar loss");

    let eval = |ps: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = ps.iter().map(|p| t.constant(p.clone())).collect();
        let out = f(&mut t, &vs);
        t.value(out).item()
    };

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let zero_shape = params[pi].shape().to_vec();
        let zeros = Tensor::zeros(zero_shape);
        let analytic = grads.get(*var).unwrap_or(&zeros);
        for ei in 0..params[pi].len() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + step;
            let up = eval(&work);
            work[pi].data_mut()[ei] = orig - step;
            let down = eval(&work);
            work[pi].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data()[ei];
            let denom = a.abs().max(numeric.abs()).max(1e-12);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::uniform_at;

    fn rand_tensor(shape: Vec<usize>, seed: u64, tag: u64, lo: f64, hi: f64) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|i| uniform_at(seed, 99, tag, i as u64, 0, lo, hi))
            .collect();
        Tensor::new(shape, data)
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]));
        let loss = tape.sum(w);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn backward_of_half_norm_squared_is_w() {
        let mut tape = Tape::new();
        let data = vec![1.0, -2.0, 3.0, 0.5];
        let w = tape.leaf(Tensor::matrix(1, 4, data.clone()));
        let sq = tape.square(w);
        let s = tape.sum(sq);
        let loss = tape.scale(s, 0.5);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), data.as_slice());
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]));
        assert!(tape.backward(w).is_err());
    }

    #[test]
    fn relu_clamps_and_has_zero_subgradient_at_kink() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 3, vec![-2.0, 0.0, 3.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 3.0]);
        let s = tape.sum(y);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn fanout_accumulates_additively() {
        // loss = sum(x*x) + sum(x) -> grad = 2x + 1
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 3, vec![1.0, -1.0, 2.0]));
        let sq = tape.mul(x, x);
        let s1 = tape.sum(sq);
        let s2 = tape.sum(x);
        let loss = tape.add(s1, s2);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, -1.0, 5.0]);
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let x0 = rand_tensor(vec![2, 3], 5, 0, -2.0, 2.0);
        let run = |a: f64, b: f64| -> Vec<f64> {
            let mut tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let sq = tape.square(x);
            let l1 = tape.sum(sq);
            let sn = tape.sin(x);
            let l2 = tape.sum(sn);
            let l1s = tape.scale(l1, a);
            let l2s = tape.scale(l2, b);
            let loss = tape.add(l1s, l2s);
            tape.backward(loss).unwrap().get(x).unwrap().data().to_vec()
        };
        let g1 = run(1.0, 0.0);
        let g2 = run(0.0, 1.0);
        let gc = run(2.5, -0.5);
        for i in 0..g1.len() {
            assert!((gc[i] - (2.5 * g1[i] - 0.5 * g2[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn rerunning_the_same_tape_is_bit_identical() {
        let x0 = rand_tensor(vec![4, 4], 11, 1, -2.0, 2.0);
        let w0 = rand_tensor(vec![4, 2], 11, 2, -1.0, 1.0);
        let build = || {
            let mut tape = Tape::new();
            let x = tape.constant(x0.clone());
            let w = tape.leaf(w0.clone());
            let h = tape.matmul(x, w);
            let r = tape.relu(h);
            let sq = tape.square(r);
            let loss = tape.sum(sq);
            let g = tape.backward(loss).unwrap();
            g.get(w).unwrap().data().to_vec()
        };
        let a = build();
        let b = build();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn finite_diff_on_linear_function_is_exact() {
        let c = rand_tensor(vec![1, 5], 3, 0, -1.0, 1.0);
        let err = finite_diff_check(
            |tape, vars| {
                let cv = tape.constant(c.clone());
                let prod = tape.mul(vars[0], cv);
                tape.sum(prod)
            },
            &[rand_tensor(vec![1, 5], 3, 1, -2.0, 2.0)],
            1e-5,
        );
        assert!(err <= 1e-10, "linear FD error {err}");
    }

    #[test]
    fn finite_diff_on_quadratic_is_near_exact() {
        let err = finite_diff_check(
            |tape, vars| {
                let sq = tape.square(vars[0]);
                tape.sum(sq)
            },
            &[rand_tensor(vec![2, 3], 4, 0, -2.0, 2.0)],
            1e-5,
        );
        assert!(err <= 1e-9, "quadratic FD error {err}");
    }

    #[test]
    fn finite_diff_on_relu_mlp() {
        // 3-layer MLP scalar output, inputs kept away from ReLU kinks.
        let x = rand_tensor(vec![4, 3], 21, 0, -2.0, 2.0);
        let w1 = rand_tensor(vec![3, 8], 21, 1, -0.9, 0.9);
        let b1 = rand_tensor(vec![1, 8], 21, 2, 0.1, 0.4);
        let w2 = rand_tensor(vec![8, 8], 21, 3, -0.9, 0.9);
        let b2 = rand_tensor(vec![1, 8], 21, 4, 0.1, 0.4);
        let w3 = rand_tensor(vec![8, 1], 21, 5, -0.9, 0.9);
        let err = finite_diff_check(
            |tape, vars| {
                let xv = tape.constant(x.clone());
                let h1 = tape.matmul(xv, vars[0]);
                let h1b = tape.add_row_broadcast(h1, vars[1]);
                let a1 = tape.relu(h1b);
                let h2 = tape.matmul(a1, vars[2]);
                let h2b = tape.add_row_broadcast(h2, vars[3]);
                let a2 = tape.relu(h2b);
                let out = tape.matmul(a2, vars[4]);
                let sq = tape.square(out);
                tape.mean(sq)
            },
            &[w1, b1, w2, b2, w3],
            1e-5,
        );
        assert!(err <= 1e-6, "MLP FD error {err}");
    }

    #[test]
    fn finite_diff_covers_every_primitive() {
        // One composite graph exercising each differentiable op.
        let a0 = rand_tensor(vec![3, 4], 33, 0, 0.2, 1.8);
        let b0 = rand_tensor(vec![3, 4], 33, 1, 0.2, 1.8);
        let m0 = rand_tensor(vec![4, 2], 33, 2, -1.0, 1.0);
        let r0 = rand_tensor(vec![1, 4], 33, 3, 0.3, 0.9);
        let s0 = rand_tensor(vec![3, 1], 33, 4, 0.5, 1.5);
        let err = finite_diff_check(
            |tape, v| {
                let (a, b, m, r, s) = (v[0], v[1], v[2], v[3], v[4]);
                let sum_ab = tape.add(a, b);
                let diff = tape.sub(sum_ab, b);
                let prod = tape.mul(diff, b);
                let rowed = tape.mul_row_broadcast(prod, r);
                let biased = tape.add_row_broadcast(rowed, r);
                let coled = tape.mul_col_broadcast(biased, s);
                let scaled = tape.scale(coled, 0.7);
                let shifted = tape.add_scalar(scaled, 0.3);
                let mm = tape.matmul(shifted, m);
                let sn = tape.sin(mm);
                let cn = tape.cos(mm);
                let trig = tape.add(sn, cn);
                let sq = tape.square(trig);
                let cat = tape.concat_cols(&[sq, trig]);
                let catr = tape.concat_rows(&[cat, cat]);
                let sl = tape.slice_rows(catr, 1, 4);
                let tl = tape.tile_rows(sl, 2);
                let rs = tape.row_sum(tl);
                let rsh = tape.reshape(rs, vec![1, 6]);
                let rl = tape.relu(rsh);
                tape.mean(rl)
            },
            &[a0, b0, m0, r0, s0],
            1e-6,
        );
        assert!(err <= 1e-6, "composite FD error {err}");
    }

    #[test]
    fn constant_folding_keeps_constants_off_grad_path() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let c = tape.matmul(a, b);
        assert!(!tape.requires_grad(c));
        let w = tape.leaf(Tensor::matrix(2, 2, vec![0.5; 4]));
        let d = tape.mul(c, w);
        assert!(tape.requires_grad(d));
    }
}
