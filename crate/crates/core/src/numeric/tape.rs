//! Matrix-valued reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the ids of
//! its operands. [`Tape::backward`] walks the nodes from the loss back to
//! the first one, which is a valid reverse topological order because an
//! operand is always recorded before the node that consumes it.

use crate::error::{Error, Result};
use crate::numeric::matrix::{gemm_acc, gemm_nt_acc, gemm_tn_acc, Matrix};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Const,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Row vector broadcast over every row of the left operand.
    AddRow(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    DivScalar(Var, Var),
    MulConst(Var, Matrix),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sqrt(Var),
    Sum(Var),
    FrobeniusNorm(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    /// Row `r` comes from the first operand when `mask[r]`, else the second.
    SelectRows(Var, Var, Vec<bool>),
    /// Fused LSTM gate nonlinearity over `[i | f | g | o]` pre-activations.
    LstmGates(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaves: Vec<Var>,
    consumed: bool,
}

/// Gradients of a scalar loss with respect to the tape's leaves.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zero when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix {
        let (r, c) = self.shapes[v.0];
        self.grads[v.0].take().unwrap_or_else(|| Matrix::zeros(r, c))
    }
}

macro_rules! unary {
    ($name:ident, $variant:ident, $f:expr) => {
        pub fn $name(&mut self, a: Var) -> Var {
            let value = self.value(a).map($f);
            self.push(value, Op::$variant(a))
        }
    };
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers a differentiable leaf.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        let v = self.push(value, Op::Leaf);
        self.leaves.push(v);
        v
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Const)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Matrix::filled(1, 1, value))
    }

    pub fn leaves(&self) -> &[Var] {
        &self.leaves
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v)[(0, 0)]
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `a · bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(Error::Shape(format!(
                "matmul_nt {:?} by {:?}ᵀ",
                va.shape(),
                vb.shape()
            )));
        }
        let mut out = Matrix::zeros(va.rows(), vb.rows());
        gemm_nt_acc(va, vb, &mut out);
        Ok(self.push(out, Op::MatMulNt(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "mul")?;
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(Error::Shape(format!(
                "add_row {:?} + {:?}",
                va.shape(),
                vr.shape()
            )));
        }
        let mut value = va.clone();
        for i in 0..value.rows() {
            for (x, b) in value.row_mut(i).iter_mut().zip(vr.as_slice()) {
                *x += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s))
    }

    fn check_scalar(&self, s: Var) -> Result<f64> {
        let v = self.value(s);
        if v.shape() != (1, 1) {
            return Err(Error::Shape(format!("expected 1x1 scalar, got {:?}", v.shape())));
        }
        Ok(v[(0, 0)])
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.check_scalar(s)?;
        let value = self.value(a).scale(sv);
        Ok(self.push(value, Op::MulScalar(a, s)))
    }

    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.check_scalar(s)?;
        let value = self.value(a).scale(1.0 / sv);
        Ok(self.push(value, Op::DivScalar(a, s)))
    }

    /// Elementwise product with a constant matrix (e.g. an observation mask).
    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Result<Var> {
        let value = self.value(a).hadamard(&c)?;
        Ok(self.push(value, Op::MulConst(a, c)))
    }

    unary!(tanh, Tanh, f64::tanh);
    unary!(sigmoid, Sigmoid, sigmoid);
    unary!(exp, Exp, f64::exp);
    unary!(log, Log, f64::ln);
    unary!(square, Square, |x| x * x);
    unary!(sqrt, Sqrt, f64::sqrt);

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Matrix::filled(1, 1, s), Op::Sum(a))
    }

    pub fn frobenius_norm(&mut self, a: Var) -> Var {
        let s = self.value(a).frobenius_norm();
        self.push(Matrix::filled(1, 1, s), Op::FrobeniusNorm(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let va = self.value(a);
        if start + len > va.cols() {
            return Err(Error::Shape(format!(
                "slice_cols {start}..{} of {} columns",
                start + len,
                va.cols()
            )));
        }
        let value = Matrix::from_fn(va.rows(), len, |i, j| va[(i, start + j)]);
        Ok(self.push(value, Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Shape("concat_cols with differing row counts".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let out = value.row_mut(i);
            let mut off = 0;
            for &p in parts {
                let src = self.nodes[p.0].value.row(i);
                out[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Row-wise choice: row `r` of `on_true` where `mask[r]`, else of `on_false`.
    pub fn select_rows(&mut self, on_true: Var, on_false: Var, mask: Vec<bool>) -> Result<Var> {
        self.check_same(on_true, on_false, "select_rows")?;
        let (vt, vf) = (self.value(on_true), self.value(on_false));
        if mask.len() != vt.rows() {
            return Err(Error::Shape("select_rows mask length".into()));
        }
        let mut value = vf.clone();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                value.row_mut(i).copy_from_slice(vt.row(i));
            }
        }
        Ok(self.push(value, Op::SelectRows(on_true, on_false, mask)))
    }

    /// Applies `[σ | σ | tanh | σ]` to the four equal column blocks of `pre`.
    pub fn lstm_gates(&mut self, pre: Var) -> Result<Var> {
        let vp = self.value(pre);
        if !vp.cols().is_multiple_of(4) {
            return Err(Error::Shape("lstm_gates needs 4·H columns".into()));
        }
        let h = vp.cols() / 4;
        let mut value = vp.clone();
        for i in 0..value.rows() {
            for (j, x) in value.row_mut(i).iter_mut().enumerate() {
                *x = if (2 * h..3 * h).contains(&j) {
                    x.tanh()
                } else {
                    sigmoid(*x)
                };
            }
        }
        Ok(self.push(value, Op::LstmGates(pre)))
    }

    /// Reverse sweep from a 1×1 `loss`. The tape can be swept once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Numeric("tape already consumed by backward()".into()));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward() needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Leaf | Op::Const => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = slot(&mut grads, *a, va.shape());
                    gemm_nt_acc(&g, vb, ga);
                    let gb = slot(&mut grads, *b, vb.shape());
                    gemm_tn_acc(va, &g, gb);
                }
                Op::MatMulNt(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = slot(&mut grads, *a, va.shape());
                    gemm_acc(&g, vb, ga);
                    let gb = slot(&mut grads, *b, vb.shape());
                    gemm_tn_acc(&g, va, gb);
                }
                Op::Transpose(a) => {
                    let gt = g.transpose();
                    accumulate(&mut grads, *a, gt);
                }
                Op::Add(a, b) => {
                    add_scaled(slot(&mut grads, *a, g.shape()), &g, 1.0);
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    add_scaled(slot(&mut grads, *a, g.shape()), &g, 1.0);
                    accumulate(&mut grads, *b, g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = slot(&mut grads, *a, g.shape());
                    for ((o, gv), bv) in ga.as_mut_slice().iter_mut().zip(g.as_slice()).zip(vb.as_slice()) {
                        *o += gv * bv;
                    }
                    let gb = slot(&mut grads, *b, g.shape());
                    for ((o, gv), av) in gb.as_mut_slice().iter_mut().zip(g.as_slice()).zip(va.as_slice()) {
                        *o += gv * av;
                    }
                }
                Op::AddRow(a, row) => {
                    let gr = slot(&mut grads, *row, (1, g.cols()));
                    for r in 0..g.rows() {
                        for (o, gv) in gr.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    add_scaled(slot(&mut grads, *a, g.shape()), &g, s);
                }
                Op::MulScalar(a, s) => {
                    let sv = self.value(*s)[(0, 0)];
                    let va = self.value(*a);
                    let dot: f64 = g.as_slice().iter().zip(va.as_slice()).map(|(x, y)| x * y).sum();
                    slot(&mut grads, *s, (1, 1))[(0, 0)] += dot;
                    add_scaled(slot(&mut grads, *a, g.shape()), &g, sv);
                }
                Op::DivScalar(a, s) => {
                    let sv = self.value(*s)[(0, 0)];
                    let va = self.value(*a);
                    let dot: f64 = g.as_slice().iter().zip(va.as_slice()).map(|(x, y)| x * y).sum();
                    slot(&mut grads, *s, (1, 1))[(0, 0)] -= dot / (sv * sv);
                    add_scaled(slot(&mut grads, *a, g.shape()), &g, 1.0 / sv);
                }
                Op::MulConst(a, c) => {
                    let ga = slot(&mut grads, *a, g.shape());
                    for ((o, gv), cv) in ga.as_mut_slice().iter_mut().zip(g.as_slice()).zip(c.as_slice()) {
                        *o += gv * cv;
                    }
                }
                Op::Tanh(a) => elementwise_back(&mut grads, *a, &g, y, |_, y| 1.0 - y * y, &self.nodes),
                Op::Sigmoid(a) => elementwise_back(&mut grads, *a, &g, y, |_, y| y * (1.0 - y), &self.nodes),
                Op::Exp(a) => elementwise_back(&mut grads, *a, &g, y, |_, y| y, &self.nodes),
                Op::Log(a) => elementwise_back(&mut grads, *a, &g, y, |x, _| 1.0 / x, &self.nodes),
                Op::Square(a) => elementwise_back(&mut grads, *a, &g, y, |x, _| 2.0 * x, &self.nodes),
                Op::Sqrt(a) => elementwise_back(&mut grads, *a, &g, y, |_, y| 0.5 / y, &self.nodes),
                Op::Sum(a) => {
                    let gv = g[(0, 0)];
                    let shape = self.value(*a).shape();
                    for o in slot(&mut grads, *a, shape).as_mut_slice() {
                        *o += gv;
                    }
                }
                Op::FrobeniusNorm(a) => {
                    let norm = y[(0, 0)];
                    if norm > 0.0 {
                        let f = g[(0, 0)] / norm;
                        let va = self.value(*a);
                        let ga = slot(&mut grads, *a, va.shape());
                        for (o, x) in ga.as_mut_slice().iter_mut().zip(va.as_slice()) {
                            *o += f * x;
                        }
                    }
                }
                Op::SliceCols(a, start) => {
                    let shape = self.value(*a).shape();
                    let ga = slot(&mut grads, *a, shape);
                    for r in 0..g.rows() {
                        let dst = &mut ga.row_mut(r)[*start..*start + g.cols()];
                        for (o, gv) in dst.iter_mut().zip(g.row(r)) {
                            *o += gv;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let shape = self.value(p).shape();
                        let gp = slot(&mut grads, p, shape);
                        for r in 0..g.rows() {
                            let src = &g.row(r)[off..off + shape.1];
                            for (o, gv) in gp.row_mut(r).iter_mut().zip(src) {
                                *o += gv;
                            }
                        }
                        off += shape.1;
                    }
                }
                Op::SelectRows(t, f, mask) => {
                    let gt = slot(&mut grads, *t, g.shape());
                    for (r, &m) in mask.iter().enumerate() {
                        if m {
                            for (o, gv) in gt.row_mut(r).iter_mut().zip(g.row(r)) {
                                *o += gv;
                            }
                        }
                    }
                    let gf = slot(&mut grads, *f, g.shape());
                    for (r, &m) in mask.iter().enumerate() {
                        if !m {
                            for (o, gv) in gf.row_mut(r).iter_mut().zip(g.row(r)) {
                                *o += gv;
                            }
                        }
                    }
                }
                Op::LstmGates(pre) => {
                    let h = y.cols() / 4;
                    let gp = slot(&mut grads, *pre, y.shape());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        for (j, o) in gp.row_mut(r).iter_mut().enumerate() {
                            let d = if (2 * h..3 * h).contains(&j) {
                                1.0 - yr[j] * yr[j]
                            } else {
                                yr[j] * (1.0 - yr[j])
                            };
                            *o += gr[j] * d;
                        }
                    }
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        // Only leaf gradients are meaningful to callers.
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn slot(grads: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        none => *none = Some(g),
    }
}

fn add_scaled(dst: &mut Matrix, g: &Matrix, s: f64) {
    for (o, gv) in dst.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *o += s * gv;
    }
}

fn elementwise_back(
    grads: &mut [Option<Matrix>],
    a: Var,
    g: &Matrix,
    y: &Matrix,
    d: impl Fn(f64, f64) -> f64,
    nodes: &[Node],
) {
    let x = &nodes[a.0].value;
    let ga = slot(grads, a, g.shape());
    for (((o, gv), xv), yv) in ga
        .as_mut_slice()
        .iter_mut()
        .zip(g.as_slice())
        .zip(x.as_slice())
        .zip(y.as_slice())
    {
        *o += gv * d(*xv, *yv);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::filled(1, 1, 3.0));
        let y = t.square(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x)[(0, 0)], 6.0);
    }

    #[test]
    fn unreachable_leaf_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::filled(1, 1, 3.0));
        let unused = t.leaf(Matrix::filled(2, 3, 1.0));
        let y = t.square(x);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(unused), Matrix::zeros(2, 3));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::zeros(2, 2));
        assert!(matches!(t.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn second_backward_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::filled(1, 1, 2.0));
        let y = t.square(x);
        t.backward(y).unwrap();
        assert!(t.backward(y).is_err());
    }

    #[test]
    fn shared_operand_accumulates() {
        // y = x·x + x  ⇒  dy/dx = 2x + 1
        let mut t = Tape::new();
        let x = t.leaf(Matrix::filled(1, 1, 1.5));
        let xx = t.mul(x, x).unwrap();
        let y = t.add(xx, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x)[(0, 0)], 4.0);
    }
}
