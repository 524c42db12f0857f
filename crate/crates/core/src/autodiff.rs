//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends one node whose inputs already live on the tape, so
//! node order is a topological order and [`Tape::backward`] is a single reverse
//! sweep. `backward` does not mutate the tape: calling it twice on the same loss
//! returns identical gradients. Accumulating gradients into parameters is the
//! caller's job (see [`Parameter::accumulate`](crate::model::Parameter::accumulate)).

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Relu,
    Exp,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Binary(BinaryOp, Var, Var),
    Scale(Var, T),
    AddRowBias(Var, Var),
    Unary(UnaryOp, Var),
    Sum(Var),
    Mean(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    PickCols(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    SliceRows(Var),
    L2NormalizeRows(Var, Vec<T>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Recorded computation graph for one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape<T = f64> {
    nodes: Vec<Node<T>>,
}

/// Adjoints of every node with respect to the loss passed to [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T = f64> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Adjoint of `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Adjoint of `var`; unreachable nodes get zeros.
    pub fn wrt(&self, var: Var) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn rows_cols<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    t.dims2().ok_or_else(|| Error::shape(op, t.shape(), &[]))
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

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = rows_cols(av, "matmul_bt")?;
        let (n, k2) = rows_cols(bv, "matmul_bt")?;
        if k != k2 {
            return Err(Error::shape("matmul_bt", av.shape(), bv.shape()));
        }
        let mut out = vec![T::zero(); m * n];
        tensor::matmul_bt_into(av.data(), bv.data(), &mut out, m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulBt(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose()?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape("elementwise", av.shape(), bv.shape()));
        }
        let f = match op {
            BinaryOp::Add => |x: T, y: T| x + y,
            BinaryOp::Sub => |x: T, y: T| x - y,
            BinaryOp::Mul => |x: T, y: T| x * y,
        };
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        Ok(self.push(out, Op::Binary(op, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    /// Adds a bias row to every row of a matrix.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        let (_, c) = rows_cols(av, "add_row_bias")?;
        if bv.numel() != c {
            return Err(Error::shape("add_row_bias", av.shape(), bv.shape()));
        }
        let data = av
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(bv.data()).map(|(&x, &b)| x + b))
            .collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        Ok(self.push(out, Op::AddRowBias(a, bias)))
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let av = self.value(a);
        let out = match op {
            UnaryOp::Relu => av.map(|v| if v > T::zero() { v } else { T::zero() }),
            UnaryOp::Exp => av.map(T::exp),
            UnaryOp::Log => {
                if let Some(bad) = av.data().iter().find(|&&v| v <= T::zero()) {
                    return Err(Error::Domain {
                        op: "log",
                        detail: format!("non-positive input {bad}"),
                    });
                }
                av.map(T::ln)
            }
        };
        Ok(self.push(out, Op::Unary(op, a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Relu, a).expect("relu is total")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Exp, a).expect("exp is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().fold(T::zero(), |acc, &v| acc + v);
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = T::from_usize(v.numel()).expect("tensor length fits the scalar type");
        let s = v.data().iter().fold(T::zero(), |acc, &x| acc + x);
        self.push(Tensor::scalar(s / n), Op::Mean(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (_, c) = rows_cols(av, "softmax_rows")?;
        let mut out = vec![T::zero(); av.numel()];
        for (row, o) in av.data().chunks(c).zip(out.chunks_mut(c)) {
            tensor::softmax_row(row, o);
        }
        let out = Tensor::from_parts(av.shape().to_vec(), out);
        Ok(self.push(out, Op::SoftmaxRows(a)))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (_, c) = rows_cols(av, "log_softmax_rows")?;
        let mut out = vec![T::zero(); av.numel()];
        for (row, o) in av.data().chunks(c).zip(out.chunks_mut(c)) {
            tensor::log_softmax_row(row, o);
        }
        let out = Tensor::from_parts(av.shape().to_vec(), out);
        Ok(self.push(out, Op::LogSoftmaxRows(a)))
    }

    /// Selects column `cols[i]` from row `i`, producing a vector of length `rows`.
    pub fn pick_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = rows_cols(av, "pick_cols")?;
        if cols.len() != r {
            return Err(Error::shape("pick_cols", av.shape(), &[cols.len()]));
        }
        if let Some(&bad) = cols.iter().find(|&&j| j >= c) {
            return Err(Error::InvalidArgument(format!("column {bad} out of range for {c} columns")));
        }
        let data = cols.iter().enumerate().map(|(i, &j)| av.get(i, j)).collect();
        let out = Tensor::from_parts(vec![r], data);
        Ok(self.push(out, Op::PickCols(a, cols.to_vec())))
    }

    /// Stacks the listed rows of a matrix (rows may repeat).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = rows_cols(av, "gather_rows")?;
        if rows.is_empty() {
            return Err(Error::InvalidArgument("gather_rows needs at least one row".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::InvalidArgument(format!("row {bad} out of range for {r} rows")));
        }
        let data = rows.iter().flat_map(|&i| av.row(i).iter().copied()).collect();
        let out = Tensor::from_parts(vec![rows.len(), c], data);
        Ok(self.push(out, Op::GatherRows(a, rows.to_vec())))
    }

    /// The first `n` rows of a matrix.
    pub fn slice_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = rows_cols(av, "slice_rows")?;
        if n == 0 || n > r {
            return Err(Error::InvalidArgument(format!("cannot take {n} of {r} rows")));
        }
        let out = Tensor::from_parts(vec![n, c], av.data()[..n * c].to_vec());
        Ok(self.push(out, Op::SliceRows(a)))
    }

    /// Scales each row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (_, c) = rows_cols(av, "l2_normalize_rows")?;
        let eps = T::of(1e-12);
        let norms: Vec<T> = av
            .data()
            .chunks(c)
            .map(|row| row.iter().fold(T::zero(), |s, &v| s + v * v).sqrt().max(eps))
            .collect();
        let data = av
            .data()
            .chunks(c)
            .zip(&norms)
            .flat_map(|(row, &n)| row.iter().map(move |&v| v / n))
            .collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        Ok(self.push(out, Op::L2NormalizeRows(a, norms)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[id];
        let y = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2().unwrap();
                let n = bv.shape()[1];
                // dA = G·Bᵀ, dB = Aᵀ·G
                tensor::matmul_bt_into(gd, bv.data(), self.slot(grads, *a), m, n, k);
                tensor::matmul_at_into(av.data(), gd, self.slot(grads, *b), m, k, n);
            }
            Op::MatMulBt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = av.dims2().unwrap();
                let n = bv.shape()[0];
                // y = A·Bᵀ: dA = G·B, dB = Gᵀ·A
                tensor::matmul_into(gd, bv.data(), self.slot(grads, *a), m, n, k);
                tensor::matmul_at_into(gd, av.data(), self.slot(grads, *b), m, n, k);
            }
            Op::Transpose(a) => {
                let (r, c) = y.dims2().unwrap();
                let gt = tensor::transpose(gd, r, c);
                add_into(self.slot(grads, *a), &gt);
            }
            Op::Binary(kind, a, b) => match kind {
                BinaryOp::Add => {
                    add_into(self.slot(grads, *a), gd);
                    add_into(self.slot(grads, *b), gd);
                }
                BinaryOp::Sub => {
                    add_into(self.slot(grads, *a), gd);
                    for (o, &v) in self.slot(grads, *b).iter_mut().zip(gd) {
                        *o -= v;
                    }
                }
                BinaryOp::Mul => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    for ((o, &gv), &bv) in self.slot(grads, *a).iter_mut().zip(gd).zip(bv) {
                        *o += gv * bv;
                    }
                    for ((o, &gv), &av) in self.slot(grads, *b).iter_mut().zip(gd).zip(av) {
                        *o += gv * av;
                    }
                }
            },
            Op::Scale(a, c) => {
                for (o, &v) in self.slot(grads, *a).iter_mut().zip(gd) {
                    *o += *c * v;
                }
            }
            Op::AddRowBias(a, bias) => {
                add_into(self.slot(grads, *a), gd);
                let c = y.shape()[1];
                let gb = self.slot(grads, *bias);
                for row in gd.chunks(c) {
                    add_into(gb, row);
                }
            }
            Op::Unary(kind, a) => {
                let x = self.value(*a).data();
                let ga = self.slot(grads, *a);
                match kind {
                    UnaryOp::Relu => {
                        for ((o, &gv), &xv) in ga.iter_mut().zip(gd).zip(x) {
                            if xv > T::zero() {
                                *o += gv;
                            }
                        }
                    }
                    UnaryOp::Exp => {
                        for ((o, &gv), &yv) in ga.iter_mut().zip(gd).zip(y.data()) {
                            *o += gv * yv;
                        }
                    }
                    UnaryOp::Log => {
                        for ((o, &gv), &xv) in ga.iter_mut().zip(gd).zip(x) {
                            *o += gv / xv;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let g0 = gd[0];
                for o in self.slot(grads, *a).iter_mut() {
                    *o += g0;
                }
            }
            Op::Mean(a) => {
                let ga = self.slot(grads, *a);
                let g0 = gd[0] / T::from_usize(ga.len()).unwrap();
                for o in ga.iter_mut() {
                    *o += g0;
                }
            }
            Op::SoftmaxRows(a) => {
                let c = y.shape()[1];
                let ga = self.slot(grads, *a);
                for ((grow, yrow), orow) in gd.chunks(c).zip(y.data().chunks(c)).zip(ga.chunks_mut(c)) {
                    let dot = grow.iter().zip(yrow).fold(T::zero(), |s, (&g, &p)| s + g * p);
                    for ((o, &g), &p) in orow.iter_mut().zip(grow).zip(yrow) {
                        *o += p * (g - dot);
                    }
                }
            }
            Op::LogSoftmaxRows(a) => {
                let c = y.shape()[1];
                let ga = self.slot(grads, *a);
                for ((grow, yrow), orow) in gd.chunks(c).zip(y.data().chunks(c)).zip(ga.chunks_mut(c)) {
                    let gsum = grow.iter().fold(T::zero(), |s, &g| s + g);
                    for ((o, &g), &ly) in orow.iter_mut().zip(grow).zip(yrow) {
                        *o += g - ly.exp() * gsum;
                    }
                }
            }
            Op::PickCols(a, cols) => {
                let c = self.value(*a).shape()[1];
                let ga = self.slot(grads, *a);
                for (i, (&j, &gv)) in cols.iter().zip(gd).enumerate() {
                    ga[i * c + j] += gv;
                }
            }
            Op::GatherRows(a, rows) => {
                let c = y.shape()[1];
                let ga = self.slot(grads, *a);
                for (&i, grow) in rows.iter().zip(gd.chunks(c)) {
                    add_into(&mut ga[i * c..(i + 1) * c], grow);
                }
            }
            Op::SliceRows(a) => {
                let ga = self.slot(grads, *a);
                add_into(&mut ga[..gd.len()], gd);
            }
            Op::L2NormalizeRows(a, norms) => {
                let c = y.shape()[1];
                let ga = self.slot(grads, *a);
                for (((grow, yrow), orow), &n) in gd
                    .chunks(c)
                    .zip(y.data().chunks(c))
                    .zip(ga.chunks_mut(c))
                    .zip(norms)
                {
                    let dot = grow.iter().zip(yrow).fold(T::zero(), |s, (&g, &v)| s + g * v);
                    for ((o, &g), &v) in orow.iter_mut().zip(grow).zip(yrow) {
                        *o += (g - v * dot) / n;
                    }
                }
            }
        }
    }

    /// Mutable adjoint buffer for `v`, created zeroed on first use.
    fn slot<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> &'g mut [T] {
        grads[v.0]
            .get_or_insert_with(|| Tensor::zeros(self.value(v).shape()))
            .data_mut()
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
