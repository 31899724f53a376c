//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and [`Graph::backward`] walks it once in reverse.
//! Gradients are accumulated only into leaf nodes created with
//! [`Graph::param`]; they keep accumulating across backward calls until
//! [`Graph::zero_grad`].

use crate::autodiff::Tensor;
use crate::error::{dim_err, Error, Result};

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise operations with analytic derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Log,
    Exp,
    Softplus,
    Abs,
    Neg,
    Scale(f64),
    AddScalar(f64),
    /// Clamp into `[lo, hi]`; gradient is zero where the clamp is active.
    Clamp(f64, f64),
}

/// Reduction direction. `Rows` collapses the row dimension (result `1 x cols`),
/// `Cols` collapses the column dimension (result `rows x 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    All,
    Rows,
    Cols,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Unary(Var, Unary),
    SteSign(Var),
    Reduce(Var, Reduce, Axis),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Forward behaviour of [`Graph::ste_sign`].
///
/// `Record` and `Replay` exist for gradient checking: replaying the offset
/// `sign(z0) - z0` captured at a base point turns the hard threshold into
/// `z + c`, a function whose exact derivative is the straight-through one.
#[derive(Debug, Clone, Default)]
pub enum SteMode {
    #[default]
    Hard,
    Record(Vec<Tensor>),
    Replay {
        offsets: Vec<Tensor>,
        next: usize,
    },
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    ste: SteMode,
}

pub const LEAKY_RELU_SLOPE: f64 = 0.01;

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_ste_mode(ste: SteMode) -> Self {
        Graph { nodes: Vec::new(), ste }
    }

    /// Takes the offsets collected in `SteMode::Record`.
    pub fn take_ste_offsets(&mut self) -> Vec<Tensor> {
        match std::mem::take(&mut self.ste) {
            SteMode::Record(v) => v,
            other => {
                self.ste = other;
                Vec::new()
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, true, "param")
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf, false, "constant")
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.gemm(a, false, b, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.gemm(a, false, b, true)
    }

    fn gemm(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let value = Tensor::gemm(self.value(a), ta, self.value(b), tb)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul { a, b, ta, tb }, rg, "matmul")
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64, name: &'static str) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), f)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y, "mul")
    }

    /// Adds a `1 x cols` row to every row of `a` (bias addition).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return dim_err(format!(
                "add_row: {}x{} row for {}x{} input",
                rv.rows(),
                rv.cols(),
                av.rows(),
                av.cols()
            ));
        }
        let mut value = av.clone();
        let cols = av.cols();
        let r = rv.data().to_vec();
        for chunk in value.data_mut().chunks_mut(cols.max(1)) {
            for (x, b) in chunk.iter_mut().zip(&r) {
                *x += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(value, Op::AddRow(a, row), rg, "add_row")
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Result<Var> {
        let x = self.value(a);
        let value = match kind {
            Unary::Relu => x.map(|v| v.max(0.0)),
            Unary::LeakyRelu(s) => x.map(|v| if v > 0.0 { v } else { s * v }),
            Unary::Sigmoid => x.map(sigmoid),
            Unary::Log => {
                if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0) {
                    return Err(Error::Domain(format!("log of non-positive value {bad}")));
                }
                x.map(f64::ln)
            }
            Unary::Exp => x.map(f64::exp),
            Unary::Softplus => x.map(softplus),
            Unary::Abs => x.map(f64::abs),
            Unary::Neg => x.map(|v| -v),
            Unary::Scale(c) => x.map(|v| c * v),
            Unary::AddScalar(c) => x.map(|v| v + c),
            Unary::Clamp(lo, hi) => x.map(|v| v.clamp(lo, hi)),
        };
        let rg = self.rg(a);
        self.push(value, Op::Unary(a, kind), rg, "unary")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Relu)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.unary(a, Unary::LeakyRelu(slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Log)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Exp)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Softplus)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Abs)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Neg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Unary::Scale(c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Unary::AddScalar(c))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(a, Unary::Clamp(lo, hi))
    }

    /// Threshold at zero (`z >= 0` maps to 1) with the straight-through
    /// gradient `d sign / dz = 1`.
    pub fn ste_sign(&mut self, z: Var) -> Result<Var> {
        let zv = &self.nodes[z.0].value;
        let value = match &mut self.ste {
            SteMode::Hard => zv.map(|v| if v >= 0.0 { 1.0 } else { 0.0 }),
            SteMode::Record(offsets) => {
                let h = zv.map(|v| if v >= 0.0 { 1.0 } else { 0.0 });
                offsets.push(h.zip_map(zv, |h, z| h - z)?);
                h
            }
            SteMode::Replay { offsets, next } => {
                let off = offsets
                    .get(*next)
                    .ok_or_else(|| Error::Contract("ste replay ran out of offsets".into()))?;
                *next += 1;
                zv.zip_map(off, |z, c| z + c)?
            }
        };
        let rg = self.rg(z);
        self.push(value, Op::SteSign(z), rg, "ste_sign")
    }

    pub fn reduce(&mut self, a: Var, kind: Reduce, axis: Axis) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return dim_err("reduction over an empty tensor");
        }
        let (rows, cols) = x.shape();
        let mut value = match axis {
            Axis::All => Tensor::scalar(x.sum()),
            Axis::Rows => {
                let mut out = Tensor::zeros(1, cols);
                for r in 0..rows {
                    for (o, v) in out.data_mut().iter_mut().zip(x.row(r)) {
                        *o += v;
                    }
                }
                out
            }
            Axis::Cols => {
                let sums: Vec<f64> = (0..rows).map(|r| x.row(r).iter().sum()).collect();
                Tensor::from_vec(rows, 1, sums)?
            }
        };
        if kind == Reduce::Mean {
            let n = match axis {
                Axis::All => rows * cols,
                Axis::Rows => rows,
                Axis::Cols => cols,
            } as f64;
            value.data_mut().iter_mut().for_each(|v| *v /= n);
        }
        let rg = self.rg(a);
        self.push(value, Op::Reduce(a, kind, axis), rg, "reduce")
    }

    pub fn sum(&mut self, a: Var, axis: Axis) -> Result<Var> {
        self.reduce(a, Reduce::Sum, axis)
    }

    pub fn mean(&mut self, a: Var, axis: Axis) -> Result<Var> {
        self.reduce(a, Reduce::Mean, axis)
    }

    /// Propagates `d loss / d node` to every trainable leaf reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            let (r, c) = self.value(loss).shape();
            return Err(Error::Contract(format!("backward needs a 1x1 loss, got {r}x{c}")));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {
                    let slot = &mut self.nodes[i].grad;
                    match slot {
                        Some(existing) => existing.add_assign(&g)?,
                        None => *slot = Some(g),
                    }
                }
                Op::MatMul { a, b, ta, tb } => {
                    if self.rg(a) {
                        let bv = self.value(b);
                        let da = if ta {
                            Tensor::gemm(bv, tb, &g, true)?
                        } else {
                            Tensor::gemm(&g, false, bv, !tb)?
                        };
                        acc(&mut grads, a, da)?;
                    }
                    if self.rg(b) {
                        let av = self.value(a);
                        let db = if tb {
                            Tensor::gemm(&g, true, av, ta)?
                        } else {
                            Tensor::gemm(av, !ta, &g, false)?
                        };
                        acc(&mut grads, b, db)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(b) {
                        acc(&mut grads, b, g.clone())?;
                    }
                    if self.rg(a) {
                        acc(&mut grads, a, g)?;
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(b) {
                        acc(&mut grads, b, g.map(|v| -v))?;
                    }
                    if self.rg(a) {
                        acc(&mut grads, a, g)?;
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(a) {
                        let da = g.zip_map(self.value(b), |g, y| g * y)?;
                        acc(&mut grads, a, da)?;
                    }
                    if self.rg(b) {
                        let db = g.zip_map(self.value(a), |g, x| g * x)?;
                        acc(&mut grads, b, db)?;
                    }
                }
                Op::AddRow(a, row) => {
                    if self.rg(row) {
                        let cols = g.cols();
                        let mut dr = Tensor::zeros(1, cols);
                        for r in 0..g.rows() {
                            for (o, v) in dr.data_mut().iter_mut().zip(g.row(r)) {
                                *o += v;
                            }
                        }
                        acc(&mut grads, row, dr)?;
                    }
                    if self.rg(a) {
                        acc(&mut grads, a, g)?;
                    }
                }
                Op::Unary(a, kind) => {
                    let x = self.value(a);
                    let y = &self.nodes[i].value;
                    let da = match kind {
                        Unary::Relu => g.zip_map(x, |g, x| if x > 0.0 { g } else { 0.0 })?,
                        Unary::LeakyRelu(s) => g.zip_map(x, |g, x| if x > 0.0 { g } else { s * g })?,
                        Unary::Sigmoid => g.zip_map(y, |g, y| g * y * (1.0 - y))?,
                        Unary::Log => g.zip_map(x, |g, x| g / x)?,
                        Unary::Exp => g.zip_map(y, |g, y| g * y)?,
                        Unary::Softplus => g.zip_map(x, |g, x| g * sigmoid(x))?,
                        Unary::Abs => g.zip_map(x, |g, x| {
                            if x > 0.0 {
                                g
                            } else if x < 0.0 {
                                -g
                            } else {
                                0.0
                            }
                        })?,
                        Unary::Neg => g.map(|v| -v),
                        Unary::Scale(c) => g.map(|v| c * v),
                        Unary::AddScalar(_) => g,
                        Unary::Clamp(lo, hi) => g.zip_map(x, |g, x| if x >= lo && x <= hi { g } else { 0.0 })?,
                    };
                    acc(&mut grads, a, da)?;
                }
                Op::SteSign(z) => acc(&mut grads, z, g)?,
                Op::Reduce(a, kind, axis) => {
                    let (rows, cols) = self.value(a).shape();
                    let n = match axis {
                        Axis::All => rows * cols,
                        Axis::Rows => rows,
                        Axis::Cols => cols,
                    } as f64;
                    let f = if kind == Reduce::Mean { 1.0 / n } else { 1.0 };
                    let mut da = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            let gv = match axis {
                                Axis::All => g.get(0, 0),
                                Axis::Rows => g.get(0, c),
                                Axis::Cols => g.get(r, 0),
                            };
                            da.set(r, c, gv * f);
                        }
                    }
                    acc(&mut grads, a, da)?;
                }
            }
        }
        Ok(())
    }
}
