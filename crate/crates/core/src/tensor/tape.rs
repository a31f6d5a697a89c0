use std::collections::HashMap;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// How an operand of a binary op is expanded to the output shape.
#[derive(Clone, Copy, Debug)]
enum Bcast {
    Full,
    Scalar,
    /// One value per row (`[rows, 1]`).
    PerRow,
    /// One value per column (`[cols]` or `[1, cols]`).
    PerCol,
}

impl Bcast {
    fn of<F: Real>(operand: &Tensor<F>, rows: usize, cols: usize) -> Option<Bcast> {
        let (r, c) = (operand.rows(), operand.cols());
        if r == rows && c == cols {
            Some(Bcast::Full)
        } else if operand.numel() == 1 {
            Some(Bcast::Scalar)
        } else if r == rows && c == 1 {
            Some(Bcast::PerRow)
        } else if r == 1 && c == cols {
            Some(Bcast::PerCol)
        } else {
            None
        }
    }

    #[inline]
    fn index(self, r: usize, c: usize, cols: usize) -> usize {
        match self {
            Bcast::Full => r * cols + c,
            Bcast::Scalar => 0,
            Bcast::PerRow => r,
            Bcast::PerCol => c,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Min,
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Binary(BinOp, Var, Bcast, Var, Bcast),
    Scale(Var, F),
    Offset(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sqrt(Var),
    Softplus(Var),
    MinConst(Var, F),
    Clamp(Var, F, F),
    RowNorm(Var),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    Cols(Var, usize, usize),
    Concat(Vec<Var>),
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Records a forward computation so it can be differentiated in reverse.
///
/// Parameters are registered by name; registering the same name twice
/// returns the same variable, so a net applied to several inputs
/// accumulates one gradient.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    params: HashMap<String, Var>,
    param_order: Vec<String>,
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct Gradients<F> {
    map: HashMap<String, Tensor<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.map.get(name)
    }

    pub fn insert(&mut self, name: &str, grad: Tensor<F>) {
        self.map.insert(name.to_string(), grad);
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            param_order: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A named trainable leaf.
    pub fn param(&mut self, name: &str, value: &Tensor<F>) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf, true);
        self.params.insert(name.to_string(), v);
        self.param_order.push(name.to_string());
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, op: BinOp, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        // the output takes the shape of the larger operand
        let big = if vb.numel() > va.numel() { vb } else { va };
        let (rows, cols) = (big.rows(), big.cols());
        let shape = big.shape().to_vec();
        let ba = Bcast::of(va, rows, cols);
        let bb = Bcast::of(vb, rows, cols);
        let (ba, bb) = match (ba, bb) {
            (Some(x), Some(y)) => (x, y),
            _ => {
                return Err(Error::dim(
                    format!("{op:?} broadcast"),
                    format!("{:?}", va.shape()),
                    format!("{:?}", vb.shape()),
                ))
            }
        };
        let (da, db) = (va.data(), vb.data());
        let mut out = Vec::with_capacity(rows * cols);
        match op {
            BinOp::Add => zip_rows(&mut out, da, ba, db, bb, rows, cols, |x, y| x + y),
            BinOp::Sub => zip_rows(&mut out, da, ba, db, bb, rows, cols, |x, y| x - y),
            BinOp::Mul => zip_rows(&mut out, da, ba, db, bb, rows, cols, |x, y| x * y),
            BinOp::Min => zip_rows(&mut out, da, ba, db, bb, rows, cols, |x, y| x.min(y)),
        }
        let rg = self.rg(a) || self.rg(b);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Binary(op, a, ba, b, bb), rg))
    }

    /// Elementwise sum; either side may broadcast as a scalar, a
    /// per-row column, or a per-column row.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Mul, a, b)
    }

    /// Elementwise minimum of two variables.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinOp::Min, a, b)
    }

    fn unary(&mut self, x: Var, f: impl Fn(F) -> F, op: Op<F>) -> Var {
        let out = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -F::one())
    }

    pub fn offset(&mut self, x: Var, c: F) -> Var {
        self.unary(x, |v| v + c, Op::Offset(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(F::zero()), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.sqrt(), Op::Sqrt(x))
    }

    /// `log(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn min_const(&mut self, x: Var, c: F) -> Var {
        self.unary(x, |v| v.min(c), Op::MinConst(x, c))
    }

    pub fn clamp(&mut self, x: Var, lo: F, hi: F) -> Var {
        self.unary(x, |v| v.max(lo).min(hi), Op::Clamp(x, lo, hi))
    }

    /// Euclidean norm of each row: `[rows, cols] -> [rows, 1]`.
    /// The gradient at a zero row is defined as zero.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let (rows, cols) = (v.rows(), v.cols());
        let out: Vec<F> = (0..rows)
            .map(|r| {
                v.data()[r * cols..(r + 1) * cols]
                    .iter()
                    .map(|&e| e * e)
                    .sum::<F>()
                    .sqrt()
            })
            .collect();
        let rg = self.rg(x);
        self.push(Tensor::new(vec![rows, 1], out).unwrap(), Op::RowNorm(x), rg)
    }

    /// Sum of each row: `[rows, cols] -> [rows, 1]`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let (rows, cols) = (v.rows(), v.cols());
        let out: Vec<F> = (0..rows)
            .map(|r| v.data()[r * cols..(r + 1) * cols].iter().copied().sum::<F>())
            .collect();
        let rg = self.rg(x);
        self.push(Tensor::new(vec![rows, 1], out).unwrap(), Op::RowSum(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: F = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: F = v.data().iter().copied().sum::<F>() / F::from_usize(v.numel()).unwrap();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Columns `[start, end)` of a matrix.
    pub fn cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(x);
        if start >= end || end > v.cols() {
            return Err(Error::dim(
                "column slice",
                format!("within 0..{}", v.cols()),
                format!("{start}..{end}"),
            ));
        }
        let out = v.cols_range(start, end);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Cols(x, start, end), rg))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<F>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::hcat(&tensors)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::Concat(parts.to_vec()), rg))
    }

    /// Reverse pass from a scalar. Every registered parameter gets an
    /// entry; parameters the loss does not reach get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), F::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut map = HashMap::new();
        for name in &self.param_order {
            let v = self.params[name];
            let g = grads[v.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
            map.insert(name.clone(), g);
        }
        Ok(Gradients { map })
    }

    fn propagate(&self, idx: usize, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                if self.rg(*a) {
                    // dA = dC · Bᵀ
                    let acc = slot(grads, *a, va.shape());
                    unsafe {
                        F::gemm(
                            m,
                            n,
                            k,
                            F::one(),
                            g.data().as_ptr(),
                            n as isize,
                            1,
                            vb.data().as_ptr(),
                            1,
                            n as isize,
                            F::one(),
                            acc.data_mut().as_mut_ptr(),
                            k as isize,
                            1,
                        );
                    }
                }
                if self.rg(*b) {
                    // dB = Aᵀ · dC
                    let acc = slot(grads, *b, vb.shape());
                    unsafe {
                        F::gemm(
                            k,
                            m,
                            n,
                            F::one(),
                            va.data().as_ptr(),
                            1,
                            k as isize,
                            g.data().as_ptr(),
                            n as isize,
                            1,
                            F::one(),
                            acc.data_mut().as_mut_ptr(),
                            n as isize,
                            1,
                        );
                    }
                }
            }
            Op::Binary(op, a, ba, b, bb) => {
                let (rows, cols) = (y.rows(), y.cols());
                let (va, vb) = (self.value(*a), self.value(*b));
                let gd = g.data();
                let (xa, xb) = (va.data(), vb.data());
                if self.rg(*a) {
                    let acc = slot(grads, *a, va.shape());
                    let ad = acc.data_mut();
                    match op {
                        BinOp::Add | BinOp::Sub => reduce_rows(ad, *ba, gd, rows, cols, |g, _| g),
                        BinOp::Mul => reduce_rows(ad, *ba, gd, rows, cols, |g, (r, c)| g * xb[bb.index(r, c, cols)]),
                        BinOp::Min => reduce_rows(ad, *ba, gd, rows, cols, |g, (r, c)| {
                            if xa[ba.index(r, c, cols)] <= xb[bb.index(r, c, cols)] {
                                g
                            } else {
                                F::zero()
                            }
                        }),
                    }
                }
                if self.rg(*b) {
                    let acc = slot(grads, *b, vb.shape());
                    let bd = acc.data_mut();
                    match op {
                        BinOp::Add => reduce_rows(bd, *bb, gd, rows, cols, |g, _| g),
                        BinOp::Sub => reduce_rows(bd, *bb, gd, rows, cols, |g, _| -g),
                        BinOp::Mul => reduce_rows(bd, *bb, gd, rows, cols, |g, (r, c)| g * xa[ba.index(r, c, cols)]),
                        BinOp::Min => reduce_rows(bd, *bb, gd, rows, cols, |g, (r, c)| {
                            if xa[ba.index(r, c, cols)] <= xb[bb.index(r, c, cols)] {
                                F::zero()
                            } else {
                                g
                            }
                        }),
                    }
                }
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.pointwise(grads, *x, g, y, |gi, _, _| gi * c);
            }
            Op::Offset(x) => self.pointwise(grads, *x, g, y, |gi, _, _| gi),
            Op::Relu(x) => self.pointwise(grads, *x, g, y, |gi, _, yi| if yi > F::zero() { gi } else { F::zero() }),
            Op::Tanh(x) => self.pointwise(grads, *x, g, y, |gi, _, yi| gi * (F::one() - yi * yi)),
            Op::Exp(x) => self.pointwise(grads, *x, g, y, |gi, _, yi| gi * yi),
            Op::Log(x) => self.pointwise(grads, *x, g, y, |gi, xi, _| gi / xi),
            Op::Square(x) => self.pointwise(grads, *x, g, y, |gi, xi, _| gi * (xi + xi)),
            Op::Sqrt(x) => self.pointwise(
                grads,
                *x,
                g,
                y,
                |gi, _, yi| {
                    if yi > F::zero() {
                        gi / (yi + yi)
                    } else {
                        F::zero()
                    }
                },
            ),
            Op::Softplus(x) => self.pointwise(grads, *x, g, y, |gi, xi, _| gi * sigmoid(xi)),
            Op::MinConst(x, c) => {
                let c = *c;
                self.pointwise(grads, *x, g, y, |gi, xi, _| if xi < c { gi } else { F::zero() })
            }
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                self.pointwise(
                    grads,
                    *x,
                    g,
                    y,
                    |gi, xi, _| {
                        if xi > lo && xi < hi {
                            gi
                        } else {
                            F::zero()
                        }
                    },
                )
            }
            Op::RowNorm(x) => {
                let vx = self.value(*x);
                let cols = vx.cols();
                let acc = slot(grads, *x, vx.shape());
                let ad = acc.data_mut();
                for r in 0..vx.rows() {
                    let norm = y.data()[r];
                    if norm > F::zero() {
                        let s = g.data()[r] / norm;
                        for c in 0..cols {
                            ad[r * cols + c] += s * vx.data()[r * cols + c];
                        }
                    }
                }
            }
            Op::RowSum(x) => {
                let vx = self.value(*x);
                let cols = vx.cols();
                let acc = slot(grads, *x, vx.shape());
                let ad = acc.data_mut();
                for r in 0..vx.rows() {
                    let gr = g.data()[r];
                    for c in 0..cols {
                        ad[r * cols + c] += gr;
                    }
                }
            }
            Op::Sum(x) => {
                let gv = g.item();
                let shape = self.value(*x).shape().to_vec();
                for e in slot(grads, *x, &shape).data_mut() {
                    *e += gv;
                }
            }
            Op::Mean(x) => {
                let shape = self.value(*x).shape().to_vec();
                let gv = g.item() / F::from_usize(shape.iter().product()).unwrap();
                for e in slot(grads, *x, &shape).data_mut() {
                    *e += gv;
                }
            }
            Op::Cols(x, start, end) => {
                let vx = self.value(*x);
                let cols = vx.cols();
                let w = end - start;
                let acc = slot(grads, *x, vx.shape());
                let ad = acc.data_mut();
                for r in 0..vx.rows() {
                    for c in 0..w {
                        ad[r * cols + start + c] += g.data()[r * w + c];
                    }
                }
            }
            Op::Concat(parts) => {
                let total = y.cols();
                let mut offset = 0;
                for &p in parts {
                    let vp = self.value(p);
                    let w = vp.cols();
                    if self.rg(p) {
                        let acc = slot(grads, p, vp.shape());
                        let ad = acc.data_mut();
                        for r in 0..vp.rows() {
                            for c in 0..w {
                                ad[r * w + c] += g.data()[r * total + offset + c];
                            }
                        }
                    }
                    offset += w;
                }
            }
        }
    }

    /// Accumulates `f(upstream, input, output)` into the input's gradient.
    fn pointwise(
        &self,
        grads: &mut [Option<Tensor<F>>],
        x: Var,
        g: &Tensor<F>,
        y: &Tensor<F>,
        f: impl Fn(F, F, F) -> F,
    ) {
        if !self.rg(x) {
            return;
        }
        let vx = self.value(x);
        let acc = slot(grads, x, vx.shape());
        for ((a, (&gi, &xi)), &yi) in acc
            .data_mut()
            .iter_mut()
            .zip(g.data().iter().zip(vx.data()))
            .zip(y.data())
        {
            *a += f(gi, xi, yi);
        }
    }
}

/// Operand row `r` under a broadcast: a slice, or one repeated value.
enum RowSrc<'a, F> {
    Slice(&'a [F]),
    Value(F),
}

#[inline]
fn row_src<F: Real>(d: &[F], b: Bcast, r: usize, cols: usize) -> RowSrc<'_, F> {
    match b {
        Bcast::Full => RowSrc::Slice(&d[r * cols..(r + 1) * cols]),
        Bcast::PerCol => RowSrc::Slice(&d[..cols]),
        Bcast::PerRow => RowSrc::Value(d[r]),
        Bcast::Scalar => RowSrc::Value(d[0]),
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn zip_rows<F: Real>(
    out: &mut Vec<F>,
    da: &[F],
    ba: Bcast,
    db: &[F],
    bb: Bcast,
    rows: usize,
    cols: usize,
    f: impl Fn(F, F) -> F,
) {
    for r in 0..rows {
        match (row_src(da, ba, r, cols), row_src(db, bb, r, cols)) {
            (RowSrc::Slice(x), RowSrc::Slice(y)) => out.extend(x.iter().zip(y).map(|(&x, &y)| f(x, y))),
            (RowSrc::Slice(x), RowSrc::Value(y)) => out.extend(x.iter().map(|&x| f(x, y))),
            (RowSrc::Value(x), RowSrc::Slice(y)) => out.extend(y.iter().map(|&y| f(x, y))),
            (RowSrc::Value(x), RowSrc::Value(y)) => out.extend(std::iter::repeat_n(f(x, y), cols)),
        }
    }
}

/// Accumulates `f(upstream, (r, c))` into an operand's gradient, summing
/// over the broadcast axes.
#[inline]
fn reduce_rows<F: Real>(
    acc: &mut [F],
    b: Bcast,
    g: &[F],
    rows: usize,
    cols: usize,
    f: impl Fn(F, (usize, usize)) -> F,
) {
    for r in 0..rows {
        let gr = &g[r * cols..(r + 1) * cols];
        match b {
            Bcast::Full => {
                for (c, (a, &gi)) in acc[r * cols..(r + 1) * cols].iter_mut().zip(gr).enumerate() {
                    *a += f(gi, (r, c));
                }
            }
            Bcast::PerCol => {
                for (c, (a, &gi)) in acc[..cols].iter_mut().zip(gr).enumerate() {
                    *a += f(gi, (r, c));
                }
            }
            Bcast::PerRow | Bcast::Scalar => {
                let i = if matches!(b, Bcast::PerRow) { r } else { 0 };
                let mut s = F::zero();
                for (c, &gi) in gr.iter().enumerate() {
                    s += f(gi, (r, c));
                }
                acc[i] += s;
            }
        }
    }
}

fn slot<'a, F: Real>(grads: &'a mut [Option<Tensor<F>>], v: Var, shape: &[usize]) -> &'a mut Tensor<F> {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

#[inline]
pub(crate) fn softplus<F: Real>(x: F) -> F {
    // max(x, 0) + log1p(exp(-|x|))
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Activation, Mlp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central-difference check of `d loss / d x` for every element of `x`.
    fn check(x0: Tensor<f64>, build: impl Fn(&mut Tape<f64>, Var) -> Var) {
        let mut tape = Tape::new();
        let x = tape.param("x", &x0);
        let loss = build(&mut tape, x);
        let analytic = tape.backward(loss).unwrap().get("x").unwrap().clone();
        let h = 1e-5;
        for i in 0..x0.numel() {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp.data_mut()[i] += delta;
                let mut t = Tape::new();
                let xv = t.param("x", &xp);
                let l = build(&mut t, xv);
                t.value(l).item()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.data()[i];
            let denom = fd.abs().max(a.abs()).max(1e-8);
            assert!(
                (fd - a).abs() / denom < 1e-6 || (fd - a).abs() < 1e-9,
                "elem {i}: fd {fd} vs analytic {a}"
            );
        }
    }

    #[test]
    fn linear_sum_gradient_is_input() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param("w", &Tensor::row(vec![0.1, 0.2, 0.3]));
        let x = tape.constant(Tensor::row(vec![1.5, -2.0, 4.0]));
        let p = tape.mul(w, x).unwrap();
        let loss = tape.sum(p);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get("w").unwrap().data(), &[1.5, -2.0, 4.0]);
    }

    #[test]
    fn unreachable_parameter_gets_zero() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param("a", &Tensor::row(vec![1.0, 2.0]));
        let _b = tape.param("b", &Tensor::row(vec![3.0]));
        let loss = tape.sum(a);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get("b").unwrap().data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let mut tape = Tape::<f64>::new();
        let a = tape.param("a", &Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = rand_tensor(&mut rng, &[3, 4]);
        let other = rand_tensor(&mut rng, &[3, 4]);
        let row = rand_tensor(&mut rng, &[3, 1]);
        let col = rand_tensor(&mut rng, &[4]);
        check(x0.clone(), |t, x| {
            let a = t.tanh(x);
            let b = t.square(a);
            let c = t.softplus(b);
            let e = t.exp(x);
            let l = t.offset(e, 1.0);
            let l = t.log(l);
            let s = t.add(c, l).unwrap();
            t.mean(s)
        });
        check(x0.clone(), |t, x| {
            let o = t.constant(other.clone());
            let r = t.constant(row.clone());
            let c = t.constant(col.clone());
            let m = t.mul(x, o).unwrap();
            let m = t.sub(m, r).unwrap();
            let m = t.mul(m, c).unwrap();
            let m = t.minimum(m, o).unwrap();
            let m = t.min_const(m, 0.3);
            t.sum(m)
        });
        check(x0.clone(), |t, x| {
            let n = t.row_norm(x);
            let s = t.row_sum(x);
            let q = t.mul(n, s).unwrap();
            let c = t.clamp(q, -0.5, 0.5);
            let r = t.relu(x);
            let r = t.offset(r, 0.1);
            let r = t.sqrt(r);
            let both = t.mul(r, c).unwrap();
            t.sum(both)
        });
        check(x0, |t, x| {
            let a = t.cols(x, 0, 2).unwrap();
            let b = t.cols(x, 2, 4).unwrap();
            let ab = t.mul(a, b).unwrap();
            let cat = t.concat(&[ab, x]).unwrap();
            let sc = t.scale(cat, -2.5);
            let sq = t.square(sc);
            t.mean(sq)
        });
    }

    #[test]
    fn row_norm_gradient_at_zero_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param("x", &Tensor::row(vec![0.0, 0.0]));
        let n = tape.row_norm(x);
        let loss = tape.sum(n);
        assert_eq!(tape.backward(loss).unwrap().get("x").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn mlp_parameter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for act in [Activation::Relu, Activation::Tanh] {
            let net = Mlp::<f64>::new("n", &[3, 6, 5, 2], act, &mut rng).unwrap();
            let input = rand_tensor(&mut rng, &[4, 3]);
            let loss_of = |net: &Mlp<f64>| -> (Tape<f64>, Var) {
                let mut t = Tape::new();
                let x = t.constant(input.clone());
                let y = net.forward(&mut t, x).unwrap();
                let sq = t.square(y);
                let l = t.mean(sq);
                (t, l)
            };
            let (tape, loss) = loss_of(&net);
            let grads = tape.backward(loss).unwrap();
            for (name, p) in net.params().iter() {
                for i in 0..p.numel() {
                    let eval = |d: f64| {
                        let mut n2 = net.clone();
                        n2.params_mut().get_mut(name).unwrap().data_mut()[i] += d;
                        let (t, l) = loss_of(&n2);
                        t.value(l).item()
                    };
                    let fd = (eval(1e-5) - eval(-1e-5)) / 2e-5;
                    let a = grads.get(name).unwrap().data()[i];
                    let denom = fd.abs().max(a.abs());
                    assert!(
                        denom < 1e-9 || (fd - a).abs() / denom < 1e-6,
                        "{name}[{i}]: {fd} vs {a}"
                    );
                }
            }
        }
    }

    #[test]
    fn frozen_forward_gives_input_gradient_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::<f64>::new("q", &[2, 4, 1], Activation::Relu, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.param("x", &Tensor::row(vec![0.3, -0.4]));
        let y = net.forward_frozen(&mut tape, x).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.get("x").is_some());
    }
}
