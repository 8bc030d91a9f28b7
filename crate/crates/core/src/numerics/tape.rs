//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation appends a node holding its output value and the inputs it
//! read. [`Tape::backward`] walks the nodes in reverse and applies each
//! node's backward rule, accumulating into the gradient buffers of every
//! node that (transitively) depends on a leaf created with
//! `requires_grad = true`.
//!
//! ```
//! use atcn::numerics::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0), true);
//! let y = tape.mul(x, x).unwrap();
//! tape.backward(y).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[6.0]);
//! ```

use rand::Rng;

use super::ops::{self, leaky_relu_scalar};
use super::Tensor;
use crate::error::{Error, Result};

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
    MatMul(Var, Var),
    Transpose(Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    Row(Var, usize),
    CausalConv { x: Var, filters: Var, dilation: usize },
    Dropout(Var, Vec<f64>),
    Sum(Var),
    Rmse(Var, Var),
    PairwiseDynamic { p: Var, q: Var, a: Var, slope: f64 },
    OuterAdd(Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records a forward pass so it can be differentiated.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, inputs: &[Var], op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        self.push("matmul", out, &[a, b], Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        self.push("transpose", out, &[x], Op::Transpose(x))
    }

    /// Adds a length-`p` bias to every row of an `n x p` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let p = xv.cols();
        let bv = self.value(bias);
        if bv.len() != p || xv.ndim() != 2 {
            return Err(Error::dim(
                "add_bias",
                format!("bias of {} entries for input {:?}", bv.len(), xv.shape()),
            ));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(p) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push("add_bias", out, &[x, bias], Op::AddBias(x, bias))
    }

    /// `x [n x d_in] * weight [d_in x d_out] + bias [d_out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let h = self.matmul(x, weight)?;
        self.add_bias(h, bias)
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim(op, format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push("add", out, &[a, b], Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push("sub", out, &[a, b], Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push("mul", out, &[a, b], Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = map(self.value(x), |v| v * factor);
        self.push("scale", out, &[x], Op::Scale(x, factor))
    }

    /// Same values, new shape.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", out, &[x], Op::Reshape(x))
    }

    /// Views any tensor as a 1-D vector.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        self.reshape(x, &[n])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let out = ops::leaky_relu(self.value(x), slope);
        self.push("leaky_relu", out, &[x], Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = ops::sigmoid(self.value(x));
        self.push("sigmoid", out, &[x], Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = map(self.value(x), f64::tanh);
        self.push("tanh", out, &[x], Op::Tanh(x))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let out = ops::softmax_rows(self.value(x))?;
        self.push("softmax_rows", out, &[x], Op::SoftmaxRows(x))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::dim("concat_cols", "nothing to concatenate"));
        };
        let rows = self.value(first).dims2("concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2("concat_cols")?;
            if r != rows {
                return Err(Error::dim("concat_cols", format!("row counts {rows} and {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], out)?;
        self.push("concat_cols", out, parts, Op::ConcatCols(parts.to_vec()))
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2("slice_cols")?;
        if start > end || end > c {
            return Err(Error::dim("slice_cols", format!("[{start}, {end}) of {c} columns")));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            out.extend_from_slice(&xv.row(i)[start..end]);
        }
        let out = Tensor::new(vec![r, end - start], out)?;
        self.push("slice_cols", out, &[x], Op::SliceCols(x, start, end))
    }

    /// Row `index` of a matrix as a `1 x cols` matrix.
    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2("row")?;
        if index >= r {
            return Err(Error::dim("row", format!("row {index} of {r}")));
        }
        let out = Tensor::new(vec![1, c], self.value(x).row(index).to_vec())?;
        self.push("row", out, &[x], Op::Row(x, index))
    }

    /// See [`ops::causal_dilated_conv1d`].
    pub fn causal_conv1d(&mut self, x: Var, filters: Var, dilation: usize) -> Result<Var> {
        let out = ops::causal_dilated_conv1d(self.value(x), self.value(filters), dilation)?;
        self.push(
            "causal_dilated_conv1d",
            out,
            &[x, filters],
            Op::CausalConv { x, filters, dilation },
        )
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(xv.shape().to_vec(), data)?;
        self.push("dropout", out, &[x], Op::Dropout(x, mask))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(total), &[x], Op::Sum(x))
    }

    /// `sqrt(mean((pred - target)^2))` as a scalar. Gradient at zero residual is 0.
    pub fn rmse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::dim("rmse", format!("{:?} vs {:?}", p.shape(), t.shape())));
        }
        let r = ops::rmse(p.data(), t.data());
        self.push("rmse", Tensor::scalar(r), &[pred, target], Op::Rmse(pred, target))
    }

    /// Pairwise dynamic attention scores from pre-projected halves:
    /// `e[i, j] = sum_k a[k] * LeakyReLU(p[i, k] + q[j, k])`.
    ///
    /// With `p = X W_left^T` and `q = X W_right^T` this is
    /// `a^T LeakyReLU(W [x_i || x_j])`.
    pub fn pairwise_dynamic(&mut self, p: Var, q: Var, a: Var, slope: f64) -> Result<Var> {
        let (n, h) = self.value(p).dims2("pairwise_dynamic")?;
        let (n2, h2) = self.value(q).dims2("pairwise_dynamic")?;
        let av = self.value(a);
        if n != n2 || h != h2 || av.len() != h {
            return Err(Error::dim(
                "pairwise_dynamic",
                format!("p {n}x{h}, q {n2}x{h2}, a {}", av.len()),
            ));
        }
        let (pd, qd, ad) = (self.value(p).data(), self.value(q).data(), av.data());
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let pi = &pd[i * h..(i + 1) * h];
            for j in 0..n {
                let qj = &qd[j * h..(j + 1) * h];
                let mut e = 0.0;
                for k in 0..h {
                    e += ad[k] * leaky_relu_scalar(pi[k] + qj[k], slope);
                }
                out[i * n + j] = e;
            }
        }
        let out = Tensor::new(vec![n, n], out)?;
        self.push("pairwise_dynamic", out, &[p, q, a], Op::PairwiseDynamic { p, q, a, slope })
    }

    /// `e[i, j] = s[i] + t[j]` for column vectors given as `n x 1` matrices.
    pub fn outer_add(&mut self, s: Var, t: Var) -> Result<Var> {
        let (sv, tv) = (self.value(s), self.value(t));
        let (n, m) = (sv.len(), tv.len());
        let mut out = Vec::with_capacity(n * m);
        for &si in sv.data() {
            out.extend(tv.data().iter().map(|tj| si + tj));
        }
        let out = Tensor::new(vec![n, m], out)?;
        self.push("outer_add", out, &[s, t], Op::OuterAdd(s, t))
    }

    /// Signs of every LeakyReLU pre-activation recorded on the tape.
    ///
    /// Finite-difference checks use this to detect when a perturbation moved
    /// some unit across the non-differentiable point at zero.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match node.op {
                Op::LeakyRelu(x, _) => out.extend(self.value(x).data().iter().map(|&v| v >= 0.0)),
                Op::PairwiseDynamic { p, q, .. } => {
                    let (pv, qv) = (self.value(p), self.value(q));
                    let (n, h) = (pv.rows(), pv.cols());
                    for i in 0..n {
                        for j in 0..n {
                            for k in 0..h {
                                out.push(pv.data()[i * h + k] + qv.data()[j * h + k] >= 0.0);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Populates gradients of the scalar `loss` for every node that requires them.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let mut acc = |v: Var, contrib: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            contrib(slot);
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                let (n, k) = (av.rows(), av.cols());
                let p = bv.cols();
                acc(a, &|da| {
                    for i in 0..n {
                        for kk in 0..k {
                            let brow = &bv.data()[kk * p..(kk + 1) * p];
                            let grow = &g[i * p..(i + 1) * p];
                            da[i * k + kk] += brow.iter().zip(grow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(b, &|db| {
                    for i in 0..n {
                        let grow = &g[i * p..(i + 1) * p];
                        for kk in 0..k {
                            let a_ik = av.data()[i * k + kk];
                            for (d, gv) in db[kk * p..(kk + 1) * p].iter_mut().zip(grow) {
                                *d += a_ik * gv;
                            }
                        }
                    }
                });
            }
            &Op::Transpose(x) => {
                let (r, c) = (self.value(x).rows(), self.value(x).cols());
                acc(x, &|dx| {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            &Op::AddBias(x, b) => {
                let p = self.value(b).len();
                acc(x, &|dx| add_into(dx, g));
                acc(b, &|db| {
                    for row in g.chunks(p) {
                        add_into(db, row);
                    }
                });
            }
            &Op::Add(a, b) => {
                acc(a, &|d| add_into(d, g));
                acc(b, &|d| add_into(d, g));
            }
            &Op::Sub(a, b) => {
                acc(a, &|d| add_into(d, g));
                acc(b, &|d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                acc(a, &|d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(bv) {
                        *d += g * y;
                    }
                });
                acc(b, &|d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(av) {
                        *d += g * x;
                    }
                });
            }
            &Op::Scale(x, f) => acc(x, &|d| d.iter_mut().zip(g).for_each(|(d, g)| *d += f * g)),
            &Op::Reshape(x) => acc(x, &|d| add_into(d, g)),
            &Op::LeakyRelu(x, slope) => {
                let xv = self.value(x).data();
                acc(x, &|d| {
                    for ((d, g), &v) in d.iter_mut().zip(g).zip(xv) {
                        *d += if v >= 0.0 { *g } else { slope * g };
                    }
                });
            }
            &Op::Sigmoid(x) => acc(x, &|d| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                    *d += g * y * (1.0 - y);
                }
            }),
            &Op::Tanh(x) => acc(x, &|d| {
                for ((d, g), y) in d.iter_mut().zip(g).zip(y) {
                    *d += g * (1.0 - y * y);
                }
            }),
            &Op::SoftmaxRows(x) => {
                let c = node.value.cols();
                acc(x, &|d| {
                    for ((drow, grow), yrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((d, g), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (g - dot);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    acc(p, &|d| {
                        for r in 0..rows {
                            add_into(&mut d[r * c..(r + 1) * c], &g[r * total + offset..r * total + offset + c]);
                        }
                    });
                    offset += c;
                }
            }
            &Op::SliceCols(x, start, end) => {
                let c = self.value(x).cols();
                let w = end - start;
                acc(x, &|d| {
                    for (r, grow) in g.chunks(w).enumerate() {
                        add_into(&mut d[r * c + start..r * c + end], grow);
                    }
                });
            }
            &Op::Row(x, index) => {
                let c = self.value(x).cols();
                acc(x, &|d| add_into(&mut d[index * c..(index + 1) * c], g));
            }
            &Op::CausalConv { x, filters, dilation } => {
                let (dx, df) =
                    ops::causal_dilated_conv1d_backward(self.value(x), self.value(filters), dilation, g);
                acc(x, &|d| add_into(d, &dx));
                acc(filters, &|d| add_into(d, &df));
            }
            Op::Dropout(x, mask) => acc(*x, &|d| {
                for ((d, g), m) in d.iter_mut().zip(g).zip(mask) {
                    *d += g * m;
                }
            }),
            &Op::Sum(x) => acc(x, &|d| d.iter_mut().for_each(|d| *d += g[0])),
            &Op::Rmse(pred, target) => {
                let r = y[0];
                if r == 0.0 {
                    return;
                }
                let (pv, tv) = (self.value(pred).data(), self.value(target).data());
                let scale = g[0] / (pv.len() as f64 * r);
                acc(pred, &|d| {
                    for ((d, p), t) in d.iter_mut().zip(pv).zip(tv) {
                        *d += scale * (p - t);
                    }
                });
                acc(target, &|d| {
                    for ((d, p), t) in d.iter_mut().zip(pv).zip(tv) {
                        *d -= scale * (p - t);
                    }
                });
            }
            &Op::PairwiseDynamic { p, q, a, slope } => {
                let (pv, qv, av) = (self.value(p).data(), self.value(q).data(), self.value(a).data());
                let h = av.len();
                let n = self.value(p).rows();
                let mut dp = vec![0.0; pv.len()];
                let mut dq = vec![0.0; qv.len()];
                let mut da = vec![0.0; h];
                for i in 0..n {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for k in 0..h {
                            let z = pv[i * h + k] + qv[j * h + k];
                            let (act, deriv) = if z >= 0.0 { (z, 1.0) } else { (slope * z, slope) };
                            da[k] += gij * act;
                            let dz = gij * av[k] * deriv;
                            dp[i * h + k] += dz;
                            dq[j * h + k] += dz;
                        }
                    }
                }
                acc(p, &|d| add_into(d, &dp));
                acc(q, &|d| add_into(d, &dq));
                acc(a, &|d| add_into(d, &da));
            }
            &Op::OuterAdd(s, t) => {
                let (n, m) = (node.value.rows(), node.value.cols());
                acc(s, &|d| {
                    for i in 0..n {
                        d[i] += g[i * m..(i + 1) * m].iter().sum::<f64>();
                    }
                });
                acc(t, &|d| {
                    for i in 0..n {
                        add_into(d, &g[i * m..(i + 1) * m]);
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).expect("shape preserved")
}
