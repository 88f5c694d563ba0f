//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive appends one node holding its forward value. `backward`
//! walks the nodes once in reverse order, so the tape is topologically sorted
//! by construction.

use std::borrow::Cow;
use std::sync::atomic::{AtomicU32, Ordering};

use crate::autodiff::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(0);

/// Handle to a node on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u32,
    idx: u32,
}

impl Var {
    fn index(self) -> usize {
        self.idx as usize
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatVec(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    OneMinus(usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Concat(Vec<usize>),
    Broadcast(usize),
    Sum(usize),
    Dot(usize, usize),
    AddN(Vec<usize>),
    Mean(Vec<usize>),
    L2Normalize {
        input: usize,
        norm: f64,
    },
    Cosine {
        a: usize,
        b: usize,
        norm_a: f64,
        norm_b: f64,
    },
    MaxOf {
        inputs: Vec<usize>,
        winner: usize,
    },
    ElemMax {
        inputs: Vec<usize>,
        winners: Vec<usize>,
    },
    SoftmaxXent {
        logits: usize,
        target: usize,
        probs: Vec<f64>,
    },
    Mask(usize, Vec<f64>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatVec(..) => "matvec",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::OneMinus(_) => "one_minus",
            Op::Scale(..) => "scale",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Concat(_) => "concat",
            Op::Broadcast(_) => "broadcast",
            Op::Sum(_) => "sum",
            Op::Dot(..) => "dot",
            Op::AddN(_) => "add_n",
            Op::Mean(_) => "mean",
            Op::L2Normalize { .. } => "l2_normalize",
            Op::Cosine { .. } => "cosine",
            Op::MaxOf { .. } => "max_of",
            Op::ElemMax { .. } => "elem_max",
            Op::SoftmaxXent { .. } => "softmax_xent",
            Op::Mask(..) => "mask",
        }
    }
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
}

/// Records primitive operations and their values for one forward pass.
///
/// Parameters and large inputs are borrowed rather than copied, so a tape
/// lives no longer than the [`ParamStore`] it reads from.
pub struct Tape<'a> {
    id: u32,
    nodes: Vec<Node<'a>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index() >= self.nodes.len() {
            return Err(Error::Graph(format!("variable {v:?} does not belong to this tape")));
        }
        Ok(v.index())
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var {
            tape: self.id,
            idx: (self.nodes.len() - 1) as u32,
        })
    }

    fn val(&self, i: usize) -> &[f64] {
        self.nodes[i].value.data()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.index()].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(Cow::Owned(t), Op::Input)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor) -> Result<Var> {
        self.push(Cow::Borrowed(t), Op::Input)
    }

    pub fn zeros(&mut self, len: usize) -> Var {
        self.constant(Tensor::zeros(&[len])).expect("zeros are finite")
    }

    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Result<Var> {
        self.push(Cow::Borrowed(store.get(id)), Op::Param(id))
    }

    /// Registers every parameter of `store`; the result is indexed by `ParamId.0`.
    pub fn bind(&mut self, store: &'a ParamStore) -> Result<Vec<Var>> {
        (0..store.len()).map(|i| self.param(store, ParamId(i))).collect()
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (wi, xi) = (self.check(w)?, self.check(x)?);
        let ws = self.nodes[wi].value.shape();
        let xlen = self.nodes[xi].value.len();
        if ws.len() != 2 || ws[1] != xlen {
            return Err(shape_err("matvec", format!("matrix {ws:?} times vector of {xlen}")));
        }
        let (rows, cols) = (ws[0], ws[1]);
        let wd = self.val(wi);
        let xd = self.val(xi);
        let out: Vec<f64> = (0..rows)
            .map(|r| wd[r * cols..(r + 1) * cols].iter().zip(xd).map(|(a, b)| a * b).sum())
            .collect();
        self.push(Cow::Owned(Tensor::vector(out)), Op::MatVec(wi, xi))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (la, lb) = (self.nodes[ai].value.len(), self.nodes[bi].value.len());
        if la != lb {
            return Err(shape_err(name, format!("lengths {la} and {lb}")));
        }
        let out: Vec<f64> = self.val(ai).iter().zip(self.val(bi)).map(|(x, y)| f(*x, *y)).collect();
        let shape = self.nodes[ai].value.shape().to_vec();
        self.push(Cow::Owned(Tensor::new(shape, out)?), op(ai, bi))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: fn(usize) -> Op) -> Result<Var> {
        let ai = self.check(a)?;
        let out: Vec<f64> = self.val(ai).iter().map(|x| f(*x)).collect();
        let shape = self.nodes[ai].value.shape().to_vec();
        self.push(Cow::Owned(Tensor::new(shape, out)?), op(ai))
    }

    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| 1.0 - x, Op::OneMinus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::tanh, Op::Tanh)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let ai = self.check(a)?;
        let out: Vec<f64> = self.val(ai).iter().map(|x| x * s).collect();
        let shape = self.nodes[ai].value.shape().to_vec();
        self.push(Cow::Owned(Tensor::new(shape, out)?), Op::Scale(ai, s))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let ai = self.check(a)?;
        if mask.len() != self.nodes[ai].value.len() {
            return Err(shape_err(
                "mask",
                format!("mask of {} for {}", mask.len(), self.nodes[ai].value.len()),
            ));
        }
        let out: Vec<f64> = self.val(ai).iter().zip(&mask).map(|(x, m)| x * m).collect();
        self.push(Cow::Owned(Tensor::vector(out)), Op::Mask(ai, mask))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat"));
        }
        let idx = parts.iter().map(|v| self.check(*v)).collect::<Result<Vec<_>>>()?;
        let out: Vec<f64> = idx.iter().flat_map(|&i| self.val(i).iter().copied()).collect();
        self.push(Cow::Owned(Tensor::vector(out)), Op::Concat(idx))
    }

    /// Repeats a scalar `len` times.
    pub fn broadcast(&mut self, a: Var, len: usize) -> Result<Var> {
        let ai = self.check(a)?;
        if !self.nodes[ai].value.is_scalar() {
            return Err(shape_err("broadcast", "input is not a scalar".into()));
        }
        let v = self.val(ai)[0];
        self.push(Cow::Owned(Tensor::vector(vec![v; len])), Op::Broadcast(ai))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let s = self.val(ai).iter().sum();
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Sum(ai))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        if self.nodes[ai].value.len() != self.nodes[bi].value.len() {
            return Err(shape_err("dot", "length mismatch".into()));
        }
        let s = self.val(ai).iter().zip(self.val(bi)).map(|(x, y)| x * y).sum();
        self.push(Cow::Owned(Tensor::scalar(s)), Op::Dot(ai, bi))
    }

    fn same_len_inputs(&self, xs: &[Var], op: &'static str) -> Result<(Vec<usize>, usize)> {
        if xs.is_empty() {
            return Err(Error::Empty(op));
        }
        let idx = xs.iter().map(|v| self.check(*v)).collect::<Result<Vec<_>>>()?;
        let len = self.nodes[idx[0]].value.len();
        if idx.iter().any(|&i| self.nodes[i].value.len() != len) {
            return Err(shape_err(op, "inputs differ in length".into()));
        }
        Ok((idx, len))
    }

    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let (idx, len) = self.same_len_inputs(xs, "add_n")?;
        let mut out = vec![0.0; len];
        for &i in &idx {
            for (o, v) in out.iter_mut().zip(self.val(i)) {
                *o += v;
            }
        }
        self.push(Cow::Owned(Tensor::vector(out)), Op::AddN(idx))
    }

    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        let (idx, len) = self.same_len_inputs(xs, "mean")?;
        let mut out = vec![0.0; len];
        for &i in &idx {
            for (o, v) in out.iter_mut().zip(self.val(i)) {
                *o += v;
            }
        }
        let n = idx.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        self.push(Cow::Owned(Tensor::vector(out)), Op::Mean(idx))
    }

    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let ai = self.check(a)?;
        let norm = self.nodes[ai].value.norm();
        if norm == 0.0 {
            return Err(Error::ZeroVector("l2_normalize"));
        }
        let out: Vec<f64> = self.val(ai).iter().map(|x| x / norm).collect();
        self.push(Cow::Owned(Tensor::vector(out)), Op::L2Normalize { input: ai, norm })
    }

    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        if self.nodes[ai].value.len() != self.nodes[bi].value.len() {
            return Err(shape_err("cosine", "length mismatch".into()));
        }
        let norm_a = self.nodes[ai].value.norm();
        let norm_b = self.nodes[bi].value.norm();
        if norm_a == 0.0 || norm_b == 0.0 {
            return Err(Error::ZeroVector("cosine"));
        }
        let d: f64 = self.val(ai).iter().zip(self.val(bi)).map(|(x, y)| x * y).sum();
        self.push(
            Cow::Owned(Tensor::scalar(d / (norm_a * norm_b))),
            Op::Cosine {
                a: ai,
                b: bi,
                norm_a,
                norm_b,
            },
        )
    }

    /// Maximum of scalar inputs; the first maximal input receives the gradient.
    pub fn max_of(&mut self, xs: &[Var]) -> Result<Var> {
        let (idx, len) = self.same_len_inputs(xs, "max_of")?;
        if len != 1 {
            return Err(shape_err("max_of", "inputs must be scalars".into()));
        }
        let mut winner = 0;
        for (k, &i) in idx.iter().enumerate() {
            if self.val(i)[0] > self.val(idx[winner])[0] {
                winner = k;
            }
        }
        let v = self.val(idx[winner])[0];
        self.push(Cow::Owned(Tensor::scalar(v)), Op::MaxOf { inputs: idx, winner })
    }

    /// Componentwise maximum over same-length vectors.
    pub fn elem_max(&mut self, xs: &[Var]) -> Result<Var> {
        let (idx, len) = self.same_len_inputs(xs, "elem_max")?;
        let mut winners = vec![0usize; len];
        let mut out = self.val(idx[0]).to_vec();
        for (k, &i) in idx.iter().enumerate().skip(1) {
            for (j, v) in self.val(i).iter().enumerate() {
                if *v > out[j] {
                    out[j] = *v;
                    winners[j] = k;
                }
            }
        }
        self.push(Cow::Owned(Tensor::vector(out)), Op::ElemMax { inputs: idx, winners })
    }

    /// Cross-entropy of `softmax(logits)` against class `target`.
    pub fn softmax_xent(&mut self, logits: Var, target: usize) -> Result<Var> {
        let li = self.check(logits)?;
        let z = self.val(li);
        if target >= z.len() {
            return Err(shape_err("softmax_xent", format!("target {target} out of {}", z.len())));
        }
        let probs = softmax(z);
        let loss = log_sum_exp(z) - z[target];
        self.push(
            Cow::Owned(Tensor::scalar(loss)),
            Op::SoftmaxXent {
                logits: li,
                target,
                probs,
            },
        )
    }

    /// Gradient of the scalar `output` with respect to every parameter of
    /// `store`. Parameters that never reached the tape get zeros.
    pub fn backward(&self, output: Var, store: &ParamStore) -> Result<Gradients> {
        let out = self.check(output)?;
        if !self.nodes[out].value.is_scalar() {
            return Err(Error::Graph(format!(
                "backward needs a scalar output, got shape {:?}",
                self.nodes[out].value.shape()
            )));
        }
        let mut grads = Gradients::zeros_like(store);
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; out + 1];
        adj[out] = Some(vec![1.0]);

        for i in (0..=out).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(id) => {
                    if id.0 >= store.len() || store.get(*id).shape() != self.nodes[i].value.shape() {
                        return Err(Error::Graph(format!("parameter {id:?} does not match the store")));
                    }
                    for (a, b) in grads.get_mut(*id).data_mut().iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::MatVec(w, x) => {
                    let shape = self.nodes[*w].value.shape();
                    let (rows, cols) = (shape[0], shape[1]);
                    let xd = self.val(*x);
                    let wd = self.val(*w);
                    let gw = accum(&mut adj, *w, rows * cols);
                    for r in 0..rows {
                        if g[r] == 0.0 {
                            continue;
                        }
                        for (gwv, xv) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xd) {
                            *gwv += g[r] * xv;
                        }
                    }
                    let gx = accum(&mut adj, *x, cols);
                    for r in 0..rows {
                        if g[r] == 0.0 {
                            continue;
                        }
                        for (gxv, wv) in gx.iter_mut().zip(&wd[r * cols..(r + 1) * cols]) {
                            *gxv += g[r] * wv;
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(accum(&mut adj, *a, g.len()), &g, 1.0);
                    add_into(accum(&mut adj, *b, g.len()), &g, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(accum(&mut adj, *a, g.len()), &g, 1.0);
                    add_into(accum(&mut adj, *b, g.len()), &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.val(*a), self.val(*b));
                    let ga = accum(&mut adj, *a, g.len());
                    for ((o, gi), y) in ga.iter_mut().zip(&g).zip(bv) {
                        *o += gi * y;
                    }
                    let gb = accum(&mut adj, *b, g.len());
                    for ((o, gi), x) in gb.iter_mut().zip(&g).zip(av) {
                        *o += gi * x;
                    }
                }
                Op::OneMinus(a) => add_into(accum(&mut adj, *a, g.len()), &g, -1.0),
                Op::Scale(a, s) => add_into(accum(&mut adj, *a, g.len()), &g, *s),
                Op::Sigmoid(a) => {
                    let y = self.val(i);
                    let ga = accum(&mut adj, *a, g.len());
                    for ((o, gi), yv) in ga.iter_mut().zip(&g).zip(y) {
                        *o += gi * yv * (1.0 - yv);
                    }
                }
                Op::Tanh(a) => {
                    let y = self.val(i);
                    let ga = accum(&mut adj, *a, g.len());
                    for ((o, gi), yv) in ga.iter_mut().zip(&g).zip(y) {
                        *o += gi * (1.0 - yv * yv);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.nodes[p].value.len();
                        add_into(accum(&mut adj, p, n), &g[offset..offset + n], 1.0);
                        offset += n;
                    }
                }
                Op::Broadcast(a) => {
                    let s: f64 = g.iter().sum();
                    accum(&mut adj, *a, 1)[0] += s;
                }
                Op::Sum(a) => {
                    let n = self.nodes[*a].value.len();
                    accum(&mut adj, *a, n).iter_mut().for_each(|o| *o += g[0]);
                }
                Op::Dot(a, b) => {
                    let n = g.len().max(self.nodes[*a].value.len());
                    let (av, bv) = (self.val(*a), self.val(*b));
                    add_into(accum(&mut adj, *a, n), bv, g[0]);
                    add_into(accum(&mut adj, *b, n), av, g[0]);
                }
                Op::AddN(xs) => {
                    for &x in xs {
                        add_into(accum(&mut adj, x, g.len()), &g, 1.0);
                    }
                }
                Op::Mean(xs) => {
                    let w = 1.0 / xs.len() as f64;
                    for &x in xs {
                        add_into(accum(&mut adj, x, g.len()), &g, w);
                    }
                }
                Op::L2Normalize { input, norm } => {
                    let y = self.val(i);
                    let yg: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
                    let ga = accum(&mut adj, *input, g.len());
                    for ((o, gi), yv) in ga.iter_mut().zip(&g).zip(y) {
                        *o += (gi - yv * yg) / norm;
                    }
                }
                Op::Cosine { a, b, norm_a, norm_b } => {
                    let s = self.val(i)[0];
                    let (av, bv) = (self.val(*a), self.val(*b));
                    let n = av.len();
                    let inv = 1.0 / (norm_a * norm_b);
                    let ga = accum(&mut adj, *a, n);
                    for k in 0..n {
                        ga[k] += g[0] * (bv[k] * inv - s * av[k] / (norm_a * norm_a));
                    }
                    let gb = accum(&mut adj, *b, n);
                    for k in 0..n {
                        gb[k] += g[0] * (av[k] * inv - s * bv[k] / (norm_b * norm_b));
                    }
                }
                Op::MaxOf { inputs, winner } => {
                    accum(&mut adj, inputs[*winner], 1)[0] += g[0];
                }
                Op::ElemMax { inputs, winners } => {
                    for (j, &k) in winners.iter().enumerate() {
                        accum(&mut adj, inputs[k], g.len())[j] += g[j];
                    }
                }
                Op::SoftmaxXent { logits, target, probs } => {
                    let gl = accum(&mut adj, *logits, probs.len());
                    for (k, p) in probs.iter().enumerate() {
                        let onehot = if k == *target { 1.0 } else { 0.0 };
                        gl[k] += g[0] * (p - onehot);
                    }
                }
                Op::Mask(a, m) => {
                    let ga = accum(&mut adj, *a, g.len());
                    for ((o, gi), mv) in ga.iter_mut().zip(&g).zip(m) {
                        *o += gi * mv;
                    }
                }
            }
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("backward"));
        }
        Ok(grads)
    }
}

fn accum(adj: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut Vec<f64> {
    adj[i].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], w: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += w * s;
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

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_identity() {
        let store = ParamStore::new();
        let _ = &store;
        let mut tape = Tape::new();
        let w = tape
            .constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        let x = tape.constant(Tensor::vector(vec![3.0, 4.0])).unwrap();
        let y = tape.matvec(w, x).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 4.0]);
    }

    #[test]
    fn sigmoid_and_tanh_values() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(vec![0.0, 1.0])).unwrap();
        let s = tape.sigmoid(z).unwrap();
        let t = tape.tanh(z).unwrap();
        assert_eq!(tape.value(s).data()[0], 0.5);
        // tanh(1) = (e^2 - 1)/(e^2 + 1), evaluated independently
        let e2 = std::f64::consts::E * std::f64::consts::E;
        let expected = (e2 - 1.0) / (e2 + 1.0);
        assert!((tape.value(t).data()[1] - expected).abs() < 1e-15);
        assert!((tape.value(t).data()[1] - 0.761_594_155_955_764_9).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap()).unwrap();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(tape.matvec(w, x), Err(Error::Shape { .. })));
        let y = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        assert!(matches!(tape.add(x, y), Err(Error::Shape { .. })));
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1e300])).unwrap();
        assert!(matches!(tape.mul(x, x), Err(Error::NonFinite("mul"))));
    }

    #[test]
    fn square_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let x = tape.param(&store, id).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let f = tape.sum(sq).unwrap();
        let g = tape.backward(f, &store).unwrap();
        assert_eq!(g.get(id).data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::vector(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let _x = tape.param(&store, id).unwrap();
        let c = tape.constant(Tensor::scalar(3.0)).unwrap();
        let g = tape.backward(c, &store).unwrap();
        assert_eq!(g.get(id).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_vectors_and_foreign_vars() {
        let store = ParamStore::new();
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(tape.backward(v, &store), Err(Error::Graph(_))));
        let mut other = Tape::new();
        let s = other.constant(Tensor::scalar(1.0)).unwrap();
        assert!(matches!(tape.backward(s, &store), Err(Error::Graph(_))));
    }

    #[test]
    fn cosine_rejects_zero_vector() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![0.0, 0.0])).unwrap();
        let b = tape.constant(Tensor::vector(vec![1.0, 0.0])).unwrap();
        assert!(matches!(tape.cosine(a, b), Err(Error::ZeroVector(_))));
    }
}
