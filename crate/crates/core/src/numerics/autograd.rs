//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every value produced during a forward computation
//! together with a [`Function`] that knows how to map an output adjoint back
//! onto its inputs. Nodes are appended in evaluation order, so a reverse scan
//! is a valid topological order for the backward pass.

use std::collections::HashMap;

use super::kernels::{self, dot, mm_abt_acc, mm_acc, mm_atb_acc};
use super::{ParamId, ParamStore, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// What a backward rule sees.
pub struct BackwardCtx<'a> {
    pub grad: &'a Tensor,
    pub output: &'a Tensor,
    pub inputs: Vec<&'a Tensor>,
    /// Whether each input needs a gradient; rules may skip work for `false`.
    pub needs: Vec<bool>,
}

/// Backward rule of a recorded op. Returns one entry per input.
pub trait Function: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    func: Option<Box<dyn Function>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Tape variables of a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bindings(Vec<Var>);

impl Bindings {
    pub fn get(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: HashMap<Var, Tensor>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(id, t)| (*id, t))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, t)| t)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { value, inputs: Vec::new(), func: None, requires_grad, param });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false, None)
    }

    /// A free leaf; when `requires_grad` its gradient is reported by
    /// [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push_leaf(value, requires_grad, None)
    }

    /// Binds a parameter from `store`; it requires a gradient iff trainable.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.push_leaf(p.value.clone(), p.trainable, Some(id))
    }

    /// Binds every parameter of `store`, in id order.
    pub fn bind_all(&mut self, store: &ParamStore) -> Bindings {
        Bindings(store.iter().map(|(id, _)| self.param(store, id)).collect())
    }

    /// Records an op output. Fails if `value` holds NaN or infinities.
    pub fn record(&mut self, func: impl Function + 'static, inputs: &[Var], value: Tensor) -> Result<Var> {
        value.ensure_finite(func.name())?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let func: Option<Box<dyn Function>> = if requires_grad { Some(Box::new(func)) } else { None };
        self.nodes.push(Node { value, inputs: inputs.to_vec(), func, requires_grad, param: None });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`. A tape can be swept only once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let lv = &self.nodes[loss.0].value;
        if !lv.is_scalar() {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        self.consumed = true;
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(func) = node.func.as_ref() else { continue };
            let Some(grad) = adj[i].take() else { continue };
            let ctx = BackwardCtx {
                grad: &grad,
                output: &node.value,
                inputs: node.inputs.iter().map(|v| &self.nodes[v.0].value).collect(),
                needs: node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect(),
            };
            let grads = func.backward(&ctx)?;
            for (inp, g) in node.inputs.iter().zip(grads) {
                let Some(g) = g else { continue };
                if !self.nodes[inp.0].requires_grad {
                    continue;
                }
                match &mut adj[inp.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            // keep leaf adjoints, drop intermediate ones as we go
            adj[i] = None;
        }
        let mut out = Gradients::default();
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if node.func.is_some() || !node.requires_grad || !node.inputs.is_empty() {
                continue;
            }
            let g = adj[i].take().unwrap_or_else(|| Tensor::zeros(node.value.shape()));
            match node.param {
                Some(id) => out.params.push((id, g)),
                None => {
                    out.leaves.insert(Var(i), g);
                }
            }
        }
        Ok(out)
    }

    // ---- generic ops -----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = kernels::matmul(self.value(a), self.value(b))?;
        self.record(MatMul, &[a, b], value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("add", format!("{:?} + {:?}", x.shape(), y.shape())));
        }
        let value = Tensor::from_fn(x.shape(), |i| x.data()[i] + y.data()[i]);
        self.record(Add, &[a, b], value)
    }

    /// `x[m×n] + bias[n]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        xv.expect_rank(2, "add_bias")?;
        let n = xv.cols();
        if bv.len() != n {
            return Err(Error::shape("add_bias", format!("{:?} + {:?}", xv.shape(), bv.shape())));
        }
        let value = Tensor::from_fn(xv.shape(), |i| xv.data()[i] + bv.data()[i % n]);
        self.record(AddBias, &[x, bias], value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("mul", format!("{:?} * {:?}", x.shape(), y.shape())));
        }
        let value = Tensor::from_fn(x.shape(), |i| x.data()[i] * y.data()[i]);
        self.record(Mul, &[a, b], value)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let x = self.value(a);
        let value = Tensor::from_fn(x.shape(), |i| x.data()[i] * s);
        self.record(Scale(s), &[a], value)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let value = kernels::gelu(self.value(a));
        self.record(Gelu, &[a], value)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.record(Sum(1.0), &[a], value)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let s = 1.0 / x.len() as f64;
        let value = Tensor::scalar(x.sum() * s);
        self.record(Sum(s), &[a], value)
    }

    /// Row-wise RMS normalisation of `x[n×d]` with learned `gain[d]`.
    pub fn rmsnorm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let (xv, gv) = (self.value(x), self.value(gain));
        xv.expect_rank(2, "rmsnorm")?;
        if gv.len() != xv.cols() {
            return Err(Error::shape("rmsnorm", format!("{:?} gain {:?}", xv.shape(), gv.shape())));
        }
        let (out, inv) = kernels::rmsnorm(xv.data(), gv.data(), xv.rows(), eps);
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        self.record(RmsNorm { inv }, &[x, gain], value)
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        t.expect_rank(2, "gather_rows")?;
        if let Some(bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {}", t.rows())));
        }
        let d = t.cols();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        self.record(GatherRows { ids: ids.to_vec() }, &[table], value)
    }

    /// Builds an `[n×d]` matrix whose row `positions[s][r]` is row `r` of
    /// `sources[s]`. Every output row must be written exactly once.
    pub fn assemble_rows(&mut self, n: usize, sources: &[(Var, Vec<usize>)]) -> Result<Var> {
        let d = match sources.first() {
            Some((v, _)) => self.value(*v).cols(),
            None => return Err(Error::shape("assemble_rows", "no sources")),
        };
        let mut out = vec![0.0; n * d];
        let mut seen = vec![false; n];
        for (v, pos) in sources {
            let t = self.value(*v);
            if t.cols() != d || t.rows() != pos.len() {
                return Err(Error::shape("assemble_rows", format!("source {:?} for {} rows", t.shape(), pos.len())));
            }
            for (r, &p) in pos.iter().enumerate() {
                if p >= n || seen[p] {
                    return Err(Error::shape("assemble_rows", format!("bad or repeated target row {p}")));
                }
                seen[p] = true;
                out[p * d..(p + 1) * d].copy_from_slice(t.row(r));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::shape("assemble_rows", "output rows left unset"));
        }
        let value = Tensor::new(vec![n, d], out)?;
        let vars: Vec<Var> = sources.iter().map(|(v, _)| *v).collect();
        let positions = sources.iter().map(|(_, p)| p.clone()).collect();
        self.record(AssembleRows { positions }, &vars, value)
    }

    /// Per-head concatenation: head `h` of the output is `[a_h ; b_h]`.
    pub fn interleave_heads(&mut self, a: Var, b: Var, heads: usize) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() || av.cols() % heads != 0 || bv.cols() % heads != 0 {
            return Err(Error::shape("interleave_heads", format!("{:?} | {:?}", av.shape(), bv.shape())));
        }
        let (da, db) = (av.cols() / heads, bv.cols() / heads);
        let n = av.rows();
        let w = da + db;
        let mut out = vec![0.0; n * heads * w];
        for r in 0..n {
            for h in 0..heads {
                let o = r * heads * w + h * w;
                out[o..o + da].copy_from_slice(&av.row(r)[h * da..(h + 1) * da]);
                out[o + da..o + w].copy_from_slice(&bv.row(r)[h * db..(h + 1) * db]);
            }
        }
        let value = Tensor::new(vec![n, heads * w], out)?;
        self.record(InterleaveHeads { heads, da, db }, &[a, b], value)
    }

    /// Strided non-overlapping convolution, see [`kernels::conv2d`].
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        let (iv, kv, bv) = (self.value(input), self.value(kernel), self.value(bias));
        let d = kernels::conv_dims(iv, kv, bv, stride)?;
        let cols = kernels::im2col(iv.data(), d.c_in, d.h, d.w, d.k);
        let value = kernels::conv2d_from_cols(&cols, kv, bv, &d);
        self.record(Conv2d { cols, dims: d }, &[input, kernel, bias], value)
    }

    /// `[C×h×w]` feature map to `[h·w × C]` token rows (row-major over h, w).
    pub fn chw_to_tokens(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        xv.expect_rank(3, "chw_to_tokens")?;
        let (c, p) = (xv.shape()[0], xv.shape()[1] * xv.shape()[2]);
        let value = Tensor::new(vec![c, p], xv.data().to_vec())?.transpose();
        self.record(ChwToTokens { shape: xv.shape().to_vec() }, &[x], value)
    }

    /// Mean cross-entropy of `logits[n×V]` over rows with a target.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let lv = self.value(logits);
        lv.expect_rank(2, "cross_entropy")?;
        if targets.len() != lv.rows() {
            return Err(Error::shape("cross_entropy", format!("{} targets for {} rows", targets.len(), lv.rows())));
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(Error::NoSupervised);
        }
        let v = lv.cols();
        let mut probs = Vec::with_capacity(count * v);
        let mut total = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= v {
                return Err(Error::shape("cross_entropy", format!("target {t} outside vocab {v}")));
            }
            let row = lv.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            total += z.ln() + max - row[t];
            probs.extend(row.iter().map(|x| (x - max).exp() / z));
        }
        let value = Tensor::scalar(total / count as f64);
        self.record(CrossEntropy { targets: targets.to_vec(), probs, count }, &[logits], value)
    }
}

struct MatMul;
impl Function for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (a, b, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let da = ctx.needs[0].then(|| {
            let mut out = vec![0.0; m * k];
            mm_abt_acc(g.data(), b.data(), &mut out, m, n, k);
            Tensor::new(vec![m, k], out).unwrap()
        });
        let db = ctx.needs[1].then(|| {
            let mut out = vec![0.0; k * n];
            mm_atb_acc(a.data(), g.data(), &mut out, m, k, n);
            Tensor::new(vec![k, n], out).unwrap()
        });
        Ok(vec![da, db])
    }
}

struct Add;
impl Function for Add {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![ctx.needs[0].then(|| ctx.grad.clone()), ctx.needs[1].then(|| ctx.grad.clone())])
    }
}

struct AddBias;
impl Function for AddBias {
    fn name(&self) -> &'static str {
        "add_bias"
    }
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let g = ctx.grad;
        let db = ctx.needs[1].then(|| {
            let n = g.cols();
            let mut out = vec![0.0; n];
            for r in 0..g.rows() {
                for (o, v) in out.iter_mut().zip(g.row(r)) {
                    *o += v;
                }
            }
            Tensor::new(ctx.inputs[1].shape().to_vec(), out).unwrap()
        });
        Ok(vec![ctx.needs[0].then(|| g.clone()), db])
    }
}

struct Mul;
impl Function for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (a, b, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
        Ok(vec![
            ctx.needs[0].then(|| Tensor::from_fn(a.shape(), |i| g.data()[i] * b.data()[i])),
            ctx.needs[1].then(|| Tensor::from_fn(b.shape(), |i| g.data()[i] * a.data()[i])),
        ])
    }
}

struct Scale(f64);
impl Function for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let g = ctx.grad;
        Ok(vec![Some(Tensor::from_fn(g.shape(), |i| g.data()[i] * self.0))])
    }
}

struct Gelu;
impl Function for Gelu {
    fn name(&self) -> &'static str {
        "gelu"
    }
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (x, g) = (ctx.inputs[0], ctx.grad);
        Ok(vec![Some(Tensor::from_fn(x.shape(), |i| g.data()[i] * kernels::gelu_grad_scalar(x.data()[i])))])
    }
}

struct Sum(f64);
impl Function for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(Tensor::full(ctx.inputs[0].shape(), ctx.grad.item() * self.0))])
    }
}

struct RmsNorm {
    inv: Vec<f64>,
}
impl Function for RmsNorm {
    fn name(&self) -> &'static str {
        "rmsnorm"
    }
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (x, gain, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
        let (n, d) = (x.rows(), x.cols());
        let mut dx = vec![0.0; n * d];
        let mut dgain = vec![0.0; d];
        let mut dxhat = vec![0.0; d];
        for r in 0..n {
            let ir = self.inv[r];
            let (xr, gr) = (x.row(r), g.row(r));
            for c in 0..d {
                dgain[c] += gr[c] * xr[c] * ir;
                dxhat[c] = gr[c] * gain.data()[c];
            }
            let proj = dot(&dxhat, xr) * ir / d as f64;
            for c in 0..d {
                dx[r * d + c] = ir * (dxhat[c] - xr[c] * ir * proj);
            }
        }
        Ok(vec![
            ctx.needs[0].then(|| Tensor::new(vec![n, d], dx).unwrap()),
            ctx.needs[1].then(|| Tensor::new(gain.shape().to_vec(), dgain).unwrap()),
        ])
    }
}

struct GatherRows {
    ids: Vec<usize>,
}
impl Function for GatherRows {
    fn name(&self) -> &'static str {
        "gather_rows"
    }
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let mut out = Tensor::zeros(ctx.inputs[0].shape());
        for (r, &i) in self.ids.iter().enumerate() {
            for (o, v) in out.row_mut(i).iter_mut().zip(ctx.grad.row(r)) {
                *o += v;
            }
        }
        Ok(vec![Some(out)])
    }
}

struct AssembleRows {
    positions: Vec<Vec<usize>>,
}
impl Function for AssembleRows {
    fn name(&self) -> &'static str {
        "assemble_rows"
    }
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        Ok(self
            .positions
            .iter()
            .zip(&ctx.needs)
            .map(|(pos, &need)| {
                need.then(|| {
                    let d = ctx.grad.cols();
                    let mut data = Vec::with_capacity(pos.len() * d);
                    for &p in pos {
                        data.extend_from_slice(ctx.grad.row(p));
                    }
                    Tensor::new(vec![pos.len(), d], data).unwrap()
                })
            })
            .collect())
    }
}

struct InterleaveHeads {
    heads: usize,
    da: usize,
    db: usize,
}
impl Function for InterleaveHeads {
    fn name(&self) -> &'static str {
        "interleave_heads"
    }
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let g = ctx.grad;
        let n = g.rows();
        let (h, da, db) = (self.heads, self.da, self.db);
        let w = da + db;
        let mut ga = vec![0.0; n * h * da];
        let mut gb = vec![0.0; n * h * db];
        for r in 0..n {
            for k in 0..h {
                let src = &g.row(r)[k * w..(k + 1) * w];
                ga[r * h * da + k * da..r * h * da + (k + 1) * da].copy_from_slice(&src[..da]);
                gb[r * h * db + k * db..r * h * db + (k + 1) * db].copy_from_slice(&src[da..]);
            }
        }
        Ok(vec![
            ctx.needs[0].then(|| Tensor::new(vec![n, h * da], ga).unwrap()),
            ctx.needs[1].then(|| Tensor::new(vec![n, h * db], gb).unwrap()),
        ])
    }
}

struct Conv2d {
    cols: Vec<f64>,
    dims: kernels::ConvDims,
}
impl Function for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let d = &self.dims;
        let kernel = ctx.inputs[1];
        let p = (d.h / d.k) * (d.w / d.k);
        let ckk = d.c_in * d.k * d.k;
        let g = ctx.grad.data(); // [c_out × p]
        let dinput = ctx.needs[0].then(|| {
            let mut dcols = vec![0.0; p * ckk];
            mm_atb_acc(g, kernel.data(), &mut dcols, d.c_out, p, ckk);
            Tensor::new(vec![d.c_in, d.h, d.w], kernels::col2im(&dcols, d.c_in, d.h, d.w, d.k)).unwrap()
        });
        let dkernel = ctx.needs[1].then(|| {
            let mut dk = vec![0.0; d.c_out * ckk];
            mm_acc(g, &self.cols, &mut dk, d.c_out, p, ckk);
            Tensor::new(kernel.shape().to_vec(), dk).unwrap()
        });
        let dbias = ctx.needs[2].then(|| {
            Tensor::from_fn(&[d.c_out], |o| g[o * p..(o + 1) * p].iter().sum())
        });
        Ok(vec![dinput, dkernel, dbias])
    }
}

struct ChwToTokens {
    shape: Vec<usize>,
}
impl Function for ChwToTokens {
    fn name(&self) -> &'static str {
        "chw_to_tokens"
    }
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(ctx.grad.transpose().reshape(&self.shape)?)])
    }
}

struct CrossEntropy {
    targets: Vec<Option<usize>>,
    probs: Vec<f64>,
    count: usize,
}
impl Function for CrossEntropy {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let logits = ctx.inputs[0];
        let v = logits.cols();
        let s = ctx.grad.item() / self.count as f64;
        let mut out = Tensor::zeros(logits.shape());
        let mut k = 0;
        for (r, t) in self.targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            let p = &self.probs[k * v..(k + 1) * v];
            let row = out.row_mut(r);
            for c in 0..v {
                row[c] = s * p[c];
            }
            row[t] -= s;
            k += 1;
        }
        Ok(vec![Some(out)])
    }
}
