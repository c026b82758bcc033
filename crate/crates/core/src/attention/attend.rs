use std::sync::Arc;

use super::cache::LayerKV;
use super::mask::{mask_rows, AttentionMask};
use crate::numerics::kernels::{gemm_acc, matmul, softmax_row_masked};
use crate::numerics::{BackwardCtx, Bindings, Function, ParamId, ParamStore, Tape, Tensor, Var};
use crate::rope::{RopeConfig, RopeTable};
use crate::serializer::SequenceLayout;
use crate::{Error, Result};

/// Parameter handles of one attention layer.
///
/// Queries and keys are `[T | H | W]` per head: the temporal block comes from
/// `q`/`k` (width `d_t` per head), the spatial blocks from the separate
/// `qk_spatial` projections. Values and the output projection use the
/// temporal width only.
#[derive(Clone, Debug)]
pub struct AttentionLayer {
    pub q: ParamId,
    pub k: ParamId,
    pub v: ParamId,
    pub o: ParamId,
    pub q_spatial: Option<ParamId>,
    pub k_spatial: Option<ParamId>,
    pub heads: usize,
    pub rope: RopeConfig,
}

/// Borrowed weights for the tape-free path.
#[derive(Clone, Copy)]
pub struct AttentionWeights<'a> {
    pub q: &'a Tensor,
    pub k: &'a Tensor,
    pub v: &'a Tensor,
    pub o: &'a Tensor,
    pub q_spatial: Option<&'a Tensor>,
    pub k_spatial: Option<&'a Tensor>,
    pub heads: usize,
    pub rope: RopeConfig,
}

impl AttentionLayer {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        d_model: usize,
        heads: usize,
        rope: RopeConfig,
        init: &mut impl FnMut(&[usize]) -> Tensor,
    ) -> Self {
        let dt = heads * rope.d_t;
        let ds = heads * rope.spatial_dim();
        let spatial = ds > 0;
        Self {
            q: store.add(format!("{prefix}.q"), init(&[d_model, dt])),
            k: store.add(format!("{prefix}.k"), init(&[d_model, dt])),
            v: store.add(format!("{prefix}.v"), init(&[d_model, dt])),
            o: store.add(format!("{prefix}.o"), init(&[dt, d_model])),
            q_spatial: spatial.then(|| store.add(format!("{prefix}.qk_spatial.q"), init(&[d_model, ds]))),
            k_spatial: spatial.then(|| store.add(format!("{prefix}.qk_spatial.k"), init(&[d_model, ds]))),
            heads,
            rope,
        }
    }

    pub fn weights<'a>(&self, store: &'a ParamStore) -> AttentionWeights<'a> {
        AttentionWeights {
            q: store.value(self.q),
            k: store.value(self.k),
            v: store.value(self.v),
            o: store.value(self.o),
            q_spatial: self.q_spatial.map(|id| store.value(id)),
            k_spatial: self.k_spatial.map(|id| store.value(id)),
            heads: self.heads,
            rope: self.rope,
        }
    }

    /// Full-sequence attention on the tape.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        vars: &Bindings,
        x: Var,
        rope: &Arc<RopeTable>,
        mask: &Arc<AttentionMask>,
    ) -> Result<Var> {
        let h = self.heads;
        let project = |tape: &mut Tape, t: ParamId, s: Option<ParamId>| -> Result<Var> {
            let temporal = tape.matmul(x, vars.get(t))?;
            let full = match s {
                Some(s) => {
                    let spatial = tape.matmul(x, vars.get(s))?;
                    tape.interleave_heads(temporal, spatial, h)?
                }
                None => temporal,
            };
            tape.rope(full, rope.clone(), h)
        };
        let q = project(tape, self.q, self.q_spatial)?;
        let k = project(tape, self.k, self.k_spatial)?;
        let v = tape.matmul(x, vars.get(self.v))?;
        let a = tape.attention(q, k, v, mask.clone(), h, self.rope.head_dim(), self.rope.d_t)?;
        tape.matmul(a, vars.get(self.o))
    }
}

fn interleave(a: &Tensor, b: Option<&Tensor>, heads: usize) -> Tensor {
    let Some(b) = b else { return a.clone() };
    let n = a.rows();
    let (da, db) = (a.cols() / heads, b.cols() / heads);
    let w = da + db;
    let mut out = Vec::with_capacity(n * heads * w);
    for r in 0..n {
        for h in 0..heads {
            out.extend_from_slice(&a.row(r)[h * da..(h + 1) * da]);
            out.extend_from_slice(&b.row(r)[h * db..(h + 1) * db]);
        }
    }
    Tensor::new(vec![n, heads * w], out).expect("interleave shape")
}

/// Masked multi-head attention of `m` query rows against `l` key/value rows.
///
/// `allowed` is the `[m × l]` mask slab. When `probs` is given, the per-head
/// attention weights are written there as `[heads × m × l]`.
#[allow(clippy::too_many_arguments)]
pub fn attention_core(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    allowed: &[bool],
    m: usize,
    l: usize,
    heads: usize,
    dqk: usize,
    dv: usize,
    probs: Option<&mut Vec<f64>>,
) -> Result<Vec<f64>> {
    let scale = 1.0 / (dqk as f64).sqrt();
    let (wq, wv) = (heads * dqk, heads * dv);
    let mut out = vec![0.0; m * wv];
    let mut keep = probs;
    if let Some(p) = keep.as_deref_mut() {
        p.clear();
        p.resize(heads * m * l, 0.0);
    }
    let mut scores = vec![0.0; m * l];
    for h in 0..heads {
        scores.fill(0.0);
        gemm_acc(m, dqk, l, &q[h * dqk..], (wq, 1), &k[h * dqk..], (1, wq), &mut scores, l);
        for (i, row) in scores.chunks_mut(l).enumerate() {
            row.iter_mut().for_each(|s| *s *= scale);
            if !softmax_row_masked(row, &allowed[i * l..(i + 1) * l]) {
                return Err(Error::FullyMasked(i));
            }
        }
        gemm_acc(m, l, dv, &scores, (l, 1), &v[h * dv..], (wv, 1), &mut out[h * dv..], wv);
        if let Some(p) = keep.as_mut() {
            p[h * m * l..(h + 1) * m * l].copy_from_slice(&scores);
        }
    }
    Ok(out)
}

/// One attention layer over the rows of `x`.
///
/// Without a cache `x` holds every token of `layout`. With a cache, `x` holds
/// the tokens immediately following the committed prefix; their rotated keys
/// and values are appended to the cache.
pub fn attend(x: &Tensor, layout: &SequenceLayout, w: &AttentionWeights<'_>, cache: Option<&mut LayerKV>) -> Result<Tensor> {
    let heads = w.heads;
    let (dqk, dv) = (w.rope.head_dim(), w.rope.d_t);
    let mut scratch = LayerKV::new(heads * dqk, heads * dv);
    let cache = cache.unwrap_or(&mut scratch);
    if cache.k_width() != heads * dqk || cache.v_width() != heads * dv {
        return Err(Error::Cache("cache width does not match attention weights".into()));
    }
    let start = cache.len();
    let m = x.rows();
    let end = start + m;
    if end > layout.len() {
        return Err(Error::Cache(format!("rows {start}..{end} exceed layout of {}", layout.len())));
    }
    let table = RopeTable::new(&layout.indices()[start..end], &w.rope);
    let mut q = interleave(&matmul(x, w.q)?, w.q_spatial.map(|s| matmul(x, s)).transpose()?.as_ref(), heads);
    let mut k = interleave(&matmul(x, w.k)?, w.k_spatial.map(|s| matmul(x, s)).transpose()?.as_ref(), heads);
    table.rotate_rows(q.data_mut(), heads, false);
    table.rotate_rows(k.data_mut(), heads, false);
    let v = matmul(x, w.v)?;
    cache.append(k.data(), v.data());
    let allowed = mask_rows(&layout.unit_ids(), start..end, end);
    let a = attention_core(q.data(), cache.keys(), cache.values(), &allowed, m, end, heads, dqk, dv, None)?;
    let out = matmul(&Tensor::new(vec![m, heads * dv], a)?, w.o)?;
    out.ensure_finite("attend")?;
    Ok(out)
}

struct AttentionOp {
    mask: Arc<AttentionMask>,
    probs: Vec<f64>,
    heads: usize,
    dqk: usize,
    dv: usize,
}

impl Function for AttentionOp {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let (q, k, v) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.inputs[2].data());
        let g = ctx.grad.data();
        let n = self.mask.len();
        let (heads, dqk, dv) = (self.heads, self.dqk, self.dv);
        let (wq, wv) = (heads * dqk, heads * dv);
        let scale = 1.0 / (dqk as f64).sqrt();
        let mut dq = vec![0.0; n * wq];
        let mut dk = vec![0.0; n * wq];
        let mut dvv = vec![0.0; n * wv];
        let mut ds = vec![0.0; n * n];
        for h in 0..heads {
            let p = &self.probs[h * n * n..(h + 1) * n * n];
            ds.fill(0.0);
            gemm_acc(n, dv, n, &g[h * dv..], (wv, 1), &v[h * dv..], (1, wv), &mut ds, n);
            gemm_acc(n, n, dv, p, (1, n), &g[h * dv..], (wv, 1), &mut dvv[h * dv..], wv);
            for (dsr, pr) in ds.chunks_mut(n).zip(p.chunks(n)) {
                let weighted: f64 = dsr.iter().zip(pr).map(|(d, p)| d * p).sum();
                for (d, p) in dsr.iter_mut().zip(pr) {
                    *d = p * (*d - weighted) * scale;
                }
            }
            gemm_acc(n, n, dqk, &ds, (n, 1), &k[h * dqk..], (wq, 1), &mut dq[h * dqk..], wq);
            gemm_acc(n, n, dqk, &ds, (1, n), &q[h * dqk..], (wq, 1), &mut dk[h * dqk..], wq);
        }
        Ok(vec![
            ctx.needs[0].then(|| Tensor::new(vec![n, wq], dq).unwrap()),
            ctx.needs[1].then(|| Tensor::new(vec![n, wq], dk).unwrap()),
            ctx.needs[2].then(|| Tensor::new(vec![n, wv], dvv).unwrap()),
        ])
    }
}

impl Tape {
    /// Masked multi-head attention with per-head query/key width `dqk` and
    /// value width `dv`; logits are scaled by `1/√dqk`.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        mask: Arc<AttentionMask>,
        heads: usize,
        dqk: usize,
        dv: usize,
    ) -> Result<Var> {
        let n = mask.len();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.shape() != [n, heads * dqk] || kv.shape() != [n, heads * dqk] || vv.shape() != [n, heads * dv] {
            return Err(Error::shape(
                "attention",
                format!("q {:?} k {:?} v {:?} for n={n} heads={heads}", qv.shape(), kv.shape(), vv.shape()),
            ));
        }
        let mut probs = Vec::new();
        let out = attention_core(qv.data(), kv.data(), vv.data(), mask.as_slice(), n, n, heads, dqk, dv, Some(&mut probs))?;
        let value = Tensor::new(vec![n, heads * dv], out)?;
        self.record(AttentionOp { mask, probs, heads, dqk, dv }, &[q, k, v], value)
    }
}
