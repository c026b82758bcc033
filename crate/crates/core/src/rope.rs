//! Multi-axis rotary position embedding.
//!
//! Each query/key head vector is laid out as contiguous `[T | H | W]` blocks
//! of `d_t`, `d_h` and `d_w` channels. Within a block, channel pairs
//! `(2c, 2c+1)` are rotated by `index · θ^(−2c/d)` where `index` is the
//! token's `t`, `h` or `w` coordinate and `θ` the block's base frequency.

use std::sync::Arc;

use crate::numerics::{kernels::dot, BackwardCtx, Function, Tape, Tensor, Var};
use crate::{Error, Result};

/// Position of a token on the temporal and spatial axes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct IndexTriple {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl IndexTriple {
    pub fn new(t: usize, h: usize, w: usize) -> Self {
        Self { t, h, w }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RopeConfig {
    pub theta_t: f64,
    pub theta_h: f64,
    pub theta_w: f64,
    pub d_t: usize,
    pub d_h: usize,
    pub d_w: usize,
}

impl Default for RopeConfig {
    fn default() -> Self {
        Self { theta_t: 1e6, theta_h: 1e4, theta_w: 1e4, d_t: 16, d_h: 8, d_w: 8 }
    }
}

impl RopeConfig {
    /// Width of one rotated head vector.
    pub fn head_dim(&self) -> usize {
        self.d_t + self.d_h + self.d_w
    }

    pub fn spatial_dim(&self) -> usize {
        self.d_h + self.d_w
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_t < 2 || !self.d_t.is_multiple_of(2) || !self.d_h.is_multiple_of(2) || !self.d_w.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "rope channels must be even with d_t >= 2, got d_t={} d_h={} d_w={}",
                self.d_t, self.d_h, self.d_w
            )));
        }
        if [self.theta_t, self.theta_h, self.theta_w].iter().any(|t| !(t.is_finite() && *t > 1.0)) {
            return Err(Error::Config("rope base frequencies must be finite and > 1".into()));
        }
        Ok(())
    }

    fn blocks(&self) -> [(usize, f64); 3] {
        [(self.d_t, self.theta_t), (self.d_h, self.theta_h), (self.d_w, self.theta_w)]
    }
}

/// `index · θ^(−2c/d_axis)` for `c = 0 … d_axis/2 − 1`.
pub fn axis_angles(index: usize, d_axis: usize, theta: f64) -> Vec<f64> {
    debug_assert!(d_axis.is_multiple_of(2));
    (0..d_axis / 2)
        .map(|c| index as f64 * theta.powf(-2.0 * c as f64 / d_axis as f64))
        .collect()
}

/// All `head_dim/2` pair angles of a token, in `[T | H | W]` order.
pub fn angles(idx: IndexTriple, cfg: &RopeConfig) -> Vec<f64> {
    let coords = [idx.t, idx.h, idx.w];
    cfg.blocks()
        .iter()
        .zip(coords)
        .flat_map(|(&(d, theta), i)| axis_angles(i, d, theta))
        .collect()
}

#[inline]
fn rotate_pairs(x: &mut [f64], cos: &[f64], sin: &[f64], inverse: bool) {
    let sign = if inverse { -1.0 } else { 1.0 };
    for (c, pair) in x.chunks_exact_mut(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        let (co, si) = (cos[c], sign * sin[c]);
        pair[0] = a * co - b * si;
        pair[1] = a * si + b * co;
    }
}

/// Rotates one head vector by the angles of `idx`.
pub fn apply_rope(vec: &[f64], idx: IndexTriple, cfg: &RopeConfig) -> Result<Vec<f64>> {
    if vec.len() != cfg.head_dim() {
        return Err(Error::shape("apply_rope", format!("vector of {} for head dim {}", vec.len(), cfg.head_dim())));
    }
    let ang = angles(idx, cfg);
    let cos: Vec<f64> = ang.iter().map(|a| a.cos()).collect();
    let sin: Vec<f64> = ang.iter().map(|a| a.sin()).collect();
    let mut out = vec.to_vec();
    rotate_pairs(&mut out, &cos, &sin, false);
    Ok(out)
}

/// Unscaled inner products of the T, H and W blocks.
pub fn block_scores(q: &[f64], k: &[f64], cfg: &RopeConfig) -> [f64; 3] {
    let (a, b) = (cfg.d_t, cfg.d_t + cfg.d_h);
    [dot(&q[..a], &k[..a]), dot(&q[a..b], &k[a..b]), dot(&q[b..], &k[b..])]
}

/// Attention logit between rotated head vectors: the sum of the per-axis
/// block inner products, scaled by `1/√(d_t + d_h + d_w)`.
pub fn decoupled_score(q: &[f64], k: &[f64], cfg: &RopeConfig) -> f64 {
    let [t, h, w] = block_scores(q, k, cfg);
    (t + h + w) / (cfg.head_dim() as f64).sqrt()
}

/// Precomputed cosines and sines for a run of tokens.
#[derive(Clone, Debug)]
pub struct RopeTable {
    half: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl RopeTable {
    pub fn new(indices: &[IndexTriple], cfg: &RopeConfig) -> Self {
        let half = cfg.head_dim() / 2;
        let mut cos = Vec::with_capacity(indices.len() * half);
        let mut sin = Vec::with_capacity(indices.len() * half);
        for &idx in indices {
            for a in angles(idx, cfg) {
                cos.push(a.cos());
                sin.push(a.sin());
            }
        }
        Self { half, cos, sin }
    }

    pub fn rows(&self) -> usize {
        self.cos.len() / self.half.max(1)
    }

    /// Rotates every head of every row of `x[rows × heads·head_dim]`.
    pub fn rotate_rows(&self, x: &mut [f64], heads: usize, inverse: bool) {
        let hd = self.half * 2;
        for (r, row) in x.chunks_exact_mut(heads * hd).enumerate() {
            let (c, s) = (&self.cos[r * self.half..(r + 1) * self.half], &self.sin[r * self.half..(r + 1) * self.half]);
            for head in row.chunks_exact_mut(hd) {
                rotate_pairs(head, c, s, inverse);
            }
        }
    }
}

struct RopeOp {
    table: Arc<RopeTable>,
    heads: usize,
}

impl Function for RopeOp {
    fn name(&self) -> &'static str {
        "rope"
    }
    fn backward(&self, ctx: &BackwardCtx<'_>) -> Result<Vec<Option<Tensor>>> {
        let mut g = ctx.grad.clone();
        self.table.rotate_rows(g.data_mut(), self.heads, true);
        Ok(vec![Some(g)])
    }
}

impl Tape {
    /// Rotary embedding of `x[n × heads·head_dim]` with one table row per
    /// token.
    pub fn rope(&mut self, x: Var, table: Arc<RopeTable>, heads: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != table.rows() || xv.cols() != heads * table.half * 2 {
            return Err(Error::shape("rope", format!("{:?} for {} rows × {heads} heads", xv.shape(), table.rows())));
        }
        let mut value = xv.clone();
        table.rotate_rows(value.data_mut(), heads, false);
        self.record(RopeOp { table, heads }, &[x], value)
    }
}
