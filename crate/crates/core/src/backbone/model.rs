use std::ops::Range;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{attend, AttentionLayer, AttentionMask, KVCache};
use crate::numerics::kernels::{gelu, matmul, rmsnorm};
use crate::numerics::{Bindings, ParamId, ParamStore, Tape, Tensor, Var};
use crate::patch_embed::{embed_image, prepare, truncated_normal, PatchEmbed};
use crate::rope::{RopeConfig, RopeTable};
use crate::serializer::{serialize_default, PromptSpec, SequenceLayout, TokenId, TokenKind, PATCH_SIZE, VOCAB_SIZE};
use crate::{Error, Result};

pub const RMS_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub rope: RopeConfig,
    pub n_pre: usize,
    pub n_post: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub max_context: usize,
    pub seed: u64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            rope: RopeConfig::default(),
            n_pre: 2,
            n_post: 2,
            d_ff: 256,
            vocab: VOCAB_SIZE,
            max_context: 512,
            seed: 0,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    /// Smallest useful configuration: `d_model = 16`, one pre-buffer and one
    /// post block.
    pub fn minimal() -> Self {
        Self {
            d_model: 16,
            n_heads: 2,
            rope: RopeConfig { d_t: 8, d_h: 4, d_w: 4, ..RopeConfig::default() },
            n_pre: 1,
            n_post: 1,
            d_ff: 32,
            max_context: 256,
            ..Self::default()
        }
    }

    /// Channel width between the two patch convolutions.
    pub fn d_mid(&self) -> usize {
        self.d_model / 2
    }

    pub fn n_layers(&self) -> usize {
        self.n_pre + self.n_post
    }

    pub fn validate(&self) -> Result<()> {
        self.rope.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_heads == 0 || self.d_model != self.n_heads * self.rope.d_t {
            return bad(format!("d_model ({}) must equal n_heads ({}) × d_t ({})", self.d_model, self.n_heads, self.rope.d_t));
        }
        if !self.d_model.is_multiple_of(8) {
            return bad(format!("d_model ({}) must be a multiple of 8", self.d_model));
        }
        if self.n_layers() == 0 || self.d_ff == 0 || self.max_context == 0 {
            return bad("layer count, d_ff and max_context must be positive".into());
        }
        if self.vocab != VOCAB_SIZE {
            return bad(format!("vocab must be {VOCAB_SIZE}, got {}", self.vocab));
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return bad(format!("init_std must be positive, got {}", self.init_std));
        }
        Ok(())
    }

    /// `key=value` pairs in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("d_model", self.d_model.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("d_t", self.rope.d_t.to_string()),
            ("d_h", self.rope.d_h.to_string()),
            ("d_w", self.rope.d_w.to_string()),
            ("theta_t", self.rope.theta_t.to_string()),
            ("theta_h", self.rope.theta_h.to_string()),
            ("theta_w", self.rope.theta_w.to_string()),
            ("n_pre", self.n_pre.to_string()),
            ("n_post", self.n_post.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("vocab", self.vocab.to_string()),
            ("max_context", self.max_context.to_string()),
            ("seed", self.seed.to_string()),
            ("init_std", self.init_std.to_string()),
        ]
    }

    /// Sets one field from its `key=value` form. Returns `Ok(false)` for
    /// keys that are not model fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "d_model" => self.d_model = num(key, value)?,
            "n_heads" => self.n_heads = num(key, value)?,
            "d_t" => self.rope.d_t = num(key, value)?,
            "d_h" => self.rope.d_h = num(key, value)?,
            "d_w" => self.rope.d_w = num(key, value)?,
            "theta_t" => self.rope.theta_t = num(key, value)?,
            "theta_h" => self.rope.theta_h = num(key, value)?,
            "theta_w" => self.rope.theta_w = num(key, value)?,
            "n_pre" => self.n_pre = num(key, value)?,
            "n_post" => self.n_post = num(key, value)?,
            "d_ff" => self.d_ff = num(key, value)?,
            "vocab" => self.vocab = num(key, value)?,
            "max_context" => self.max_context = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "init_std" => self.init_std = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// A serialized sequence plus one padded `[3×H×W]` tensor per visual unit.
#[derive(Clone, Debug)]
pub struct ModelInput {
    pub layout: SequenceLayout,
    pub images: Vec<Tensor>,
}

impl ModelInput {
    pub fn new(layout: SequenceLayout, images: Vec<Tensor>) -> Result<Self> {
        if images.len() != layout.units.len() {
            return Err(Error::Prompt(format!("{} images for {} visual units", images.len(), layout.units.len())));
        }
        for (u, img) in layout.units.iter().zip(&images) {
            let want = [3, u.grid_h * PATCH_SIZE, u.grid_w * PATCH_SIZE];
            if img.shape() != want {
                return Err(Error::Prompt(format!("unit {}: image {:?}, expected {:?}", u.id, img.shape(), want)));
            }
        }
        Ok(Self { layout, images })
    }

    pub fn from_prompt(prompt: &PromptSpec) -> Result<Self> {
        let layout = serialize_default(prompt)?;
        let images = prompt.visual_units().into_iter().map(prepare).collect();
        Self::new(layout, images)
    }

    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
    }

    pub fn push_text(&mut self, id: TokenId) {
        self.layout.push_text(id);
    }

    pub fn push_str(&mut self, s: &str) {
        self.layout.push_str(s);
    }
}

#[derive(Clone, Debug)]
struct Block {
    attn_norm: ParamId,
    attn: AttentionLayer,
    mlp_norm: ParamId,
    up: ParamId,
    down: ParamId,
}

/// The decoder with its parameters.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: ModelConfig,
    pub store: ParamStore,
    patch: PatchEmbed,
    embed: ParamId,
    blocks: Vec<Block>,
    final_norm: ParamId,
    head: ParamId,
}

impl Backbone {
    /// Fresh model: truncated-normal weights, unit gains, zero conv biases.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut init = truncated_normal(&mut rng, config.init_std);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let patch = PatchEmbed::register(&mut store, config.d_mid(), d, &mut init);
        let embed = store.add("embed.tokens", init(&[config.vocab, d]));
        let mut blocks = Vec::with_capacity(config.n_layers());
        for i in 0..config.n_layers() {
            let prefix = if i < config.n_pre { format!("layers.prebuffer.{i}") } else { format!("layers.post.{}", i - config.n_pre) };
            blocks.push(Block {
                attn_norm: store.add(format!("{prefix}.attn_norm.gain"), Tensor::full(&[d], 1.0)),
                attn: AttentionLayer::register(&mut store, &format!("{prefix}.attn"), d, config.n_heads, config.rope, &mut init),
                mlp_norm: store.add(format!("{prefix}.mlp_norm.gain"), Tensor::full(&[d], 1.0)),
                up: store.add(format!("{prefix}.mlp.up"), init(&[d, config.d_ff])),
                down: store.add(format!("{prefix}.mlp.down"), init(&[config.d_ff, d])),
            });
        }
        let final_norm = store.add("final_norm.gain", Tensor::full(&[d], 1.0));
        let head = store.add("head.weight", init(&[d, config.vocab]));
        Ok(Self { config, store, patch, embed, blocks, final_norm, head })
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        if input.len() > self.config.max_context {
            return Err(Error::ContextOverflow { len: input.len(), max: self.config.max_context });
        }
        if input.is_empty() {
            return Err(Error::Prompt("empty sequence".into()));
        }
        Ok(())
    }

    /// Logits `[n × vocab]` recorded on `tape` for gradient computation.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &Bindings, input: &ModelInput) -> Result<Var> {
        self.check_input(input)?;
        let layout = &input.layout;
        let n = layout.len();
        let (mut text_pos, mut text_ids) = (Vec::new(), Vec::new());
        for (p, r) in layout.tokens.iter().enumerate() {
            if let TokenKind::Text(id) = r.kind {
                text_pos.push(p);
                text_ids.push(id as usize);
            }
        }
        let mut sources = Vec::with_capacity(1 + layout.units.len());
        if !text_pos.is_empty() {
            sources.push((tape.gather_rows(vars.get(self.embed), &text_ids)?, text_pos));
        }
        for (u, img) in layout.units.iter().zip(&input.images) {
            sources.push((self.patch.embed_tape(tape, vars, img)?, u.range().collect()));
        }
        let mut x = tape.assemble_rows(n, &sources)?;
        let rope = Arc::new(RopeTable::new(&layout.indices(), &self.config.rope));
        let mask = Arc::new(AttentionMask::from_units(&layout.unit_ids()));
        for b in &self.blocks {
            let h = tape.rmsnorm(x, vars.get(b.attn_norm), RMS_EPS)?;
            let a = b.attn.forward_tape(tape, vars, h, &rope, &mask)?;
            x = tape.add(x, a)?;
            let h = tape.rmsnorm(x, vars.get(b.mlp_norm), RMS_EPS)?;
            let h = tape.matmul(h, vars.get(b.up))?;
            let h = tape.gelu(h)?;
            let h = tape.matmul(h, vars.get(b.down))?;
            x = tape.add(x, h)?;
        }
        let x = tape.rmsnorm(x, vars.get(self.final_norm), RMS_EPS)?;
        tape.matmul(x, vars.get(self.head))
    }

    /// Empty cache sized for this model.
    pub fn new_cache(&self) -> KVCache {
        let c = &self.config;
        KVCache::new(c.n_layers(), c.n_heads * c.rope.head_dim(), c.n_heads * c.rope.d_t)
    }

    /// Full forward without a tape: logits `[n × vocab]`.
    pub fn logits(&self, input: &ModelInput) -> Result<Tensor> {
        self.check_input(input)?;
        let mut cache = self.new_cache();
        self.run_rows(input, 0..input.len(), &mut cache)
    }

    /// Runs one block (a text token or a whole visual unit) that follows the
    /// cached prefix, appends it to `cache` and returns its logits rows.
    pub fn extend_cache(&self, cache: &mut KVCache, input: &ModelInput, block: Range<usize>) -> Result<Tensor> {
        self.check_input(input)?;
        cache.check_block(&input.layout.unit_ids(), block.start, block.end)?;
        self.run_rows(input, block, cache)
    }

    /// Runs rows `range` (starting at the committed length of `cache`, ending
    /// on a block boundary) and commits them.
    pub(crate) fn run_rows(&self, input: &ModelInput, range: Range<usize>, cache: &mut KVCache) -> Result<Tensor> {
        let committed = cache.len();
        if range.start != committed || cache.layers.len() != self.blocks.len() {
            return Err(Error::Cache(format!("rows {range:?} do not follow a cache of {committed} tokens")));
        }
        let result = self.run_rows_inner(input, range.clone(), cache);
        match result {
            Ok(out) => {
                cache.commit(&input.layout.unit_ids()[range]);
                Ok(out)
            }
            Err(e) => {
                for l in &mut cache.layers {
                    l.truncate(committed);
                }
                Err(e)
            }
        }
    }

    fn run_rows_inner(&self, input: &ModelInput, range: Range<usize>, cache: &mut KVCache) -> Result<Tensor> {
        let d = self.config.d_model;
        let m = range.len();
        let mut x = self.embed_rows(input, range)?;
        let gain = |id: ParamId| self.store.value(id).data();
        for (b, kv) in self.blocks.iter().zip(cache.layers.iter_mut()) {
            let h = Tensor::new(vec![m, d], rmsnorm(x.data(), gain(b.attn_norm), m, RMS_EPS).0)?;
            x.add_assign(&attend(&h, &input.layout, &b.attn.weights(&self.store), Some(kv))?);
            let h = Tensor::new(vec![m, d], rmsnorm(x.data(), gain(b.mlp_norm), m, RMS_EPS).0)?;
            let h = gelu(&matmul(&h, self.store.value(b.up))?);
            x.add_assign(&matmul(&h, self.store.value(b.down))?);
        }
        let h = Tensor::new(vec![m, d], rmsnorm(x.data(), gain(self.final_norm), m, RMS_EPS).0)?;
        let logits = matmul(&h, self.store.value(self.head))?;
        logits.ensure_finite("logits")?;
        Ok(logits)
    }

    /// Input embeddings for rows `range`; visual units must lie wholly inside.
    fn embed_rows(&self, input: &ModelInput, range: Range<usize>) -> Result<Tensor> {
        let d = self.config.d_model;
        let layout = &input.layout;
        let table = self.store.value(self.embed);
        let mut out = Tensor::zeros(&[range.len(), d]);
        let mut p = range.start;
        while p < range.end {
            match layout.tokens[p].kind {
                TokenKind::Text(id) => {
                    out.row_mut(p - range.start).copy_from_slice(table.row(id as usize));
                    p += 1;
                }
                TokenKind::Visual { .. } => {
                    let u = &layout.units[layout.tokens[p].unit - 1];
                    let r = u.range();
                    if r.start != p || r.end > range.end {
                        return Err(Error::Cache(format!("rows {range:?} split visual unit {}", u.id)));
                    }
                    let e = embed_image(&input.images[u.id - 1], &self.patch.params(&self.store))?;
                    for (i, q) in r.clone().enumerate() {
                        out.row_mut(q - range.start).copy_from_slice(e.row(i));
                    }
                    p = r.end;
                }
            }
        }
        Ok(out)
    }
}
