use super::model::{Backbone, ModelInput};
use crate::serializer::{SpecialToken, TokenId};
use crate::{Error, Result};

fn argmax(row: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best as TokenId
}

fn check_room(model: &Backbone, len: usize) -> Result<()> {
    if len > model.config.max_context {
        return Err(Error::ContextOverflow { len, max: model.config.max_context });
    }
    Ok(())
}

/// Greedy decoding with the unit-granular KV cache. The prompt is committed
/// once; every generated token is a text token appended as its own block.
/// Stops after `<eos>` (not returned) or `max_new` tokens.
pub fn generate(model: &Backbone, prompt: &ModelInput, max_new: usize) -> Result<Vec<TokenId>> {
    let mut out = Vec::new();
    if max_new == 0 {
        return Ok(out);
    }
    let mut seq = prompt.clone();
    let mut cache = model.new_cache();
    let mut logits = model.logits_into_cache(&seq, &mut cache)?;
    loop {
        let next = argmax(logits.row(logits.rows() - 1));
        if next == SpecialToken::Eos.id() {
            break;
        }
        out.push(next);
        if out.len() == max_new {
            break;
        }
        check_room(model, seq.len() + 1)?;
        seq.push_text(next);
        let n = seq.len();
        logits = model.extend_cache(&mut cache, &seq, n - 1..n)?;
    }
    Ok(out)
}

/// Reference decoder that re-runs the full sequence for every token.
pub fn generate_uncached(model: &Backbone, prompt: &ModelInput, max_new: usize) -> Result<Vec<TokenId>> {
    let mut out = Vec::new();
    let mut seq = prompt.clone();
    while out.len() < max_new {
        let logits = model.logits(&seq)?;
        let next = argmax(logits.row(logits.rows() - 1));
        if next == SpecialToken::Eos.id() {
            break;
        }
        out.push(next);
        if out.len() == max_new {
            break;
        }
        check_room(model, seq.len() + 1)?;
        seq.push_text(next);
    }
    Ok(out)
}

impl Backbone {
    /// Full forward that leaves the whole sequence committed in `cache`.
    pub fn logits_into_cache(&self, input: &ModelInput, cache: &mut crate::attention::KVCache) -> Result<crate::numerics::Tensor> {
        check_room(self, input.len())?;
        if !cache.is_empty() {
            return Err(Error::Cache("prefill needs an empty cache".into()));
        }
        self.run_rows(input, 0..input.len(), cache)
    }
}
