use super::model::ModelInput;
use crate::numerics::{Tape, Tensor, Var};
use crate::serializer::{PromptSpec, SequenceLayout, SpecialToken};
use crate::{Error, Result};

/// Next-token labels for every position whose own token and successor are
/// both text and whose successor sits at or after `from`.
pub fn text_targets(layout: &SequenceLayout, from: usize) -> Vec<Option<usize>> {
    let t = &layout.tokens;
    (0..t.len())
        .map(|i| match (t[i].is_text(), t.get(i + 1).and_then(|r| r.token_id())) {
            (true, Some(next)) if i + 1 >= from => Some(next as usize),
            _ => None,
        })
        .collect()
}

/// Drops labels at positions that are visual or predict a visual token.
fn supervised(layout: &SequenceLayout, targets: &[Option<usize>]) -> Result<Vec<Option<usize>>> {
    if targets.len() != layout.len() {
        return Err(Error::shape("nexttoken_loss", format!("{} targets for {} tokens", targets.len(), layout.len())));
    }
    let t = &layout.tokens;
    let out: Vec<_> = targets
        .iter()
        .enumerate()
        .map(|(i, &y)| y.filter(|_| t[i].is_text() && t.get(i + 1).is_some_and(|r| r.is_text())))
        .collect();
    if out.iter().all(Option::is_none) {
        return Err(Error::NoSupervised);
    }
    Ok(out)
}

/// Mean cross-entropy over text positions whose next token is text.
pub fn nexttoken_loss(tape: &mut Tape, logits: Var, layout: &SequenceLayout, targets: &[Option<usize>]) -> Result<Var> {
    let y = supervised(layout, targets)?;
    tape.cross_entropy(logits, &y)
}

/// Tape-free [`nexttoken_loss`].
pub fn nexttoken_loss_value(logits: &Tensor, layout: &SequenceLayout, targets: &[Option<usize>]) -> Result<f64> {
    let y = supervised(layout, targets)?;
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let ce = tape.cross_entropy(l, &y)?;
    Ok(tape.value(ce).item())
}

/// One supervised sequence: a prompt followed by its answer and `<eos>`.
#[derive(Clone, Debug)]
pub struct TrainExample {
    pub input: ModelInput,
    pub targets: Vec<Option<usize>>,
    /// Length of the prompt part.
    pub prompt_len: usize,
}

impl TrainExample {
    /// With `answer_only`, only the answer bytes and `<eos>` are supervised;
    /// otherwise every text-to-text transition is.
    pub fn from_qa(prompt: &PromptSpec, answer: &str, answer_only: bool) -> Result<Self> {
        let mut input = ModelInput::from_prompt(prompt)?;
        let prompt_len = input.len();
        input.push_str(answer);
        input.push_text(SpecialToken::Eos.id());
        let targets = text_targets(&input.layout, if answer_only { prompt_len } else { 0 });
        Ok(Self { input, targets, prompt_len })
    }
}
