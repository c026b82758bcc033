//! Glue between the synthetic corpora and the backbone: per-stage training
//! streams and held-out evaluation.

use crate::backbone::{generate, train_stage, Backbone, ModelInput, StagePlan, StepMetrics, TrainExample};
use crate::config::RunConfig;
use crate::data::{derive_seed, Mixture, Task};
use crate::serializer::detokenize;
use crate::{par, Error, Result};

const TRAIN_SALT: u64 = 0x7472_6169_6e00;
const EVAL_SALT: u64 = 0x6576_616c_0000;

/// Master seed of the training stream of `stage`.
pub fn stage_seed(seed: u64, stage: u8) -> u64 {
    derive_seed(seed ^ TRAIN_SALT, stage as u64)
}

/// `data(step, i)` for [`train_stage`]: the `(step·batch + i)`-th draw of the
/// stage's mixture stream.
pub fn stage_data(plan: &StagePlan, seed: u64) -> Result<impl Fn(usize, usize) -> Result<TrainExample> + Sync> {
    let mixture = Mixture::new(plan.mixture)?;
    let master = stage_seed(seed, plan.stage);
    let (batch, answer_only) = (plan.batch, plan.answer_only);
    Ok(move |step: usize, i: usize| {
        let s = mixture.sample(master, (step * batch + i) as u64);
        TrainExample::from_qa(&s.prompt, &s.answer, answer_only)
    })
}

/// Trains `model` through steps `start..` of stage `n` of `cfg`.
pub fn run_stage(
    cfg: &RunConfig,
    n: u8,
    model: &mut Backbone,
    start: usize,
    sink: impl FnMut(&StepMetrics, &Backbone) -> Result<()>,
) -> Result<Vec<StepMetrics>> {
    let plan = cfg.stage(n)?;
    train_stage(model, plan, start, stage_data(plan, cfg.model.seed)?, sink)
}

/// Accuracy of greedy answers on held-out samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub task: Task,
    pub n: usize,
    pub correct: usize,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.n as f64
    }
}

/// Greedy-decodes `n` fresh samples of `task` (seeds disjoint from the
/// training streams) and counts exact matches after trimming whitespace.
pub fn evaluate(model: &Backbone, task: Task, n: usize, seed: u64) -> Result<EvalReport> {
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let master = derive_seed(seed ^ EVAL_SALT, task as u64);
    let max_new = 12;
    let hits = par::map_range(n, |i| -> Result<bool> {
        let s = task.generate(derive_seed(master, i as u64));
        let out = generate(model, &ModelInput::from_prompt(&s.prompt)?, max_new)?;
        Ok(detokenize(&out).trim() == s.answer.trim())
    });
    let mut correct = 0;
    for h in hits {
        correct += usize::from(h?);
    }
    Ok(EvalReport { task, n, correct })
}
