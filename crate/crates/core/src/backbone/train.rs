use std::fmt;

use super::loss::{nexttoken_loss, TrainExample};
use super::model::Backbone;
use crate::numerics::{AdamW, AdamWConfig, Gradients, LrSchedule, Tape};
use crate::{par, Error, Result};

/// Trainable-name patterns of stage 1.
pub fn stage1_patterns() -> Vec<String> {
    ["patch_embed.*", "layers.prebuffer.*", "*.qk_spatial.*"].iter().map(|s| s.to_string()).collect()
}

/// One training phase.
#[derive(Clone, Debug, PartialEq)]
pub struct StagePlan {
    pub stage: u8,
    /// Glob patterns of trainable parameter names; `["*"]` trains everything.
    pub trainable: Vec<String>,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub context: usize,
    /// Weights over `textonly : caption : same_diff : motion`.
    pub mixture: [f64; 4],
    /// Supervise only answer tokens.
    pub answer_only: bool,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
}

impl StagePlan {
    pub fn default_for(stage: u8) -> Result<Self> {
        let (trainable, lr, context, answer_only) = match stage {
            1 => (stage1_patterns(), 2e-4, 256, false),
            2 => (vec!["*".to_string()], 5e-5, 512, false),
            3 => (vec!["*".to_string()], 5e-5, 512, true),
            _ => return Err(Error::Config(format!("stage must be 1, 2 or 3, got {stage}"))),
        };
        Ok(Self {
            stage,
            trainable,
            lr,
            steps: 100,
            batch: 8,
            context,
            mixture: [2.0, 4.0, 1.0, 1.0],
            answer_only,
            warmup_ratio: 0.01,
            weight_decay: 0.01,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 || self.context == 0 {
            return Err(Error::Config(format!("stage {}: steps, batch and context must be positive", self.stage)));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) || !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::Config(format!("stage {}: bad lr {} or warmup {}", self.stage, self.lr, self.warmup_ratio)));
        }
        if self.mixture.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.mixture.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!("stage {}: mixture weights {:?}", self.stage, self.mixture)));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule::new(self.lr, self.warmup_ratio, self.steps)
    }
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub stage: u8,
    pub lr: f64,
    pub loss: f64,
}

impl fmt::Display for StepMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step={} stage={} lr={:.6e} loss={:.6}", self.step, self.stage, self.lr, self.loss)
    }
}

impl Backbone {
    /// Loss and parameter gradients for one example.
    pub fn loss_and_grads(&self, ex: &TrainExample) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        let vars = tape.bind_all(&self.store);
        let logits = self.forward_tape(&mut tape, &vars, &ex.input)?;
        let loss = nexttoken_loss(&mut tape, logits, &ex.input.layout, &ex.targets)?;
        let value = tape.value(loss).item();
        Ok((value, tape.backward(loss)?))
    }
}

/// Runs steps `start..plan.steps` of a stage. `data(step, i)` yields the
/// `i`-th example of the batch at `step` (0-based); it must be a pure
/// function so resumed runs see the same data. `sink` sees every step's
/// metrics and the updated model. Per-example gradients may be
/// computed concurrently but are summed in batch order, so results do not
/// depend on the thread count.
pub fn train_stage<F>(
    model: &mut Backbone,
    plan: &StagePlan,
    start: usize,
    data: F,
    mut sink: impl FnMut(&StepMetrics, &Backbone) -> Result<()>,
) -> Result<Vec<StepMetrics>>
where
    F: Fn(usize, usize) -> Result<TrainExample> + Sync,
{
    plan.validate()?;
    if plan.context > model.config.max_context {
        return Err(Error::Config(format!("stage context {} exceeds max_context {}", plan.context, model.config.max_context)));
    }
    model.store.set_trainable_patterns(&plan.trainable);
    let cfg = AdamWConfig { weight_decay: plan.weight_decay, ..AdamWConfig::default() };
    let mut opt = AdamW::new(cfg, plan.schedule());
    opt.step = start;
    let mut log = Vec::new();
    for step in start..plan.steps {
        let results = par::map_range(plan.batch, |i| -> Result<(f64, Gradients)> {
            let ex = data(step, i)?;
            if ex.input.len() > plan.context {
                return Err(Error::ContextOverflow { len: ex.input.len(), max: plan.context });
            }
            model.loss_and_grads(&ex)
        });
        model.store.zero_grad();
        let scale = 1.0 / plan.batch as f64;
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l * scale;
            model.store.accumulate(&g, scale)?;
        }
        let lr = opt.step(&mut model.store)?;
        model.store.round_to_storage();
        let m = StepMetrics { step: step + 1, stage: plan.stage, lr, loss };
        sink(&m, model)?;
        log.push(m);
    }
    model.store.zero_grad();
    Ok(log)
}
