//! Flat `key = value` run configuration.
//!
//! ```text
//! # model
//! d_model = 64
//! seed = 7
//! out_dir = runs/toy
//! save_every = 50
//! # per stage
//! stage1.steps = 200
//! stage1.mix = 0:1:0:0
//! ```
//!
//! Blank lines and `#` comments are ignored. Unknown or repeated keys are
//! errors.

use std::collections::HashSet;
use std::path::PathBuf;

use crate::backbone::{ModelConfig, StagePlan};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub stages: [StagePlan; 3],
    pub out_dir: PathBuf,
    /// Steps between intermediate checkpoints during training.
    pub save_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let plan = |s| StagePlan::default_for(s).expect("stages 1-3 exist");
        Self { model: ModelConfig::default(), stages: [plan(1), plan(2), plan(3)], out_dir: PathBuf::from("runs"), save_every: 100 }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_mix(key: &str, v: &str) -> Result<[f64; 4]> {
    let parts: Vec<f64> = v.split(':').map(|p| parse_num(key, p.trim())).collect::<Result<_>>()?;
    parts.try_into().map_err(|_| Error::Config(format!("{key}: expected four ':'-separated weights, got {v:?}")))
}

fn render_mix(m: &[f64; 4]) -> String {
    m.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(":")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: repeated key {key:?}", n + 1)));
            }
            cfg.set(key, value).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                e => e,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set(key, value)? {
            return Ok(());
        }
        match key {
            "out_dir" => self.out_dir = PathBuf::from(value),
            "save_every" => self.save_every = parse_num(key, value)?,
            "weight_decay" => {
                let w = parse_num(key, value)?;
                self.stages.iter_mut().for_each(|s| s.weight_decay = w);
            }
            "warmup_ratio" => {
                let w = parse_num(key, value)?;
                self.stages.iter_mut().for_each(|s| s.warmup_ratio = w);
            }
            _ => {
                let (stage, field) = key
                    .strip_prefix("stage")
                    .and_then(|r| r.split_once('.'))
                    .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
                let s = match stage {
                    "1" | "2" | "3" => &mut self.stages[stage.as_bytes()[0] as usize - b'1' as usize],
                    _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                };
                match field {
                    "lr" => s.lr = parse_num(key, value)?,
                    "steps" => s.steps = parse_num(key, value)?,
                    "batch" => s.batch = parse_num(key, value)?,
                    "context" => s.context = parse_num(key, value)?,
                    "mix" => s.mixture = parse_mix(key, value)?,
                    "answer_only" => s.answer_only = parse_num(key, value)?,
                    "trainable" => s.trainable = value.split(',').map(|p| p.trim().to_string()).collect(),
                    _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        for s in &self.stages {
            s.validate()?;
            if s.context > self.model.max_context {
                return Err(Error::Config(format!("stage{}.context {} exceeds max_context {}", s.stage, s.context, self.model.max_context)));
            }
        }
        if self.save_every == 0 {
            return Err(Error::Config("save_every must be positive".into()));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::Config("out_dir is empty".into()));
        }
        Ok(())
    }

    pub fn stage(&self, n: u8) -> Result<&StagePlan> {
        match n {
            1..=3 => Ok(&self.stages[n as usize - 1]),
            _ => Err(Error::Config(format!("stage must be 1, 2 or 3, got {n}"))),
        }
    }

    /// Every key with its current value; [`RunConfig::parse`] reads it back.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.model.to_pairs() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push_str(&format!("out_dir = {}\n", self.out_dir.display()));
        s.push_str(&format!("save_every = {}\n", self.save_every));
        s.push_str(&format!("weight_decay = {}\n", self.stages[0].weight_decay));
        s.push_str(&format!("warmup_ratio = {}\n", self.stages[0].warmup_ratio));
        for p in &self.stages {
            let k = format!("stage{}", p.stage);
            s.push_str(&format!("{k}.lr = {}\n", p.lr));
            s.push_str(&format!("{k}.steps = {}\n", p.steps));
            s.push_str(&format!("{k}.batch = {}\n", p.batch));
            s.push_str(&format!("{k}.context = {}\n", p.context));
            s.push_str(&format!("{k}.mix = {}\n", render_mix(&p.mixture)));
            s.push_str(&format!("{k}.answer_only = {}\n", p.answer_only));
            s.push_str(&format!("{k}.trainable = {}\n", p.trainable.join(",")));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
        assert_eq!(c.stages[0].lr, 2e-4);
        assert_eq!((c.stages[1].lr, c.stages[2].lr), (5e-5, 5e-5));
        assert_eq!((c.stages[0].context, c.stages[2].context), (256, 512));
    }

    #[test]
    fn parses_values_and_comments() {
        let c = RunConfig::parse("d_model = 32\nn_heads=2 # two\n\nstage1.mix = 0:1:0:0\nstage3.answer_only = false\nseed = 9\n").unwrap();
        assert_eq!((c.model.d_model, c.model.n_heads, c.model.seed), (32, 2, 9));
        assert_eq!(c.stages[0].mixture, [0.0, 1.0, 0.0, 0.0]);
        assert!(!c.stages[2].answer_only);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in ["colour = red", "stage4.lr = 1", "stage1.speed = 2", "d_model", "seed = 1\nseed = 2", "stage1.mix = 1:2", "d_model = 48"] {
            assert!(matches!(RunConfig::parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }
}
