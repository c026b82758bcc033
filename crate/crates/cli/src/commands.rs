use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use onevision::attention::build_mask;
use onevision::backbone::{
    generate, load_checkpoint, nexttoken_loss, read_checkpoint_header, save_checkpoint, text_targets, Backbone, ModelConfig, ModelInput,
};
use onevision::config::RunConfig;
use onevision::data::{derive_seed, write_sample, Mixture, Task};
use onevision::image::Image;
use onevision::numerics::{gradcheck, GradcheckOptions, ParamStore, Tape};
use onevision::pipeline::{evaluate, run_stage};
use onevision::rope::{angles, RopeConfig};
use onevision::serializer::manifest::Manifest;
use onevision::serializer::{detokenize, parse_layout_dump, serialize_default, write_layout_dump, PromptItem, PromptSpec, SpecialToken};
use onevision::write_atomic;

use crate::Command;

/// Command failure with its exit code.
pub struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    pub fn code(&self) -> u8 {
        self.code
    }

    fn usage(msg: impl Into<String>) -> Self {
        Self { code: 1, msg: msg.into() }
    }

    fn numeric(msg: impl Into<String>) -> Self {
        Self { code: 3, msg: msg.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<onevision::Error> for Failure {
    fn from(e: onevision::Error) -> Self {
        use onevision::Error as E;
        let code = match e {
            E::Config(_) => 1,
            E::NonFinite(_) | E::FullyMasked(_) => 3,
            _ => 2,
        };
        Self { code, msg: e.to_string() }
    }
}

type Res<T = ()> = std::result::Result<T, Failure>;

pub fn run(cmd: Command) -> Res {
    match cmd {
        Command::Serialize { prompt, out } => serialize(&prompt, &out),
        Command::MaskDump { layout, out } => mask_dump(&layout, &out),
        Command::RopeDump { layout, out, config } => rope_dump(&layout, &out, config.as_deref()),
        Command::GenData { out, n, seed, task, mix } => gen_data(&out, n, seed_override(seed)?, task.as_deref(), &mix),
        Command::Gradcheck { config, eps, tol, coords, corrupt_gradient } => {
            let opts = GradcheckOptions { eps, tol, coords_per_param: coords, grad_scale: if corrupt_gradient { 2.0 } else { 1.0 }, ..Default::default() };
            run_gradcheck(config.as_deref(), &opts)
        }
        Command::Train { config, stage, resume } => train(&config, stage, resume.as_deref()),
        Command::Eval { config, ckpt, task, n } => eval(config.as_deref(), &ckpt, &task, n),
        Command::Generate { ckpt, prompt, max_new } => run_generate(&ckpt, &prompt, max_new),
    }
}

/// `ONEVISION_SEED`, when set, replaces the given seed.
fn seed_override(seed: u64) -> Res<u64> {
    match std::env::var("ONEVISION_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| Failure::usage(format!("ONEVISION_SEED must be an integer, got {v:?}"))),
        Err(_) => Ok(seed),
    }
}

fn read_text(path: &Path) -> Res<String> {
    std::fs::read_to_string(path).map_err(|e| Failure { code: 2, msg: format!("{}: {e}", path.display()) })
}

fn load_config(path: Option<&Path>) -> Res<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::parse(&read_text(p)?)?,
        None => RunConfig::default(),
    };
    cfg.model.seed = seed_override(cfg.model.seed)?;
    Ok(cfg)
}

fn load_prompt(path: &Path) -> Res<PromptSpec> {
    let manifest = Manifest::parse(&read_text(path)?)?;
    Ok(manifest.load_prompt(path.parent().unwrap_or(Path::new(".")))?)
}

fn serialize(prompt: &Path, out: &Path) -> Res {
    let layout = serialize_default(&load_prompt(prompt)?)?;
    write_atomic(out, write_layout_dump(&layout).as_bytes())?;
    Ok(())
}

fn mask_dump(layout: &Path, out: &Path) -> Res {
    let layout = parse_layout_dump(&read_text(layout)?)?;
    write_atomic(out, &build_mask(&layout).to_pgm())?;
    Ok(())
}

fn rope_dump(layout: &Path, out: &Path, config: Option<&Path>) -> Res {
    let layout = parse_layout_dump(&read_text(layout)?)?;
    let rope: RopeConfig = load_config(config)?.model.rope;
    let mut s = format!(
        "# onevision rope v1 d_t={} d_h={} d_w={} theta_t={} theta_h={} theta_w={}\n",
        rope.d_t, rope.d_h, rope.d_w, rope.theta_t, rope.theta_h, rope.theta_w
    );
    for (p, idx) in layout.indices().into_iter().enumerate() {
        let a: Vec<String> = angles(idx, &rope).iter().map(|v| v.to_string()).collect();
        s.push_str(&format!("{p} t={} h={} w={} {}\n", idx.t, idx.h, idx.w, a.join(" ")));
    }
    write_atomic(out, s.as_bytes())?;
    Ok(())
}

fn gen_data(out: &Path, n: usize, seed: u64, task: Option<&str>, mix: &str) -> Res {
    if n == 0 {
        return Err(Failure::usage("--n must be positive"));
    }
    let task: Option<Task> = task.map(str::parse).transpose()?;
    let weights: Vec<f64> = mix.split(':').map(|w| w.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| Failure::usage(format!("bad --mix {mix:?}")))?;
    let weights: [f64; 4] = weights.try_into().map_err(|_| Failure::usage(format!("--mix needs four weights, got {mix:?}")))?;
    let mixture = Mixture::new(weights)?;
    let width = n.to_string().len().max(5);
    for i in 0..n {
        let sample = match task {
            Some(t) => t.generate(derive_seed(seed, i as u64)),
            None => mixture.sample(seed, i as u64),
        };
        write_sample(&out.join(format!("{i:0width$}")), &sample)?;
    }
    println!("wrote {n} samples to {}", out.display());
    Ok(())
}

/// One image plus a few text tokens: the smallest input touching every
/// parameter group.
fn gradcheck_input() -> Res<ModelInput> {
    let mut img = Image::filled(64, 32, [30, 200, 90]);
    img.fill_rect(0, 0, 20, 17, [250, 10, 10]);
    let prompt = PromptSpec::new(vec![PromptItem::Text("ab".into()), PromptItem::Image(img)]);
    let mut input = ModelInput::from_prompt(&prompt)?;
    input.push_str("c");
    input.push_text(SpecialToken::Eos.id());
    Ok(input)
}

fn run_gradcheck(config: Option<&Path>, opts: &GradcheckOptions) -> Res {
    let model_cfg = match config {
        Some(_) => load_config(config)?.model,
        None => ModelConfig { seed: seed_override(0)?, ..ModelConfig::minimal() },
    };
    // Larger weights than the training init keep gradients well above the
    // finite-difference noise floor.
    let mut model = Backbone::new(ModelConfig { init_std: model_cfg.init_std.max(0.3), ..model_cfg })?;
    model.store.set_all_trainable(true);
    let input = gradcheck_input()?;
    let targets = text_targets(&input.layout, 0);
    let shell = model.clone();
    let forward = |tape: &mut Tape, store: &ParamStore| {
        let vars = tape.bind_all(store);
        let logits = shell.forward_tape(tape, &vars, &input)?;
        nexttoken_loss(tape, logits, &input.layout, &targets)
    };
    let report = gradcheck(&mut model.store, forward, opts)?;
    print!("{report}");
    if report.passed {
        Ok(())
    } else {
        Err(Failure::numeric(format!("gradient check failed: max relative error {:.3e}", report.max_rel_err)))
    }
}

fn stage_paths(cfg: &RunConfig, stage: u8) -> (PathBuf, PathBuf) {
    (cfg.out_dir.join(format!("stage{stage}.ckpt")), cfg.out_dir.join(format!("stage{stage}.metrics.log")))
}

fn train(config: &Path, stage: u8, resume: Option<&Path>) -> Res {
    let cfg = load_config(Some(config))?;
    let plan = cfg.stage(stage)?.clone();
    if cfg.out_dir.is_file() {
        return Err(Failure::usage(format!("out_dir {} is a file", cfg.out_dir.display())));
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Failure { code: 2, msg: format!("{}: {e}", cfg.out_dir.display()) })?;
    let (ckpt_path, log_path) = stage_paths(&cfg, stage);
    let check_shape = |found: &ModelConfig| -> Res {
        if *found != cfg.model {
            return Err(Failure { code: 2, msg: "checkpoint model config does not match the run config".into() });
        }
        Ok(())
    };
    let (mut model, start, mut log) = if let Some(path) = resume {
        let (model, header) = load_checkpoint(path)?;
        check_shape(&header.config)?;
        if header.stage != stage || header.step > plan.steps {
            return Err(Failure::usage(format!("{} holds stage {} step {}, cannot resume stage {stage}", path.display(), header.stage, header.step)));
        }
        let previous = std::fs::read_to_string(&log_path).unwrap_or_default();
        let kept: String = previous
            .lines()
            .filter(|l| l.split_whitespace().next().and_then(|s| s.strip_prefix("step=")).and_then(|s| s.parse::<usize>().ok()).is_some_and(|s| s <= header.step))
            .map(|l| format!("{l}\n"))
            .collect();
        (model, header.step, kept)
    } else if stage == 1 {
        (Backbone::new(cfg.model.clone())?, 0, String::new())
    } else {
        let (prev, _) = stage_paths(&cfg, stage - 1);
        if !prev.exists() {
            return Err(Failure::usage(format!("stage {stage} needs the stage {} checkpoint {}", stage - 1, prev.display())));
        }
        let header = read_checkpoint_header(&prev)?;
        check_shape(&header.config)?;
        let want = cfg.stage(stage - 1)?.steps;
        if header.stage != stage - 1 || header.step != want {
            return Err(Failure::usage(format!(
                "{} holds stage {} step {}; stage {} must finish ({want} steps) first",
                prev.display(),
                header.stage,
                header.step,
                stage - 1
            )));
        }
        (load_checkpoint(&prev)?.0, 0, String::new())
    };
    let mut stdout = std::io::stdout();
    run_stage(&cfg, stage, &mut model, start, |m, model| {
        let line = m.to_string();
        let _ = writeln!(stdout, "{line}");
        log.push_str(&line);
        log.push('\n');
        if !m.loss.is_finite() {
            return Err(onevision::Error::NonFinite("training loss"));
        }
        if m.step % cfg.save_every == 0 && m.step < plan.steps {
            save_checkpoint(&ckpt_path, model, stage, m.step)?;
            write_atomic(&log_path, log.as_bytes())?;
        }
        Ok(())
    })?;
    save_checkpoint(&ckpt_path, &model, stage, plan.steps)?;
    write_atomic(&log_path, log.as_bytes())?;
    println!("saved {} and {}", ckpt_path.display(), log_path.display());
    Ok(())
}

fn eval(config: Option<&Path>, ckpt: &Path, task: &str, n: usize) -> Res {
    if n == 0 {
        return Err(Failure::usage("--n must be positive"));
    }
    let task: Task = task.parse()?;
    let cfg = load_config(config)?;
    let (model, _) = load_checkpoint(ckpt)?;
    let r = evaluate(&model, task, n, cfg.model.seed)?;
    println!("task={} n={} correct={} accuracy={:.4}", r.task, r.n, r.correct, r.accuracy());
    Ok(())
}

fn run_generate(ckpt: &Path, prompt: &Path, max_new: usize) -> Res {
    let (model, _) = load_checkpoint(ckpt)?;
    let input = ModelInput::from_prompt(&load_prompt(prompt)?)?;
    println!("{}", detokenize(&generate(&model, &input, max_new)?));
    Ok(())
}
