//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report is printed even
//! when everything passes. Exits non-zero if any criterion fails.
//!
//! `ONEVISION_SKIP_TRAINING=1` skips the learnability run (reported as
//! SKIP, which also exits non-zero). `ONEVISION_SKIP_ABLATION=1` skips only
//! the informational ablation.

use std::path::{Path, PathBuf};
use std::time::Instant;

use cpu_time::ProcessTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use onevision::attention::build_mask;
use onevision::backbone::{
    generate, generate_uncached, nexttoken_loss, stage1_patterns, text_targets, train_stage, Backbone, ModelConfig,
    ModelInput,
};
use onevision::config::RunConfig;
use onevision::data::Task;
use onevision::image::Image;
use onevision::numerics::{gradcheck, GradcheckOptions, ParamStore, Tape, Tensor};
use onevision::patch_embed::{embed_image, prepare, truncated_normal, PatchEmbed};
use onevision::pipeline::{evaluate, run_stage, stage_data};
use onevision::rope::{apply_rope, block_scores, decoupled_score, IndexTriple, RopeConfig};
use onevision::serializer::manifest::Manifest;
use onevision::serializer::{
    serialize_default, write_layout_dump, PromptItem, PromptSpec, SequenceLayout, TokenKind, Video,
};

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn random_layout(rng: &mut ChaCha8Rng, max_len: usize) -> SequenceLayout {
    let mut layout = SequenceLayout::default();
    let target = rng.gen_range(1..=max_len);
    let mut item = 0;
    while layout.len() < target {
        let room = target - layout.len();
        if rng.gen_bool(0.5) {
            let (gh, gw) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            if gh * gw <= room {
                layout.push_unit(gh, gw, item, None, None);
                item += 1;
                continue;
            }
        }
        layout.push_text(rng.gen_range(0..256));
    }
    layout
}

fn c1_mask_oracle() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut cells = 0usize;
    for case in 0..200 {
        let layout = random_layout(&mut rng, 64);
        let mask = build_mask(&layout);
        let u: Vec<usize> = layout.tokens.iter().map(|t| t.unit).collect();
        for i in 0..u.len() {
            for j in 0..u.len() {
                let want = j <= i || (u[i] == u[j] && u[i] > 0);
                if mask.allowed(i, j) != want {
                    return Err(format!("layout {case}: entry ({i},{j}) is {} but the predicate says {want}", mask.allowed(i, j)));
                }
                cells += 1;
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 5.0, format!("200 layouts, {cells} entries exact, {secs:.3}s (limit 5s)"))
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn random_triple(rng: &mut ChaCha8Rng) -> IndexTriple {
    IndexTriple::new(rng.gen_range(0..2000), rng.gen_range(0..64), rng.gen_range(0..64))
}

/// Textbook single-axis rotary embedding.
fn rope_1d(v: &[f64], pos: usize, theta: f64) -> Vec<f64> {
    let d = v.len();
    let mut out = v.to_vec();
    for c in 0..d / 2 {
        let ang = pos as f64 * theta.powf(-2.0 * c as f64 / d as f64);
        let (s, co) = ang.sin_cos();
        out[2 * c] = v[2 * c] * co - v[2 * c + 1] * s;
        out[2 * c + 1] = v[2 * c] * s + v[2 * c + 1] * co;
    }
    out
}

fn c2_rope_invariance() -> Check {
    let cfg = RopeConfig::default();
    let d = cfg.head_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (q, k) = (random_vec(&mut rng, d), random_vec(&mut rng, d));
        let (i, j) = (random_triple(&mut rng), random_triple(&mut rng));
        let s = random_triple(&mut rng);
        let shift = |p: IndexTriple| IndexTriple::new(p.t + s.t, p.h + s.h, p.w + s.w);
        let a = decoupled_score(&apply_rope(&q, i, &cfg).unwrap(), &apply_rope(&k, j, &cfg).unwrap(), &cfg);
        let b = decoupled_score(&apply_rope(&q, shift(i), &cfg).unwrap(), &apply_rope(&k, shift(j), &cfg).unwrap(), &cfg);
        worst = worst.max((a - b).abs());
    }
    let flat = RopeConfig { d_t: 16, d_h: 0, d_w: 0, ..cfg };
    let mut worst_1d = 0.0f64;
    for _ in 0..1000 {
        let v = random_vec(&mut rng, flat.head_dim());
        let p = random_triple(&mut rng);
        let got = apply_rope(&v, p, &flat).unwrap();
        let want = rope_1d(&v, p.t, flat.theta_t);
        for (g, w) in got.iter().zip(&want) {
            worst_1d = worst_1d.max((g - w).abs());
        }
    }
    ensure(
        worst <= 1e-6 && worst_1d <= 1e-10,
        format!("shift invariance max |Δ| {worst:.2e} (tol 1e-6); d_h=d_w=0 vs 1-axis RoPE max |Δ| {worst_1d:.2e} (tol 1e-10)"),
    )
}

fn c3_score_decomposition() -> Check {
    let cfg = RopeConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let q = apply_rope(&random_vec(&mut rng, cfg.head_dim()), random_triple(&mut rng), &cfg).unwrap();
        let k = apply_rope(&random_vec(&mut rng, cfg.head_dim()), random_triple(&mut rng), &cfg).unwrap();
        let [t, h, w] = block_scores(&q, &k, &cfg);
        let mut full = 0.0;
        for (a, b) in q.iter().zip(&k) {
            full += a * b;
        }
        worst = worst.max((t + h + w - full).abs());
        let scaled = decoupled_score(&q, &k, &cfg) * (cfg.head_dim() as f64).sqrt();
        worst = worst.max((scaled - full).abs());
    }
    ensure(worst <= 1e-12, format!("1000 draws, max |blocks − dot| {worst:.2e} (tol 1e-12)"))
}

fn c4_token_accounting() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = ModelConfig::default();
    let mut store = ParamStore::new();
    let pe = PatchEmbed::register(&mut store, cfg.d_mid(), cfg.d_model, &mut truncated_normal(&mut rng, 0.02));
    for _ in 0..50 {
        let (h, w) = (rng.gen_range(1..=200), rng.gen_range(1..=200));
        let img = Image::filled(w, h, [rng.gen(), rng.gen(), rng.gen()]);
        let rows = embed_image(&prepare(&img), &pe.params(&store)).map_err(|e| e.to_string())?.rows();
        let want = h.div_ceil(32) * w.div_ceil(32);
        if rows != want {
            return Err(format!("{h}x{w}: {rows} tokens, expected {want}"));
        }
    }
    Ok("50 random sizes, token counts exact".into())
}

fn gradcheck_input() -> ModelInput {
    let mut img = Image::filled(64, 32, [30, 200, 90]);
    img.fill_rect(0, 0, 20, 17, [250, 10, 10]);
    let prompt = PromptSpec::new(vec![PromptItem::Text("ab".into()), PromptItem::Image(img), PromptItem::Text("cd".into())]);
    ModelInput::from_prompt(&prompt).unwrap()
}

fn c5_gradcheck() -> Check {
    let t0 = Instant::now();
    let cfg = ModelConfig { init_std: 0.3, ..ModelConfig::minimal() };
    let mut model = Backbone::new(cfg.clone()).map_err(|e| e.to_string())?;
    model.store.set_all_trainable(true);
    let input = gradcheck_input();
    let texts = input.layout.tokens.iter().filter(|t| t.token_id().is_some_and(|id| id < 256)).count();
    let targets = text_targets(&input.layout, 0);
    let shell = model.clone();
    let forward = |tape: &mut Tape, store: &ParamStore| {
        let vars = tape.bind_all(store);
        let logits = shell.forward_tape(tape, &vars, &input)?;
        nexttoken_loss(tape, logits, &input.layout, &targets)
    };
    let opts = GradcheckOptions { coords_per_param: usize::MAX, ..GradcheckOptions::default() };
    let report = gradcheck(&mut model.store, forward, &opts).map_err(|e| e.to_string())?;
    let secs = t0.elapsed().as_secs_f64();
    ensure(
        report.passed && report.max_rel_err <= 1e-3 && secs < 60.0,
        format!(
            "{} layers, 1 image + {texts} text tokens, all {} coordinates, max rel err {:.2e} (tol 1e-3), {secs:.1}s (limit 60s)",
            cfg.n_layers(),
            report.checked,
            report.max_rel_err
        ),
    )
}

fn c6_stage1_freezing() -> Check {
    let mut model = Backbone::new(ModelConfig::default()).map_err(|e| e.to_string())?;
    let before = model.store.clone();
    let mut plan = RunConfig::default().stage(1).unwrap().clone();
    plan.steps = 50;
    let data = stage_data(&plan, model.config.seed).map_err(|e| e.to_string())?;
    train_stage(&mut model, &plan, 0, data, |_, _| Ok(())).map_err(|e| e.to_string())?;
    let patterns = stage1_patterns();
    let in_stage1 = |name: &str| {
        name.starts_with("patch_embed.") || name.starts_with("layers.prebuffer.") || name.contains(".qk_spatial.")
    };
    let (mut frozen, mut moved) = (0, 0);
    for ((_, a), (_, b)) in before.iter().zip(model.store.iter()) {
        let same = a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        if in_stage1(&a.name) {
            if same {
                return Err(format!("{} did not change during stage 1", a.name));
            }
            moved += 1;
        } else {
            if !same {
                return Err(format!("{} changed during stage 1", a.name));
            }
            frozen += 1;
        }
    }
    Ok(format!("50 steps: {frozen} post-LLM tensors byte-identical, {moved} trainable tensors changed ({patterns:?})"))
}

fn random_image(rng: &mut ChaCha8Rng) -> Image {
    let mut img = Image::filled(rng.gen_range(20..=96), rng.gen_range(20..=96), [rng.gen(), rng.gen(), rng.gen()]);
    for _ in 0..rng.gen_range(0..3) {
        let (x, y) = (rng.gen_range(0..img.width()), rng.gen_range(0..img.height()));
        img.fill_rect(x, y, rng.gen_range(1..=32), rng.gen_range(1..=32), [rng.gen(), rng.gen(), rng.gen()]);
    }
    img
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    (0..rng.gen_range(1..=6)).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

fn random_prompt(rng: &mut ChaCha8Rng) -> ModelInput {
    let mut items = Vec::new();
    for _ in 0..rng.gen_range(1..=4) {
        items.push(match rng.gen_range(0..4) {
            0 | 1 => PromptItem::Text(random_text(rng)),
            2 => PromptItem::Image(random_image(rng)),
            _ => {
                let n = rng.gen_range(1..=3);
                let frame = random_image(rng);
                let frames = (0..n).map(|_| frame.clone()).collect();
                PromptItem::Video(Video {
                    frames,
                    timestamps: (0..n).map(|i| i as f64 * 0.5).collect(),
                    duration: Some(n as f64 * 0.5),
                    fps: Some(2.0),
                })
            }
        });
    }
    items.push(PromptItem::Text(random_text(rng)));
    ModelInput::from_prompt(&PromptSpec::new(items)).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn c7_kv_cache() -> Check {
    let model = Backbone::new(ModelConfig::default()).map_err(|e| e.to_string())?;
    let vocab = model.config.vocab;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let input = random_prompt(&mut rng);
        let full = model.logits(&input).map_err(|e| e.to_string())?;
        let mut cache = model.new_cache();
        for block in input.layout.blocks() {
            let rows = model.extend_cache(&mut cache, &input, block.clone()).map_err(|e| e.to_string())?;
            let want = &full.data()[block.start * vocab..block.end * vocab];
            worst = worst.max(max_abs_diff(rows.data(), want));
        }
        let a = generate(&model, &input, 8).map_err(|e| e.to_string())?;
        let b = generate_uncached(&model, &input, 8).map_err(|e| e.to_string())?;
        if a != b {
            return Err(format!("prompt {case}: cached decode {a:?} differs from uncached {b:?}"));
        }
    }
    ensure(worst <= 1e-5, format!("50 prompts, max |Δlogit| {worst:.2e} (tol 1e-5), greedy decodes identical"))
}

fn c8_prefix_stability() -> Check {
    let model = Backbone::new(ModelConfig::default()).map_err(|e| e.to_string())?;
    let vocab = model.config.vocab;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst, mut checked) = (0.0f64, 0);
    for _ in 0..30 {
        let input = random_prompt(&mut rng);
        let base = model.logits(&input).map_err(|e| e.to_string())?;
        let bounds: Vec<usize> = input.layout.blocks().iter().map(|b| b.start).filter(|&p| p > 0).collect();
        let p = bounds[rng.gen_range(0..bounds.len())];
        let mut changed = input.clone();
        for tok in &mut changed.layout.tokens[p..] {
            if let TokenKind::Text(id) = &mut tok.kind {
                *id = (*id + 1 + rng.gen_range(0..200)) % 256;
            }
        }
        for (unit, img) in changed.layout.units.iter().zip(changed.images.iter_mut()) {
            if unit.start >= p {
                *img = Tensor::new(img.shape().to_vec(), (0..img.len()).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
            }
        }
        changed.push_str(&random_text(&mut rng));
        let other = model.logits(&changed).map_err(|e| e.to_string())?;
        worst = worst.max(max_abs_diff(&base.data()[..p * vocab], &other.data()[..p * vocab]));
        checked += 1;
    }
    ensure(worst <= 1e-6, format!("{checked} prompts, suffix edits move pre-boundary logits by at most {worst:.2e} (tol 1e-6)"))
}

fn toy_config() -> RunConfig {
    let path = workspace_root().join("configs/toy.cfg");
    RunConfig::parse(&std::fs::read_to_string(&path).expect("configs/toy.cfg")).expect("valid toy config")
}

struct RunResult {
    cpu_secs: f64,
    acc: Vec<(Task, f64)>,
}

fn train_and_eval(cfg: &RunConfig, tag: &str) -> std::result::Result<RunResult, String> {
    let mut model = Backbone::new(cfg.model.clone()).map_err(|e| e.to_string())?;
    let cpu = ProcessTime::now();
    for stage in 1..=3u8 {
        let metrics = run_stage(cfg, stage, &mut model, 0, |_, _| Ok(())).map_err(|e| e.to_string())?;
        let last = metrics.last().map_or(f64::NAN, |m| m.loss);
        eprintln!("  [{tag}] stage {stage}: {} steps, final loss {last:.4}, {:.0} cpu-s", metrics.len(), cpu.elapsed().as_secs_f64());
    }
    let cpu_secs = cpu.elapsed().as_secs_f64();
    let mut acc = Vec::new();
    for task in [Task::Motion, Task::Caption, Task::SameDiff] {
        let r = evaluate(&model, task, 500, 2024).map_err(|e| e.to_string())?;
        acc.push((task, r.accuracy()));
    }
    Ok(RunResult { cpu_secs, acc })
}

fn format_acc(acc: &[(Task, f64)]) -> String {
    acc.iter().map(|(t, a)| format!("{t}={:.1}%", a * 100.0)).collect::<Vec<_>>().join(" ")
}

fn c9_learnability() -> Option<Check> {
    if std::env::var_os("ONEVISION_SKIP_TRAINING").is_some() {
        return None;
    }
    let cfg = toy_config();
    let run = match train_and_eval(&cfg, "default") {
        Ok(r) => r,
        Err(e) => return Some(Err(e)),
    };
    let need = [(Task::Motion, 0.90), (Task::Caption, 0.95), (Task::SameDiff, 0.85)];
    let met = need.iter().zip(&run.acc).all(|((_, floor), (_, got))| got >= floor);
    let within = run.cpu_secs <= 30.0 * 60.0;
    let msg = format!(
        "{} over 500 held-out each (need motion>=90% caption>=95% same_diff>=85%), training {:.1} cpu-min (limit 30)",
        format_acc(&run.acc),
        run.cpu_secs / 60.0
    );
    if std::env::var_os("ONEVISION_SKIP_ABLATION").is_none() {
        let mut ablated = cfg.clone();
        ablated.model.rope.d_h = 0;
        ablated.model.rope.d_w = 0;
        match train_and_eval(&ablated, "d_h=d_w=0") {
            Ok(r) => println!(
                "  ablation (informational): default {} | d_h=d_w=0 {} ({:.1} cpu-min)",
                format_acc(&run.acc),
                format_acc(&r.acc),
                r.cpu_secs / 60.0
            ),
            Err(e) => println!("  ablation (informational): failed: {e}"),
        }
    }
    Some(ensure(met && within, msg))
}

fn c10_golden_serialization() -> Check {
    let dir = workspace_root().join("crates/cli/tests/golden");
    for case in ["text_image", "two_images", "video"] {
        let path = dir.join(case).join("prompt.txt");
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let prompt = Manifest::parse(&text).and_then(|m| m.load_prompt(&dir.join(case))).map_err(|e| e.to_string())?;
        let got = write_layout_dump(&serialize_default(&prompt).map_err(|e| e.to_string())?);
        let want = std::fs::read_to_string(dir.join(case).join("expected.layout")).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("{case}: layout dump differs from the golden file"));
        }
    }
    Ok("text_image, two_images, video byte-exact".into())
}

type Criterion = (&'static str, fn() -> Option<Check>);

fn main() {
    let criteria: [Criterion; 10] = [
        ("mask oracle equivalence", || Some(c1_mask_oracle())),
        ("RoPE relative invariance", || Some(c2_rope_invariance())),
        ("score decomposition", || Some(c3_score_decomposition())),
        ("token accounting", || Some(c4_token_accounting())),
        ("gradient check", || Some(c5_gradcheck())),
        ("stage-1 freezing", || Some(c6_stage1_freezing())),
        ("KV-cache equivalence", || Some(c7_kv_cache())),
        ("prefix stability", || Some(c8_prefix_stability())),
        ("learnability", c9_learnability),
        ("golden serialization", || Some(c10_golden_serialization())),
    ];
    let mut all_ok = true;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = check();
        let secs = t0.elapsed().as_secs_f64();
        let (status, detail) = match outcome {
            Some(Ok(d)) => ("PASS", d),
            Some(Err(d)) => ("FAIL", d),
            None => ("SKIP", "ONEVISION_SKIP_TRAINING is set".to_string()),
        };
        all_ok &= status == "PASS";
        println!("criterion {:>2} {status} {name}: {detail} [{secs:.1}s]", i + 1);
    }
    if !all_ok {
        std::process::exit(1);
    }
}
