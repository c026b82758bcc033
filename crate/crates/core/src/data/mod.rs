//! Deterministic synthetic corpora.
//!
//! Every generator is a pure function of its seed. Sprites are 32×32 and
//! aligned to the visual grid, so each sprite covers exactly one visual token.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{Image, Rgb, BLACK};
use crate::serializer::manifest::{Manifest, ManifestItem};
use crate::serializer::{PromptItem, PromptSpec, Video, PATCH_SIZE};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    TextOnly,
    Caption,
    SameDiff,
    Motion,
}

impl Task {
    /// Mixture order.
    pub const ALL: [Task; 4] = [Task::TextOnly, Task::Caption, Task::SameDiff, Task::Motion];

    pub fn name(self) -> &'static str {
        match self {
            Task::TextOnly => "textonly",
            Task::Caption => "caption",
            Task::SameDiff => "same_diff",
            Task::Motion => "motion",
        }
    }

    pub fn generate(self, seed: u64) -> Sample {
        match self {
            Task::TextOnly => gen_textonly(seed),
            Task::Caption => gen_caption(seed),
            Task::SameDiff => gen_same_diff(seed),
            Task::Motion => gen_motion(seed),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Task::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| Error::Config(format!("unknown task {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub task: Task,
    pub prompt: PromptSpec,
    pub answer: String,
    /// Motion only: the sprite's grid cell `(col, row)` per frame before
    /// wrapping onto the 3×3 grid.
    pub track: Vec<(i64, i64)>,
}

pub const COLORS: [(&str, Rgb); 4] =
    [("red", [255, 0, 0]), ("green", [0, 255, 0]), ("blue", [0, 0, 255]), ("white", [255, 255, 255])];

pub const DIRECTIONS: [(&str, (i64, i64)); 4] = [("left", (-1, 0)), ("right", (1, 0)), ("up", (0, -1)), ("down", (0, 1))];

/// Grid side (in cells) of same/different images and motion frames.
pub const GRID: usize = 3;

/// SplitMix64 finaliser.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the `index`-th draw from a stream seeded with `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn paint(img: &mut Image, col: usize, row: usize, color: Rgb) {
    img.fill_rect(col * PATCH_SIZE, row * PATCH_SIZE, PATCH_SIZE, PATCH_SIZE, color);
}

/// "a+b=" with single digits; the answer is the sum.
pub fn gen_textonly(seed: u64) -> Sample {
    let mut r = rng(seed);
    let (a, b) = (r.gen_range(0..10), r.gen_range(0..10));
    Sample {
        task: Task::TextOnly,
        prompt: PromptSpec::new(vec![PromptItem::Text(format!("{a}+{b}=\n"))]),
        answer: (a + b).to_string(),
        track: Vec::new(),
    }
}

/// One colored square in a random cell of a black image whose sides are
/// multiples of 32 between 32 and 128.
pub fn gen_caption(seed: u64) -> Sample {
    let mut r = rng(seed);
    let (cols, rows) = (r.gen_range(1..=4), r.gen_range(1..=4));
    let (name, color) = COLORS[r.gen_range(0..COLORS.len())];
    let mut img = Image::filled(cols * PATCH_SIZE, rows * PATCH_SIZE, BLACK);
    paint(&mut img, r.gen_range(0..cols), r.gen_range(0..rows), color);
    Sample {
        task: Task::Caption,
        prompt: PromptSpec::new(vec![PromptItem::Text("what color?\n".into()), PromptItem::Image(img)]),
        answer: name.into(),
        track: Vec::new(),
    }
}

/// Two 96×96 images with 2–4 sprites in distinct cells. Half the time the
/// second image recolors exactly one sprite.
pub fn gen_same_diff(seed: u64) -> Sample {
    let mut r = rng(seed);
    let n = r.gen_range(2..=4);
    let mut cells: Vec<usize> = (0..GRID * GRID).collect();
    cells.shuffle(&mut r);
    let sprites: Vec<(usize, usize)> = cells[..n].iter().map(|&c| (c, r.gen_range(0..COLORS.len()))).collect();
    let differ = r.gen_bool(0.5);
    let mut second = sprites.clone();
    if differ {
        let k = r.gen_range(0..n);
        let shift = r.gen_range(1..COLORS.len());
        second[k].1 = (second[k].1 + shift) % COLORS.len();
    }
    let draw = |s: &[(usize, usize)]| {
        let mut img = Image::filled(GRID * PATCH_SIZE, GRID * PATCH_SIZE, BLACK);
        for &(cell, c) in s {
            paint(&mut img, cell % GRID, cell / GRID, COLORS[c].1);
        }
        img
    };
    Sample {
        task: Task::SameDiff,
        prompt: PromptSpec::new(vec![
            PromptItem::Text("same or different?\n".into()),
            PromptItem::Image(draw(&sprites)),
            PromptItem::Image(draw(&second)),
        ]),
        answer: if differ { "different" } else { "same" }.into(),
        track: Vec::new(),
    }
}

/// A white square moving one cell per frame on a 3×3 torus, 4–8 frames
/// 0.5 s apart. The start cell is uniform, so every single frame has the
/// same position distribution whatever the direction.
pub fn gen_motion(seed: u64) -> Sample {
    let mut r = rng(seed);
    let frames = r.gen_range(4..=8);
    let (name, (dx, dy)) = DIRECTIONS[r.gen_range(0..DIRECTIONS.len())];
    let g = GRID as i64;
    let (x0, y0) = (r.gen_range(0..g), r.gen_range(0..g));
    let track: Vec<(i64, i64)> = (0..frames as i64).map(|k| (x0 + k * dx, y0 + k * dy)).collect();
    let images = track
        .iter()
        .map(|&(x, y)| {
            let mut img = Image::filled(GRID * PATCH_SIZE, GRID * PATCH_SIZE, BLACK);
            paint(&mut img, x.rem_euclid(g) as usize, y.rem_euclid(g) as usize, [255, 255, 255]);
            img
        })
        .collect();
    let video = Video {
        frames: images,
        timestamps: (0..frames).map(|k| k as f64 * 0.5).collect(),
        duration: Some(frames as f64 * 0.5),
        fps: Some(2.0),
    };
    Sample {
        task: Task::Motion,
        prompt: PromptSpec::new(vec![PromptItem::Video(video), PromptItem::Text("which way?\n".into())]),
        answer: name.into(),
        track,
    }
}

/// Categorical sampler over [`Task::ALL`].
#[derive(Clone, Debug)]
pub struct Mixture {
    weights: [f64; 4],
    dist: WeightedIndex<f64>,
}

impl Mixture {
    pub fn new(weights: [f64; 4]) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("mixture weights must be non-negative, got {weights:?}")));
        }
        let dist = WeightedIndex::new(weights).map_err(|_| Error::EmptyData)?;
        Ok(Self { weights, dist })
    }

    pub fn weights(&self) -> [f64; 4] {
        self.weights
    }

    /// Task of the `index`-th draw of the stream seeded with `master`.
    pub fn task(&self, master: u64, index: u64) -> Task {
        Task::ALL[self.dist.sample(&mut rng(derive_seed(master, index)))]
    }

    /// The `index`-th sample of the stream seeded with `master`.
    pub fn sample(&self, master: u64, index: u64) -> Sample {
        self.task(master, index).generate(splitmix64(derive_seed(master, index)))
    }
}

/// Infinite i.i.d. stream over the four tasks.
pub fn mixture_stream(seed: u64, weights: [f64; 4]) -> Result<impl Iterator<Item = Sample>> {
    let m = Mixture::new(weights)?;
    Ok((0u64..).map(move |i| m.sample(seed, i)))
}

/// Writes `sample` into `dir` as Netpbm images plus `manifest.txt`.
pub fn write_sample(dir: &Path, sample: &Sample) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut items = Vec::new();
    let mut n_img = 0;
    for item in &sample.prompt.items {
        items.push(match item {
            PromptItem::Text(t) => ManifestItem::Text(t.clone()),
            PromptItem::Image(img) => {
                let name = PathBuf::from(format!("img{n_img}.ppm"));
                n_img += 1;
                img.save(&dir.join(&name))?;
                ManifestItem::Image(name)
            }
            PromptItem::Video(v) => {
                let mut frames = Vec::new();
                for (k, (img, &ts)) in v.frames.iter().zip(&v.timestamps).enumerate() {
                    let name = PathBuf::from(format!("frame{k}.ppm"));
                    img.save(&dir.join(&name))?;
                    frames.push((ts, name));
                }
                ManifestItem::Video { duration: v.duration, fps: v.fps, frames }
            }
        });
    }
    let manifest = Manifest { items, answer: Some(sample.answer.clone()), task: Some(sample.task.name().into()) };
    crate::write_atomic(&dir.join("manifest.txt"), manifest.render().as_bytes())
}

/// Reads a directory written by [`write_sample`].
pub fn read_sample(dir: &Path) -> Result<Sample> {
    let m = Manifest::read(&dir.join("manifest.txt"))?;
    let task = m.task.as_deref().ok_or_else(|| Error::Format("manifest has no task".into()))?.parse()?;
    let answer = m.answer.clone().ok_or_else(|| Error::Format("manifest has no answer".into()))?;
    Ok(Sample { task, prompt: m.load_prompt(dir)?, answer, track: Vec::new() })
}

#[cfg(test)]
mod tests;
