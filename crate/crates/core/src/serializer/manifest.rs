//! Text manifests describing a prompt whose images live in Netpbm files.
//!
//! ```text
//! # onevision prompt v1
//! text "what color?\n"
//! image img0.ppm
//! video duration=1.5 fps=2.0
//! frame 0.0 f0.ppm
//! frame 0.5 f1.ppm
//! answer "red"
//! task caption
//! ```
//!
//! Strings use JSON quoting. `frame` lines attach to the preceding `video`.
//! `answer` and `task` are optional and used by generated corpora.

use std::fmt::Write;
use std::path::{Path, PathBuf};

use super::prompt::{PromptItem, PromptSpec, Video};
use crate::image::Image;
use crate::{Error, Result};

const MAGIC: &str = "# onevision prompt v1";

#[derive(Clone, Debug, PartialEq)]
pub enum ManifestItem {
    Text(String),
    Image(PathBuf),
    Video { duration: Option<f64>, fps: Option<f64>, frames: Vec<(f64, PathBuf)> },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub items: Vec<ManifestItem>,
    pub answer: Option<String>,
    pub task: Option<String>,
}

fn quoted(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization")
}

fn unquote(s: &str, line: usize) -> Result<String> {
    serde_json::from_str(s).map_err(|e| Error::Format(format!("manifest line {line}: {e}")))
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (n, raw) in text.lines().enumerate() {
            let n = n + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (head, rest) = line.split_once(' ').unwrap_or((line, ""));
            let rest = rest.trim();
            match head {
                "text" => m.items.push(ManifestItem::Text(unquote(rest, n)?)),
                "image" if !rest.is_empty() => m.items.push(ManifestItem::Image(PathBuf::from(rest))),
                "video" => {
                    let (mut duration, mut fps) = (None, None);
                    for kv in rest.split_whitespace() {
                        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Format(format!("manifest line {n}: bad field {kv:?}")))?;
                        let v: f64 = v.parse().map_err(|_| Error::Format(format!("manifest line {n}: bad number {v:?}")))?;
                        match k {
                            "duration" => duration = Some(v),
                            "fps" => fps = Some(v),
                            _ => return Err(Error::Format(format!("manifest line {n}: unknown video field {k:?}"))),
                        }
                    }
                    m.items.push(ManifestItem::Video { duration, fps, frames: Vec::new() });
                }
                "frame" => {
                    let (ts, path) = rest.split_once(' ').ok_or_else(|| Error::Format(format!("manifest line {n}: frame needs time and path")))?;
                    let ts: f64 = ts.parse().map_err(|_| Error::Format(format!("manifest line {n}: bad timestamp {ts:?}")))?;
                    match m.items.last_mut() {
                        Some(ManifestItem::Video { frames, .. }) => frames.push((ts, PathBuf::from(path.trim()))),
                        _ => return Err(Error::Format(format!("manifest line {n}: frame outside a video"))),
                    }
                }
                "answer" => m.answer = Some(unquote(rest, n)?),
                "task" if !rest.is_empty() => m.task = Some(rest.to_string()),
                _ => return Err(Error::Format(format!("manifest line {n}: unrecognised entry {head:?}"))),
            }
        }
        if m.items.is_empty() {
            return Err(Error::Prompt("manifest lists no items".into()));
        }
        Ok(m)
    }

    pub fn render(&self) -> String {
        let mut s = format!("{MAGIC}\n");
        for item in &self.items {
            match item {
                ManifestItem::Text(t) => {
                    let _ = writeln!(s, "text {}", quoted(t));
                }
                ManifestItem::Image(p) => {
                    let _ = writeln!(s, "image {}", p.display());
                }
                ManifestItem::Video { duration, fps, frames } => {
                    s.push_str("video");
                    if let Some(d) = duration {
                        let _ = write!(s, " duration={d}");
                    }
                    if let Some(r) = fps {
                        let _ = write!(s, " fps={r}");
                    }
                    s.push('\n');
                    for (ts, p) in frames {
                        let _ = writeln!(s, "frame {ts} {}", p.display());
                    }
                }
            }
        }
        if let Some(a) = &self.answer {
            let _ = writeln!(s, "answer {}", quoted(a));
        }
        if let Some(t) = &self.task {
            let _ = writeln!(s, "task {t}");
        }
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Loads every referenced image, resolving relative paths against `base`.
    pub fn load_prompt(&self, base: &Path) -> Result<PromptSpec> {
        let load = |p: &PathBuf| Image::load(&base.join(p));
        let mut items = Vec::with_capacity(self.items.len());
        for item in &self.items {
            items.push(match item {
                ManifestItem::Text(t) => PromptItem::Text(t.clone()),
                ManifestItem::Image(p) => PromptItem::Image(load(p)?),
                ManifestItem::Video { duration, fps, frames } => PromptItem::Video(Video {
                    frames: frames.iter().map(|(_, p)| load(p)).collect::<Result<_>>()?,
                    timestamps: frames.iter().map(|(t, _)| *t).collect(),
                    duration: *duration,
                    fps: *fps,
                }),
            });
        }
        let prompt = PromptSpec::new(items);
        prompt.validate()?;
        Ok(prompt)
    }
}
