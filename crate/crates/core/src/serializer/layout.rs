use std::ops::Range;

use super::prompt::{PromptItem, PromptSpec};
use super::tokenizer::{tokenize_text, SpecialToken, TokenId};
use crate::image::Image;
use crate::rope::IndexTriple;
use crate::{Error, Result};

/// Side of the square pixel region covered by one visual token.
pub const PATCH_SIZE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Text(TokenId),
    /// Patch at grid `(row, col)` of its unit.
    Visual { row: usize, col: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenRecord {
    pub kind: TokenKind,
    /// Visual unit id; `0` for text.
    pub unit: usize,
    pub pos: IndexTriple,
}

impl TokenRecord {
    pub fn is_text(&self) -> bool {
        matches!(self.kind, TokenKind::Text(_))
    }

    pub fn token_id(&self) -> Option<TokenId> {
        match self.kind {
            TokenKind::Text(id) => Some(id),
            TokenKind::Visual { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitInfo {
    pub id: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Index of the prompt item the unit came from.
    pub item: usize,
    /// Frame index within a video item.
    pub frame: Option<usize>,
    pub timestamp: Option<f64>,
    /// Position of the unit's first token.
    pub start: usize,
}

impl UnitInfo {
    pub fn len(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len()
    }
}

/// The serialized token stream with per-token unit ids and index triples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SequenceLayout {
    pub tokens: Vec<TokenRecord>,
    pub units: Vec<UnitInfo>,
}

impl SequenceLayout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn next_t(&self) -> usize {
        self.tokens.last().map_or(0, |r| r.pos.t + 1)
    }

    /// Appends a text token in the next temporal slot.
    pub fn push_text(&mut self, id: TokenId) {
        let t = self.next_t();
        self.tokens.push(TokenRecord { kind: TokenKind::Text(id), unit: 0, pos: IndexTriple::new(t, 0, 0) });
    }

    pub fn push_str(&mut self, s: &str) {
        for id in tokenize_text(s) {
            self.push_text(id);
        }
    }

    /// Appends a `grid_h × grid_w` visual unit in one temporal slot.
    pub fn push_unit(&mut self, grid_h: usize, grid_w: usize, item: usize, frame: Option<usize>, timestamp: Option<f64>) {
        let t = self.next_t();
        let id = self.units.len() + 1;
        let start = self.tokens.len();
        for row in 0..grid_h {
            for col in 0..grid_w {
                self.tokens.push(TokenRecord {
                    kind: TokenKind::Visual { row, col },
                    unit: id,
                    pos: IndexTriple::new(t, row, col),
                });
            }
        }
        self.units.push(UnitInfo { id, grid_h, grid_w, item, frame, timestamp, start });
    }

    pub fn unit_ids(&self) -> Vec<usize> {
        self.tokens.iter().map(|r| r.unit).collect()
    }

    pub fn indices(&self) -> Vec<IndexTriple> {
        self.tokens.iter().map(|r| r.pos).collect()
    }

    /// Temporal slots as position ranges: one per text token, one per unit.
    pub fn blocks(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.tokens.len() {
            let u = self.tokens[i].unit;
            if u == 0 {
                out.push(i..i + 1);
                i += 1;
            } else {
                let r = self.units[u - 1].range();
                i = r.end;
                out.push(r);
            }
        }
        out
    }

    /// Whether a block may start at position `p` (a unit never straddles it).
    pub fn is_boundary(&self, p: usize) -> bool {
        if p == 0 || p >= self.tokens.len() {
            return true;
        }
        let (a, b) = (self.tokens[p - 1].unit, self.tokens[p].unit);
        a == 0 || a != b
    }

    /// Truncated copy holding the first `n` tokens; `n` must be a boundary.
    pub fn prefix(&self, n: usize) -> Self {
        debug_assert!(self.is_boundary(n));
        let tokens = self.tokens[..n].to_vec();
        let units = self.units.iter().filter(|u| u.start < n).cloned().collect();
        Self { tokens, units }
    }

    /// Checks every structural invariant of a serialized layout.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(format!("invalid layout: {m}")));
        let mut expected_unit = 1;
        let mut slot = 0usize;
        let mut i = 0;
        while i < self.tokens.len() {
            let r = self.tokens[i];
            if r.pos.t != slot {
                return bad(format!("token {i} has t={} but slot {slot}", r.pos.t));
            }
            match r.kind {
                TokenKind::Text(_) => {
                    if r.unit != 0 || r.pos.h != 0 || r.pos.w != 0 {
                        return bad(format!("text token {i} must have u=h=w=0"));
                    }
                    i += 1;
                }
                TokenKind::Visual { .. } => {
                    if r.unit != expected_unit {
                        return bad(format!("token {i} has unit {} but expected {expected_unit}", r.unit));
                    }
                    let Some(info) = self.units.get(r.unit - 1) else {
                        return bad(format!("unit {} missing from unit table", r.unit));
                    };
                    if info.id != r.unit || info.start != i || info.is_empty() {
                        return bad(format!("unit table entry for {} is inconsistent", r.unit));
                    }
                    for (k, pos) in info.range().enumerate() {
                        let Some(t) = self.tokens.get(pos) else {
                            return bad(format!("unit {} truncated", r.unit));
                        };
                        let (row, col) = (k / info.grid_w, k % info.grid_w);
                        if t.unit != r.unit
                            || t.kind != (TokenKind::Visual { row, col })
                            || t.pos != IndexTriple::new(slot, row, col)
                        {
                            return bad(format!("token {pos} breaks unit {} structure", r.unit));
                        }
                    }
                    i = info.range().end;
                    expected_unit += 1;
                }
            }
            slot += 1;
        }
        if expected_unit != self.units.len() + 1 {
            return bad("unit table lists units absent from the token stream".into());
        }
        Ok(())
    }
}

/// Visual grid of an image: one token per 32×32 region, rounding up.
pub fn grid_dims(height: usize, width: usize) -> (usize, usize) {
    (height.div_ceil(PATCH_SIZE), width.div_ceil(PATCH_SIZE))
}

fn fmt_seconds(v: f64) -> String {
    format!("{v:.1}")
}

/// `"video: duration={D}s frames={N} fps={R}\n"`, absent fields dropped.
pub fn render_global_prefix(duration: Option<f64>, n_frames: usize, fps: Option<f64>) -> String {
    let mut s = String::from("video:");
    if let Some(d) = duration {
        s.push_str(&format!(" duration={}s", fmt_seconds(d)));
    }
    s.push_str(&format!(" frames={n_frames}"));
    if let Some(r) = fps {
        s.push_str(&format!(" fps={}", fmt_seconds(r)));
    }
    s.push('\n');
    s
}

/// Parses a rendered global prefix back into `(duration, frames, fps)`.
pub fn parse_global_prefix(s: &str) -> Result<(Option<f64>, usize, Option<f64>)> {
    let bad = || Error::Format(format!("bad video prefix {s:?}"));
    let body = s.strip_prefix("video:").and_then(|b| b.strip_suffix('\n')).ok_or_else(bad)?;
    let (mut duration, mut frames, mut fps) = (None, None, None);
    for field in body.split_whitespace() {
        let (k, v) = field.split_once('=').ok_or_else(bad)?;
        match k {
            "duration" => duration = Some(v.strip_suffix('s').ok_or_else(bad)?.parse().map_err(|_| bad())?),
            "frames" => frames = Some(v.parse().map_err(|_| bad())?),
            "fps" => fps = Some(v.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        }
    }
    Ok((duration, frames.ok_or_else(bad)?, fps))
}

/// `"[{τ}s]:"` with one fractional digit.
pub fn render_timestamp(tau: f64) -> String {
    format!("[{}s]:", fmt_seconds(tau))
}

/// Serializes `prompt`, asking `grid_fn` for each image's visual grid.
///
/// Emits `<bos>`, then the items in order. Each image or frame becomes
/// `<img>`, its row-major visual tokens, `</img>`; a video is preceded by its
/// global prefix and each frame by its timestamp text.
pub fn serialize(prompt: &PromptSpec, grid_fn: impl Fn(&Image) -> (usize, usize)) -> Result<SequenceLayout> {
    prompt.validate()?;
    let mut layout = SequenceLayout::default();
    layout.push_text(SpecialToken::Bos.id());
    let push_image = |layout: &mut SequenceLayout, img: &Image, item: usize, frame, ts| -> Result<()> {
        let (gh, gw) = grid_fn(img);
        if gh == 0 || gw == 0 {
            return Err(Error::Prompt(format!("item {item}: empty visual grid")));
        }
        layout.push_text(SpecialToken::ImgOpen.id());
        layout.push_unit(gh, gw, item, frame, ts);
        layout.push_text(SpecialToken::ImgClose.id());
        Ok(())
    };
    for (i, item) in prompt.items.iter().enumerate() {
        match item {
            PromptItem::Text(s) => layout.push_str(s),
            PromptItem::Image(img) => push_image(&mut layout, img, i, None, None)?,
            PromptItem::Video(v) => {
                layout.push_str(&render_global_prefix(v.duration, v.frames.len(), v.fps));
                for (k, (frame, &tau)) in v.frames.iter().zip(&v.timestamps).enumerate() {
                    layout.push_str(&render_timestamp(tau));
                    push_image(&mut layout, frame, i, Some(k), Some(tau))?;
                }
            }
        }
    }
    Ok(layout)
}

/// [`serialize`] with the standard ceil-32 grid.
pub fn serialize_default(prompt: &PromptSpec) -> Result<SequenceLayout> {
    serialize(prompt, |img| grid_dims(img.height(), img.width()))
}

#[cfg(test)]
mod tests {
    use super::super::prompt::Video;
    use super::super::tokenizer::detokenize;
    use super::*;
    use crate::image::{Image, BLACK};

    fn img(h: usize, w: usize) -> Image {
        Image::filled(w, h, BLACK)
    }

    #[test]
    fn grid_dims_cases() {
        assert_eq!(grid_dims(64, 64), (2, 2));
        assert_eq!(grid_dims(33, 31), (2, 1));
        assert_eq!(grid_dims(1024, 1024), (32, 32));
    }

    #[test]
    fn prefix_formats() {
        assert_eq!(render_global_prefix(Some(4.0), 8, Some(2.0)), "video: duration=4.0s frames=8 fps=2.0\n");
        assert_eq!(render_global_prefix(None, 3, None), "video: frames=3\n");
        assert_eq!(render_timestamp(0.5), "[0.5s]:");
    }

    #[test]
    fn prefix_roundtrip() {
        for (d, n, r) in [(Some(4.0), 8, Some(2.0)), (None, 3, None), (Some(12.5), 1, None), (None, 64, Some(29.9))] {
            assert_eq!(parse_global_prefix(&render_global_prefix(d, n, r)).unwrap(), (d, n, r));
        }
        assert!(parse_global_prefix("video: fps=2.0\n").is_err());
    }

    #[test]
    fn text_image_text_example() {
        let p = PromptSpec::new(vec![
            PromptItem::Text("ab".into()),
            PromptItem::Image(img(64, 64)),
            PromptItem::Text("c".into()),
        ]);
        let l = serialize_default(&p).unwrap();
        assert_eq!(l.len(), 10);
        let ts: Vec<usize> = l.tokens.iter().map(|r| r.pos.t).collect();
        assert_eq!(ts, vec![0, 1, 2, 3, 4, 4, 4, 4, 5, 6]);
        let us: Vec<usize> = l.unit_ids();
        assert_eq!(us, vec![0, 0, 0, 0, 1, 1, 1, 1, 0, 0]);
        assert_eq!(l.tokens[7].pos, IndexTriple::new(4, 1, 1));
        assert_eq!(l.tokens[5].kind, TokenKind::Visual { row: 0, col: 1 });
        assert_eq!(l.tokens[3].token_id(), Some(SpecialToken::ImgOpen.id()));
        l.validate().unwrap();
    }

    #[test]
    fn back_to_back_images() {
        let p = PromptSpec::new(vec![PromptItem::Image(img(32, 32)), PromptItem::Image(img(32, 32))]);
        let l = serialize_default(&p).unwrap();
        let a = &l.tokens[l.units[0].start];
        let b = &l.tokens[l.units[1].start];
        assert_eq!((a.unit, b.unit), (1, 2));
        // </img> and <img> each take a slot between the two units.
        assert_eq!(b.pos.t - a.pos.t, 3);
    }

    #[test]
    fn video_frames_in_order() {
        let v = Video { frames: vec![img(32, 32); 3], timestamps: vec![0.0, 0.5, 1.0], duration: None, fps: None };
        let l = serialize_default(&PromptSpec::new(vec![PromptItem::Video(v)])).unwrap();
        assert_eq!(l.units.len(), 3);
        let text: Vec<u32> = l.tokens.iter().filter_map(|r| r.token_id()).collect();
        assert_eq!(detokenize(&text), "video: frames=3\n[0.0s]:[0.5s]:[1.0s]:");
        let ts: Vec<usize> = l.units.iter().map(|u| l.tokens[u.start].pos.t).collect();
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
        l.validate().unwrap();
    }

    #[test]
    fn serialize_errors() {
        assert!(serialize_default(&PromptSpec::default()).is_err());
        let v = Video { frames: vec![img(32, 32); 2], timestamps: vec![1.0, 1.0], duration: None, fps: None };
        assert!(serialize_default(&PromptSpec::new(vec![PromptItem::Video(v)])).is_err());
        let empty = Image::new(0, 4, crate::image::Channels::Gray, vec![]).unwrap();
        assert!(serialize_default(&PromptSpec::new(vec![PromptItem::Image(empty)])).is_err());
    }

    #[test]
    fn validate_catches_broken_layouts() {
        let p = PromptSpec::new(vec![PromptItem::Text("x".into()), PromptItem::Image(img(64, 32))]);
        let l = serialize_default(&p).unwrap();
        let mut bad = l.clone();
        bad.tokens[3].pos.t += 1;
        assert!(bad.validate().is_err());
        let mut bad = l.clone();
        bad.tokens[1].unit = 1;
        assert!(bad.validate().is_err());
        let mut bad = l;
        bad.tokens.swap(3, 4);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn blocks_and_boundaries() {
        let p = PromptSpec::new(vec![PromptItem::Text("a".into()), PromptItem::Image(img(64, 64))]);
        let l = serialize_default(&p).unwrap();
        let blocks = l.blocks();
        assert_eq!(blocks, vec![0..1, 1..2, 2..3, 3..7, 7..8]);
        assert!(l.is_boundary(3) && l.is_boundary(7));
        assert!(!l.is_boundary(4));
    }
}
