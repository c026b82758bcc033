//! Line-oriented text form of a [`SequenceLayout`].
//!
//! ```text
//! # onevision layout v1 tokens=10 units=1
//! unit 1 grid=2x2 item=1 frame=- time=-
//! 0 text 256 u=0 t=0 h=0 w=0
//! 4 visual 0,0 u=1 t=4 h=0 w=0
//! ```

use std::fmt::Write;

use super::layout::{SequenceLayout, TokenKind, TokenRecord, UnitInfo};
use crate::rope::IndexTriple;
use crate::{Error, Result};

const MAGIC: &str = "# onevision layout v1";

pub fn write_layout_dump(layout: &SequenceLayout) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} tokens={} units={}", layout.len(), layout.units.len());
    for u in &layout.units {
        let frame = u.frame.map_or("-".to_string(), |f| f.to_string());
        let time = u.timestamp.map_or("-".to_string(), |t| t.to_string());
        let _ = writeln!(s, "unit {} grid={}x{} item={} frame={frame} time={time}", u.id, u.grid_h, u.grid_w, u.item);
    }
    for (i, r) in layout.tokens.iter().enumerate() {
        let what = match r.kind {
            TokenKind::Text(id) => format!("text {id}"),
            TokenKind::Visual { row, col } => format!("visual {row},{col}"),
        };
        let _ = writeln!(s, "{i} {what} u={} t={} h={} w={}", r.unit, r.pos.t, r.pos.h, r.pos.w);
    }
    s
}

fn field<'a>(tok: Option<&'a str>, key: &str, line: usize) -> Result<&'a str> {
    tok.and_then(|t| t.strip_prefix(key)).and_then(|t| t.strip_prefix('=')).ok_or_else(|| {
        Error::Format(format!("layout line {line}: expected {key}=…"))
    })
}

fn num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T> {
    s.parse().map_err(|_| Error::Format(format!("layout line {line}: bad number {s:?}")))
}

fn opt<T: std::str::FromStr>(s: &str, line: usize) -> Result<Option<T>> {
    if s == "-" {
        Ok(None)
    } else {
        num(s, line).map(Some)
    }
}

/// Parses and validates a layout dump.
pub fn parse_layout_dump(text: &str) -> Result<SequenceLayout> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.starts_with(MAGIC) => {}
        _ => return Err(Error::Format("missing layout header".into())),
    }
    let mut layout = SequenceLayout::default();
    for (n, line) in lines {
        let n = n + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let head = it.next().unwrap_or_default();
        if head == "unit" {
            let id: usize = num(it.next().unwrap_or_default(), n)?;
            let grid = field(it.next(), "grid", n)?;
            let (gh, gw) = grid.split_once('x').ok_or_else(|| Error::Format(format!("layout line {n}: bad grid")))?;
            let item = num(field(it.next(), "item", n)?, n)?;
            let frame = opt(field(it.next(), "frame", n)?, n)?;
            let timestamp = opt(field(it.next(), "time", n)?, n)?;
            layout.units.push(UnitInfo { id, grid_h: num(gh, n)?, grid_w: num(gw, n)?, item, frame, timestamp, start: 0 });
            continue;
        }
        let pos: usize = num(head, n)?;
        if pos != layout.tokens.len() {
            return Err(Error::Format(format!("layout line {n}: position {pos} out of order")));
        }
        let kind = match it.next() {
            Some("text") => TokenKind::Text(num(it.next().unwrap_or_default(), n)?),
            Some("visual") => {
                let rc = it.next().unwrap_or_default();
                let (r, c) = rc.split_once(',').ok_or_else(|| Error::Format(format!("layout line {n}: bad patch")))?;
                TokenKind::Visual { row: num(r, n)?, col: num(c, n)? }
            }
            _ => return Err(Error::Format(format!("layout line {n}: unknown token kind"))),
        };
        let unit = num(field(it.next(), "u", n)?, n)?;
        let t = num(field(it.next(), "t", n)?, n)?;
        let h = num(field(it.next(), "h", n)?, n)?;
        let w = num(field(it.next(), "w", n)?, n)?;
        if it.next().is_some() {
            return Err(Error::Format(format!("layout line {n}: trailing fields")));
        }
        layout.tokens.push(TokenRecord { kind, unit, pos: IndexTriple::new(t, h, w) });
    }
    for u in &mut layout.units {
        u.start = layout.tokens.iter().position(|r| r.unit == u.id).unwrap_or(usize::MAX);
    }
    layout.validate()?;
    Ok(layout)
}
