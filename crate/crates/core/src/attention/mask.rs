use std::ops::Range;

use crate::serializer::SequenceLayout;

/// Dense boolean attention mask: `allowed(i, j)` iff query `i` may attend to
/// key `j`.
///
/// A query attends to every earlier-or-equal position, and additionally to
/// every position of its own visual unit, so tokens inside one image or
/// frame see each other bidirectionally while units stay causal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    n: usize,
    allowed: Vec<bool>,
    units: Vec<usize>,
}

impl AttentionMask {
    /// Mask over tokens with the given unit ids (0 = text).
    pub fn from_units(units: &[usize]) -> Self {
        let n = units.len();
        let allowed = mask_rows(units, 0..n, n);
        Self { n, allowed, units: units.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allowed
    }

    pub fn units(&self) -> &[usize] {
        &self.units
    }

    /// Ranges of tokens that share one visual unit.
    pub fn unit_blocks(&self) -> Vec<Range<usize>> {
        unit_spans(&self.units)
    }

    /// Binary PGM (P5), `n×n`, 255 where allowed and 0 where masked.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.n, self.n).into_bytes();
        out.extend(self.allowed.iter().map(|&a| if a { 255u8 } else { 0 }));
        out
    }
}

fn unit_spans(units: &[usize]) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < units.len() {
        let u = units[i];
        let start = i;
        while i < units.len() && units[i] == u {
            i += 1;
        }
        if u > 0 {
            spans.push(start..i);
        }
    }
    spans
}

/// Rows `rows` of the mask over the first `cols` tokens of `units`, as a
/// dense `[rows.len() × cols]` slab: a lower triangle plus one full block
/// per visual unit.
pub(crate) fn mask_rows(units: &[usize], rows: Range<usize>, cols: usize) -> Vec<bool> {
    let m = rows.len();
    let mut out = vec![false; m * cols];
    for (r, i) in rows.clone().enumerate() {
        let upto = (i + 1).min(cols);
        out[r * cols..r * cols + upto].fill(true);
    }
    for span in unit_spans(&units[..cols]) {
        for i in rows.clone().filter(|i| span.contains(i)) {
            let r = i - rows.start;
            out[r * cols + span.start..r * cols + span.end].fill(true);
        }
    }
    out
}

/// Mask of a serialized layout.
pub fn build_mask(layout: &SequenceLayout) -> AttentionMask {
    AttentionMask::from_units(&layout.unit_ids())
}
