use crate::{Error, Result};

/// Rotated keys and values of one layer for the committed prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerKV {
    k_width: usize,
    v_width: usize,
    keys: Vec<f64>,
    values: Vec<f64>,
}

impl LayerKV {
    pub fn new(k_width: usize, v_width: usize) -> Self {
        Self { k_width, v_width, keys: Vec::new(), values: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.keys.len() / self.k_width
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn k_width(&self) -> usize {
        self.k_width
    }

    pub fn v_width(&self) -> usize {
        self.v_width
    }

    pub fn keys(&self) -> &[f64] {
        &self.keys
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn truncate(&mut self, rows: usize) {
        self.keys.truncate(rows * self.k_width);
        self.values.truncate(rows * self.v_width);
    }

    pub(crate) fn append(&mut self, k: &[f64], v: &[f64]) {
        debug_assert_eq!(k.len() / self.k_width, v.len() / self.v_width);
        self.keys.extend_from_slice(k);
        self.values.extend_from_slice(v);
    }
}

/// Per-layer caches plus the unit ids of the committed tokens.
///
/// The committed prefix always ends on a block boundary: after a text token
/// or after the last token of a visual unit.
#[derive(Clone, Debug, PartialEq)]
pub struct KVCache {
    pub layers: Vec<LayerKV>,
    units: Vec<usize>,
}

impl KVCache {
    pub fn new(n_layers: usize, k_width: usize, v_width: usize) -> Self {
        Self { layers: vec![LayerKV::new(k_width, v_width); n_layers], units: Vec::new() }
    }

    /// Number of committed tokens.
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn committed_units(&self) -> &[usize] {
        &self.units
    }

    /// Checks that `units` (the unit ids of the candidate new tokens, which
    /// follow the committed prefix in `all_units`) form one text token or
    /// exactly one whole visual unit.
    pub fn check_block(&self, all_units: &[usize], start: usize, end: usize) -> Result<()> {
        if start != self.len() {
            return Err(Error::Cache(format!("block starts at {start} but {} tokens are committed", self.len())));
        }
        if all_units[..start] != self.units[..] {
            return Err(Error::Cache("layout prefix differs from the committed tokens".into()));
        }
        if end <= start || end > all_units.len() {
            return Err(Error::Cache(format!("empty or out-of-range block {start}..{end}")));
        }
        let u = all_units[start];
        if u == 0 {
            if end - start != 1 {
                return Err(Error::Cache("a text block must hold exactly one token".into()));
            }
            return Ok(());
        }
        let unit_start = all_units.iter().position(|&x| x == u).unwrap_or(start);
        let unit_end = unit_start + all_units[unit_start..].iter().take_while(|&&x| x == u).count();
        if unit_start != start || unit_end != end {
            return Err(Error::Cache(format!(
                "block {start}..{end} covers a partial visual unit (unit {u} spans {unit_start}..{unit_end})"
            )));
        }
        Ok(())
    }

    pub(crate) fn commit(&mut self, units: &[usize]) {
        self.units.extend_from_slice(units);
        debug_assert!(self.layers.iter().all(|l| l.len() == self.units.len()));
    }
}
