use std::collections::HashMap;

use super::{Gradients, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A named trainable (or frozen) tensor.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub trainable: bool,
}

/// Ordered collection of parameters addressable by id or stable name.
///
/// Values are held in `f64` but kept representable in `f32`: the optimizer
/// and initialisers round through [`ParamStore::round_to_storage`], which is
/// what lets checkpoints carry a 32-bit payload and still reload bit-exactly.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, value, grad: None, trainable: true });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Marks trainable exactly the parameters matching any of `patterns`.
    pub fn set_trainable_patterns(&mut self, patterns: &[String]) {
        for p in &mut self.params {
            p.trainable = patterns.iter().any(|pat| glob_match(pat, &p.name));
        }
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        self.params.iter().filter(|p| p.trainable).map(|p| p.name.as_str()).collect()
    }

    /// Sets every trainable gradient to zeros and clears frozen ones.
    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = p.trainable.then(|| Tensor::zeros(p.value.shape()));
        }
    }

    /// Adds `scale · g` into the gradient slot of every trainable parameter
    /// present in `grads`.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) -> Result<()> {
        for (id, g) in grads.params() {
            let p = &mut self.params[id.0];
            if !p.trainable {
                continue;
            }
            if g.shape() != p.value.shape() {
                return Err(Error::shape("accumulate", format!("{}: {:?} vs {:?}", p.name, g.shape(), p.value.shape())));
            }
            let slot = p.grad.get_or_insert_with(|| Tensor::zeros(g.shape()));
            for (s, v) in slot.data_mut().iter_mut().zip(g.data()) {
                *s += scale * v;
            }
        }
        Ok(())
    }

    pub fn round_to_storage(&mut self) {
        for p in &mut self.params {
            for v in p.value.data_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// FNV-1a over the IEEE bytes of every selected parameter, in store order.
    pub fn checksum(&self, mut select: impl FnMut(&Parameter) -> bool) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.params.iter().filter(|p| select(p)) {
            for b in p.name.bytes().chain(p.value.data().iter().flat_map(|v| v.to_bits().to_le_bytes())) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Glob match supporting `*` (any run of characters, including dots).
pub fn glob_match(pattern: &str, name: &str) -> bool {
    let p = pattern.as_bytes();
    let s = name.as_bytes();
    let (mut pi, mut si) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while si < s.len() {
        if pi < p.len() && p[pi] == b'*' {
            star = Some((pi, si));
            pi += 1;
        } else if pi < p.len() && p[pi] == s[si] {
            pi += 1;
            si += 1;
        } else if let Some((sp, ss)) = star {
            pi = sp + 1;
            si = ss + 1;
            star = Some((sp, ss + 1));
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == b'*' {
        pi += 1;
    }
    pi == p.len()
}
