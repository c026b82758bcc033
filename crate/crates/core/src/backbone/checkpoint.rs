use std::path::Path;

use super::model::{Backbone, ModelConfig};
use crate::numerics::Tensor;
use crate::{write_atomic, Error, Result};

const MAGIC: &str = "onevision-checkpoint v1";

/// Parsed text header of a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub stage: u8,
    /// Steps completed within `stage`.
    pub step: usize,
    pub config: ModelConfig,
    /// `(name, shape, offset, len)` in payload order; offsets count floats.
    pub params: Vec<(String, Vec<usize>, usize, usize)>,
}

fn render_header(model: &Backbone, stage: u8, step: usize) -> String {
    let mut s = format!("{MAGIC}\nstage {stage}\nstep {step}\nconfig");
    for (k, v) in model.config.to_pairs() {
        s.push_str(&format!(" {k}={v}"));
    }
    s.push('\n');
    let mut offset = 0;
    for (_, p) in model.store.iter() {
        let shape: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        let len = p.value.len();
        s.push_str(&format!("param {} {} {offset} {len}\n", p.name, shape.join("x")));
        offset += len;
    }
    s.push_str("end\n");
    s
}

/// Writes header and little-endian f32 payload atomically.
pub fn save_checkpoint(path: &Path, model: &Backbone, stage: u8, step: usize) -> Result<()> {
    let mut bytes = render_header(model, stage, step).into_bytes();
    for (_, p) in model.store.iter() {
        for v in p.value.data() {
            let f = *v as f32;
            if f as f64 != *v {
                return Err(Error::Format(format!("{} holds a value not representable in 32 bits", p.name)));
            }
            bytes.extend_from_slice(&f.to_le_bytes());
        }
    }
    write_atomic(path, &bytes)
}

fn parse_header(text: &str) -> Result<CheckpointHeader> {
    let bad = |m: String| Error::Format(format!("checkpoint header: {m}"));
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad("missing magic line".into()));
    }
    let field = |line: Option<&str>, key: &str| -> Result<String> {
        line.and_then(|l| l.strip_prefix(key)).and_then(|l| l.strip_prefix(' ')).map(str::to_string).ok_or_else(|| bad(format!("expected `{key}`")))
    };
    let stage = field(lines.next(), "stage")?.parse().map_err(|_| bad("stage".into()))?;
    let step = field(lines.next(), "step")?.parse().map_err(|_| bad("step".into()))?;
    let mut config = ModelConfig::default();
    for kv in field(lines.next(), "config")?.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("config entry {kv:?}")))?;
        if !config.set(k, v)? {
            return Err(bad(format!("unknown config key {k:?}")));
        }
    }
    let mut params = Vec::new();
    for line in lines {
        if line == "end" {
            return Ok(CheckpointHeader { stage, step, config, params });
        }
        let parts: Vec<&str> = line.split(' ').collect();
        let [tag, name, shape, offset, len] = parts[..] else { return Err(bad(format!("line {line:?}"))) };
        if tag != "param" {
            return Err(bad(format!("line {line:?}")));
        }
        let shape: Vec<usize> = shape.split('x').map(|d| d.parse().map_err(|_| bad(format!("shape in {line:?}")))).collect::<Result<_>>()?;
        let offset = offset.parse().map_err(|_| bad(format!("offset in {line:?}")))?;
        let len = len.parse().map_err(|_| bad(format!("len in {line:?}")))?;
        params.push((name.to_string(), shape, offset, len));
    }
    Err(bad("missing `end`".into()))
}

fn split(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    let marker = b"\nend\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::Format("checkpoint header: missing `end`".into()))?
        + marker.len();
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
    Ok((parse_header(text)?, &bytes[end..]))
}

pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    Ok(split(&std::fs::read(path)?)?.0)
}

/// Rebuilds the model recorded in a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<(Backbone, CheckpointHeader)> {
    let bytes = std::fs::read(path)?;
    let (header, payload) = split(&bytes)?;
    let mut model = Backbone::new(header.config.clone())?;
    if header.params.len() != model.store.len() {
        return Err(Error::Format(format!("{} parameters in checkpoint, model has {}", header.params.len(), model.store.len())));
    }
    let total: usize = header.params.iter().map(|p| p.3).sum();
    if payload.len() != total * 4 {
        return Err(Error::Format(format!("payload holds {} bytes, manifest needs {}", payload.len(), total * 4)));
    }
    let mut expect = 0;
    for ((name, shape, offset, len), p) in header.params.iter().zip(model.store.iter_mut()) {
        if *name != p.name || shape[..] != *p.value.shape() || *offset != expect || *len != p.value.len() {
            return Err(Error::Format(format!("manifest entry {name} {shape:?} does not match model parameter {}", p.name)));
        }
        let data = payload[offset * 4..(offset + len) * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        p.value = Tensor::new(shape.clone(), data)?;
        expect += len;
    }
    Ok((model, header))
}
