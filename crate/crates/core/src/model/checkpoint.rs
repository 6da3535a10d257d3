//! Versioned plain-text checkpoint container.
//!
//! ```text
//! # xmodal encoder checkpoint
//! format xmodal-checkpoint/1
//! scalar f64
//! input_frame_dim 39
//! hidden_dim 64
//! embedding_dim 128
//! pooling mean
//! seed 7
//! meta transfer_kind target
//! block w1 2496
//! <2496 space-separated numbers>
//! block b1 64
//! ...
//! end
//! ```
//!
//! Numbers use the shortest decimal form that parses back to the same bits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{EncoderParams, EncoderSpec, BLOCK_NAMES};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: &str = "xmodal-checkpoint/1";

/// Free-form `key value` metadata lines (keys without whitespace).
pub type CheckpointMeta = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: EncoderParams<T>,
    pub seed: u64,
    pub meta: CheckpointMeta,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(params: EncoderParams<T>, seed: u64) -> Self {
        Self { params, seed, meta: CheckpointMeta::new() }
    }

    pub fn to_text(&self) -> String {
        let spec = &self.params.spec;
        let mut out = String::new();
        out.push_str("# xmodal encoder checkpoint\n");
        let _ = writeln!(out, "format {CHECKPOINT_VERSION}");
        let _ = writeln!(out, "scalar {}", T::NAME);
        let _ = writeln!(out, "input_frame_dim {}", spec.input_frame_dim);
        let _ = writeln!(out, "hidden_dim {}", spec.hidden_dim);
        let _ = writeln!(out, "embedding_dim {}", spec.embedding_dim);
        out.push_str("pooling mean\n");
        let _ = writeln!(out, "seed {}", self.seed);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, values) in self.params.blocks() {
            let _ = writeln!(out, "block {name} {}", values.len());
            let mut first = true;
            for v in values {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::FormatError(msg);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let mut next = |what: &str| lines.next().ok_or_else(|| bad(format!("unexpected end of file, expected {what}")));

        let header = next("format line")?;
        let version = header.strip_prefix("format ").ok_or_else(|| bad(format!("expected format line, found `{header}`")))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::FormatVersionMismatch { expected: CHECKPOINT_VERSION.into(), found: version.into() });
        }
        let mut field = |key: &str| -> Result<String> {
            let line = next(key)?;
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.trim().to_string()),
                _ => Err(bad(format!("expected `{key}`, found `{line}`"))),
            }
        };
        let scalar = field("scalar")?;
        if scalar != T::NAME {
            return Err(bad(format!("checkpoint holds {scalar} values, requested {}", T::NAME)));
        }
        let dim = |v: String, key: &str| v.parse::<usize>().map_err(|_| bad(format!("bad {key} `{v}`")));
        let input = dim(field("input_frame_dim")?, "input_frame_dim")?;
        let hidden = dim(field("hidden_dim")?, "hidden_dim")?;
        let embedding = dim(field("embedding_dim")?, "embedding_dim")?;
        let pooling = field("pooling")?;
        if pooling != "mean" {
            return Err(bad(format!("unknown pooling `{pooling}`")));
        }
        let seed_text = field("seed")?;
        let seed = seed_text.parse::<u64>().map_err(|_| bad(format!("bad seed `{seed_text}`")))?;
        let spec = EncoderSpec::new(input, hidden, embedding).map_err(|e| bad(e.to_string()))?;

        let mut meta = CheckpointMeta::new();
        let mut params = EncoderParams::zeros(spec);
        let mut line = next("block or meta line")?;
        while let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.insert(k.to_string(), v.to_string());
            line = next("block line")?;
        }
        for (b, name) in BLOCK_NAMES.iter().enumerate() {
            if b > 0 {
                line = next("block line")?;
            }
            let mut parts = line.split_whitespace();
            let (tag, block, count) = (parts.next(), parts.next(), parts.next());
            if tag != Some("block") || block != Some(*name) {
                return Err(bad(format!("expected block `{name}`, found `{line}`")));
            }
            let count: usize = count.and_then(|c| c.parse().ok()).ok_or_else(|| bad(format!("bad block header `{line}`")))?;
            let expected = spec.block_lens()[b];
            if count != expected {
                return Err(Error::ShapeMismatch { block: name, expected, found: count });
            }
            let data = next("block values").or_else(|e| if count == 0 { Ok("") } else { Err(e) })?;
            let values = data
                .split_whitespace()
                .map(|t| t.parse::<T>().map_err(|_| bad(format!("bad number `{t}` in block {name}"))))
                .collect::<Result<Vec<T>>>()?;
            if values.len() != count {
                return Err(bad(format!("block {name}: expected {count} values, found {}", values.len())));
            }
            *params.blocks_mut()[b].1 = values;
        }
        match next("end marker")? {
            "end" => {}
            other => return Err(bad(format!("expected `end`, found `{other}`"))),
        }
        Ok(Self { params, seed, meta })
    }
}

pub fn save_checkpoint<T: Scalar>(checkpoint: &Checkpoint<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint.to_text()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_text(&text)
}
