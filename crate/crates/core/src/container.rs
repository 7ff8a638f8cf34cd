//! Flat binary container used for parameters, checkpoints and datasets.
//!
//! Layout: one line of compact JSON (the header) terminated by `\n`,
//! followed by the payload, a run of 64-bit little-endian floats. The header
//! names every block with its shape and byte offset into the payload:
//!
//! ```text
//! {"format":"hgnl-container","version":1,"kind":"params","meta":{...},
//!  "blocks":[{"name":"wq.weight","shape":[16,8,64],"offset":0,"len":8192},...],
//!  "payload_bytes":...}\n
//! <payload>
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::aggregator::{AggregatorConfig, AggregatorParams, AttentionParams};
use crate::error::{Error, Result};

pub const FORMAT: &str = "hgnl-container";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Block {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { name: name.into(), shape, data }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockHeader {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: String,
    meta: Value,
    blocks: Vec<BlockHeader>,
    payload_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Value,
    pub blocks: Vec<Block>,
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: Value) -> Self {
        Self { kind: kind.into(), meta, blocks: Vec::new() }
    }

    pub fn push(&mut self, block: Block) {
        self.blocks.push(block);
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let h = BlockHeader {
                    name: b.name.clone(),
                    shape: b.shape.clone(),
                    offset,
                    len: b.data.len() as u64,
                };
                offset += 8 * b.data.len() as u64;
                h
            })
            .collect();
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            blocks,
            payload_bytes: offset,
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.reserve(offset as usize);
        for b in &self.blocks {
            for x in &b.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Parses container bytes; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header line".into()))?;
        let header: Header =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| bad(format!("header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(bad(format!("unsupported format {} v{}", header.format, header.version)));
        }
        let payload = &bytes[nl + 1..];
        if payload.len() as u64 != header.payload_bytes {
            return Err(bad(format!(
                "payload is {} bytes, header says {}",
                payload.len(),
                header.payload_bytes
            )));
        }
        let mut blocks = Vec::with_capacity(header.blocks.len());
        for h in header.blocks {
            let expected: usize = h.shape.iter().product();
            if expected as u64 != h.len {
                return Err(bad(format!("block {}: shape {:?} vs len {}", h.name, h.shape, h.len)));
            }
            let start = h.offset as usize;
            let end = start
                .checked_add(8 * h.len as usize)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| bad(format!("block {} overruns payload", h.name)))?;
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blocks.push(Block { name: h.name, shape: h.shape, data });
        }
        Ok(Self { kind: header.kind, meta: header.meta, blocks })
    }

    /// Writes via a sibling temporary file so a failed write never leaves a
    /// truncated container at `path`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |source| Error::Io { path: path.to_path_buf(), source };
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = PathBuf::from(tmp);
        fs::write(&tmp, self.to_bytes()).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes, path)
    }

    pub(crate) fn require(&self, name: &str, path: &Path) -> Result<&Block> {
        self.block(name).ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            reason: format!("missing block {name:?}"),
        })
    }

    pub(crate) fn expect_kind(&self, kind: &str, path: &Path) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("expected a {kind} container, found {}", self.kind),
            });
        }
        Ok(())
    }
}

/// Appends aggregator parameter blocks, names prefixed with `prefix`.
pub fn push_params(c: &mut Container, prefix: &str, params: &AggregatorParams) {
    let Some(a) = &params.attention else { return };
    for (name, layer) in [("wq", &a.wq), ("wk", &a.wk), ("wv", &a.wv)] {
        let w = &layer.weights;
        c.push(Block::new(
            format!("{prefix}{name}.weight"),
            vec![w.stored_blocks(), w.out_per_group, w.in_per_group],
            w.data.clone(),
        ));
        c.push(Block::new(format!("{prefix}{name}.bias"), vec![layer.bias.len()], layer.bias.clone()));
    }
    c.push(Block::new(format!("{prefix}s"), vec![1], vec![a.s]));
}

/// Rebuilds parameters for `config` from blocks written by [`push_params`].
pub fn pull_params(
    c: &Container,
    prefix: &str,
    config: &AggregatorConfig,
    path: &Path,
) -> Result<AggregatorParams> {
    config.validate()?;
    if !config.kind.has_attention() {
        return Ok(AggregatorParams { config: *config, attention: None });
    }
    let mut a = AttentionParams::zeros(config)?;
    for (name, dst) in a.blocks_mut() {
        let block = c.require(&format!("{prefix}{name}"), path)?;
        if block.data.len() != dst.len() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("block {prefix}{name}: {} values, config needs {}", block.data.len(), dst.len()),
            });
        }
        dst.copy_from_slice(&block.data);
    }
    Ok(AggregatorParams { config: *config, attention: Some(a) })
}

pub fn save_params(params: &AggregatorParams, path: &Path) -> Result<()> {
    let meta = serde_json::json!({ "config": params.config });
    let mut c = Container::new("params", meta);
    push_params(&mut c, "", params);
    c.write(path)
}

pub fn load_params(path: &Path) -> Result<AggregatorParams> {
    let c = Container::read(path)?;
    c.expect_kind("params", path)?;
    let config: AggregatorConfig = serde_json::from_value(c.meta["config"].clone())
        .map_err(|e| Error::Format { path: path.to_path_buf(), reason: format!("config: {e}") })?;
    pull_params(&c, "", &config, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregator::init_params;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            blocks in proptest::collection::vec(proptest::collection::vec(any::<u64>(), 1..20), 0..5)
        ) {
            let mut c = Container::new("test", serde_json::json!({"a": 1, "note": "line\nbreak"}));
            for (i, bits) in blocks.iter().enumerate() {
                let data = bits.iter().map(|&b| f64::from_bits(b)).collect::<Vec<_>>();
                c.push(Block::new(format!("b{i}"), vec![data.len()], data));
            }
            let back = Container::from_bytes(&c.to_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(back.blocks.len(), c.blocks.len());
            for (x, y) in back.blocks.iter().zip(&c.blocks) {
                let xb: Vec<u64> = x.data.iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u64> = y.data.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(xb, yb);
            }
        }
    }

    #[test]
    fn params_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        for cfg in [
            AggregatorConfig::nl(8, 4),
            AggregatorConfig::hgnl(16, 8, 4, 2, true),
            AggregatorConfig::avg(8),
        ] {
            let mut p = init_params(&cfg, 11).unwrap();
            if let Some(a) = p.attention.as_mut() {
                a.s = 0.123456789;
            }
            save_params(&p, &path).unwrap();
            assert_eq!(load_params(&path).unwrap(), p);
            assert!(!dir.path().join("p.bin.partial").exists());
        }
    }

    #[test]
    fn header_is_one_json_line() {
        let p = init_params(&AggregatorConfig::nl(4, 2), 0).unwrap();
        let mut c = Container::new("params", serde_json::json!({ "config": p.config }));
        push_params(&mut c, "", &p);
        let bytes = c.to_bytes();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header: Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        assert_eq!(header["blocks"][0]["name"], "wq.weight");
        assert_eq!(header["blocks"][1]["offset"], 8 * 8);
        assert_eq!(bytes.len() - nl - 1, header["payload_bytes"].as_u64().unwrap() as usize);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let p = Path::new("x");
        assert!(matches!(Container::from_bytes(b"no newline", p), Err(Error::Format { .. })));
        let mut c = Container::new("t", Value::Null);
        c.push(Block::new("a", vec![2], vec![1.0, 2.0]));
        let mut bytes = c.to_bytes();
        bytes.pop();
        assert!(matches!(Container::from_bytes(&bytes, p), Err(Error::Format { .. })));
        assert!(matches!(load_params(Path::new("/nonexistent/p.bin")), Err(Error::Io { .. })));
    }
}
