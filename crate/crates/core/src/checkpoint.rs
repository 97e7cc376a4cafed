//! `SRGD0001` checkpoints: a text header naming the configuration and
//! every parameter, followed by the raw little-endian `f32` values.
//!
//! ```text
//! SRGD0001
//! config image_h=64
//! ...
//! param patch_rgb.weight 64,3,8,8 0
//! ...
//! end
//! <f32 data>
//! ```
//! The last field of a `param` line is its element offset into the data.

use std::fs;
use std::path::Path;

use crate::config::{model_pairs, set_model_key};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::ParamStore;
use crate::tensor::{numel, Tensor};

pub const MAGIC: &str = "SRGD0001";

pub fn to_bytes(cfg: &ModelConfig, store: &ParamStore) -> Result<Vec<u8>> {
    let mut head = format!("{MAGIC}\n");
    for (k, v) in model_pairs(cfg) {
        head.push_str(&format!("config {k}={v}\n"));
    }
    let mut offset = 0usize;
    let mut data = Vec::with_capacity(4 * store.count());
    for id in store.ids() {
        let p = &store.params()[id.index()];
        let dims: Vec<String> = p.shape.iter().map(|d| d.to_string()).collect();
        head.push_str(&format!("param {} {} {offset}\n", p.name, dims.join(",")));
        for v in store.try_get(id)?.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
        offset += numel(&p.shape);
    }
    head.push_str("end\n");
    let mut out = head.into_bytes();
    out.extend_from_slice(&data);
    Ok(out)
}

pub fn save(path: &Path, cfg: &ModelConfig, store: &ParamStore) -> Result<()> {
    fs::write(path, to_bytes(cfg, store)?)?;
    Ok(())
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

/// Rebuilds the model a checkpoint was written from.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let bad = |m: String| Error::Checkpoint(m);
    let mut pos = 0usize;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header".into()))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8".into()))
    };
    if next_line()? != MAGIC {
        return Err(bad(format!("missing {MAGIC} magic")));
    }
    let mut cfg = ModelConfig::toy();
    let mut entries = Vec::new();
    loop {
        let line = next_line()?;
        if line == "end" {
            break;
        }
        if let Some(kv) = line.strip_prefix("config ") {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("bad config line '{line}'")))?;
            if !set_model_key(&mut cfg, k, v).map_err(|e| bad(e.to_string()))? {
                return Err(bad(format!("unknown config key '{k}'")));
            }
        } else if let Some(rest) = line.strip_prefix("param ") {
            let f: Vec<&str> = rest.split(' ').collect();
            if f.len() != 3 {
                return Err(bad(format!("bad param line '{line}'")));
            }
            let shape = f[1]
                .split(',')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(format!("bad shape in '{line}'")))?;
            let offset = f[2].parse().map_err(|_| bad(format!("bad offset in '{line}'")))?;
            entries.push(Entry { name: f[0].to_string(), shape, offset });
        } else {
            return Err(bad(format!("unexpected header line '{line}'")));
        }
    }
    let data = &bytes[pos..];
    let mut model = Model::build(&cfg).map_err(|e| bad(e.to_string()))?;
    if entries.len() != model.store.len() {
        return Err(bad(format!("{} parameters stored, model has {}", entries.len(), model.store.len())));
    }
    let ids: Vec<_> = model.store.ids().collect();
    for (id, e) in ids.into_iter().zip(&entries) {
        let p = &model.store.params()[id.index()];
        if p.name != e.name || p.shape != e.shape {
            return Err(bad(format!("parameter '{}' {:?} does not match model '{}' {:?}", e.name, e.shape, p.name, p.shape)));
        }
        let n = numel(&e.shape);
        let raw = data
            .get(4 * e.offset..4 * (e.offset + n))
            .ok_or_else(|| bad(format!("data for '{}' truncated", e.name)))?;
        let vals = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        model.store.set(id, Tensor::new(e.shape.clone(), vals)?)?;
    }
    Ok(model)
}

pub fn load(path: &Path) -> Result<Model> {
    from_bytes(&fs::read(path)?)
}

/// Loads a checkpoint and checks it was written for `expected`'s architecture.
pub fn load_matching(path: &Path, expected: &ModelConfig) -> Result<Model> {
    let model = load(path)?;
    let arch = |c: &ModelConfig| {
        (
            c.image_h,
            c.image_w,
            c.patch,
            c.embed_dim,
            c.depth_blocks,
            c.heads,
            c.fusion_k,
            c.fusion_dim(),
            c.decoder_blocks,
            c.num_classes,
            c.decoder_input,
            c.use_depth,
        )
    };
    if arch(&model.cfg) != arch(expected) {
        return Err(Error::Checkpoint(format!(
            "checkpoint architecture {:?} differs from requested {:?}",
            arch(&model.cfg),
            arch(expected)
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig { image_h: 16, image_w: 16, patch: 4, embed_dim: 16, fusion_k: 2, seed: 5, ..ModelConfig::toy() }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = Model::build(&small()).unwrap();
        let back = from_bytes(&to_bytes(&m.cfg, &m.store).unwrap()).unwrap();
        assert_eq!(back.cfg, m.cfg);
        assert_eq!(back.store, m.store);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let m = Model::build(&small()).unwrap();
        let bytes = to_bytes(&m.cfg, &m.store).unwrap();
        assert!(matches!(from_bytes(b"NOPE\n"), Err(Error::Checkpoint(_))));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 4]), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn mismatched_architecture() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = Model::build(&small()).unwrap();
        save(&path, &m.cfg, &m.store).unwrap();
        assert!(load_matching(&path, &small()).is_ok());
        let other = ModelConfig { decoder_blocks: 2, ..small() };
        assert!(matches!(load_matching(&path, &other), Err(Error::Checkpoint(_))));
    }
}
