//! Checkpoint container: "3DTC-CKPT v1".
//!
//! Layout: magic `3DCP`, u16 version, u32 tensor count; per tensor a u8
//! length-prefixed ASCII name, u8 ndim, u32 dims, f32 little-endian payload
//! in row-major order; then a u32 length-prefixed JSON blob holding the
//! network config and free-form training metadata. Tensors are sorted by
//! name so identical parameters always serialize to identical bytes.

use super::params::ParamSet;
use super::{NetConfig, NetError, Result};
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 4] = b"3DCP";
const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Trailer {
    config: NetConfig,
    meta: serde_json::Value,
}

/// 64-bit FNV-1a hash, used to fingerprint checkpoint files in run metadata.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Serialize parameters, config, and metadata to `path`.
pub fn save_checkpoint(
    path: &Path,
    params: &ParamSet<f32>,
    cfg: &NetConfig,
    meta: serde_json::Value,
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(params.0.len())
        .map_err(|_| NetError::Format("too many tensors".into()))?;
    buf.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in params.iter() {
        if name.is_empty() || name.len() > u8::MAX as usize || !name.is_ascii() {
            return Err(NetError::Format(format!("tensor name {name:?} not ASCII")));
        }
        buf.push(name.len() as u8);
        buf.extend_from_slice(name.as_bytes());
        let ndim = u8::try_from(tensor.ndim())
            .map_err(|_| NetError::Format(format!("{name}: too many dimensions")))?;
        buf.push(ndim);
        for &d in tensor.shape() {
            let d32 = u32::try_from(d)
                .map_err(|_| NetError::Format(format!("{name}: dimension too large")))?;
            buf.extend_from_slice(&d32.to_le_bytes());
        }
        let slice = tensor
            .as_slice()
            .expect("parameter tensors are contiguous row-major");
        for &v in slice {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let trailer = serde_json::to_vec(&Trailer {
        config: *cfg,
        meta,
    })
    .map_err(|e| NetError::Format(format!("metadata serialization: {e}")))?;
    let tlen = u32::try_from(trailer.len())
        .map_err(|_| NetError::Format("metadata too large".into()))?;
    buf.extend_from_slice(&tlen.to_le_bytes());
    buf.extend_from_slice(&trailer);

    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(NetError::Format(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8v(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16v(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32v(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn parse(bytes: &[u8], with_payloads: bool) -> Result<(ParamSet<f32>, NetConfig, serde_json::Value)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(NetError::Format("bad magic, not a checkpoint".into()));
    }
    let version = cur.u16v("version")?;
    if version != VERSION {
        return Err(NetError::Format(format!("unsupported version {version}")));
    }
    let count = cur.u32v("tensor count")? as usize;
    let mut params = ParamSet::new();
    let mut prev_name = String::new();
    for i in 0..count {
        let nlen = cur.u8v("name length")? as usize;
        let name_bytes = cur.take(nlen, "tensor name")?;
        let name = std::str::from_utf8(name_bytes)
            .ok()
            .filter(|s| s.is_ascii() && !s.is_empty())
            .ok_or_else(|| NetError::Format(format!("tensor {i}: invalid name")))?
            .to_string();
        if i > 0 && name <= prev_name {
            return Err(NetError::Format(format!(
                "tensor names not sorted: {name:?} after {prev_name:?}"
            )));
        }
        let ndim = cur.u8v("ndim")? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(NetError::Format(format!("{name}: bad ndim {ndim}")));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = cur.u32v("dimension")? as usize;
            if d == 0 {
                return Err(NetError::Format(format!("{name}: zero dimension")));
            }
            dims.push(d);
        }
        let len: usize = dims.iter().product();
        let payload = cur.take(len * 4, "tensor payload")?;
        if with_payloads {
            let mut vals = Vec::with_capacity(len);
            for chunk in payload.chunks_exact(4) {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(NetError::Format(format!("{name}: non-finite value")));
                }
                vals.push(v);
            }
            params.insert(&name, ArrayD::from_shape_vec(IxDyn(&dims), vals).unwrap());
        }
        prev_name = name;
    }
    let tlen = cur.u32v("metadata length")? as usize;
    let trailer_bytes = cur.take(tlen, "metadata")?;
    if cur.pos != bytes.len() {
        return Err(NetError::Format(format!(
            "{} trailing bytes after metadata",
            bytes.len() - cur.pos
        )));
    }
    let trailer: Trailer = serde_json::from_slice(trailer_bytes)
        .map_err(|e| NetError::Format(format!("metadata JSON: {e}")))?;
    Ok((params, trailer.config, trailer.meta))
}

/// Load parameters, config, and metadata from `path`.
pub fn load_checkpoint(path: &Path) -> Result<(ParamSet<f32>, NetConfig, serde_json::Value)> {
    let bytes = std::fs::read(path)?;
    parse(&bytes, true)
}

/// Read only the config and metadata, skipping tensor payloads.
pub fn read_checkpoint_meta(path: &Path) -> Result<(NetConfig, serde_json::Value)> {
    let bytes = std::fs::read(path)?;
    let (_, cfg, meta) = parse(&bytes, false)?;
    Ok((cfg, meta))
}

#[cfg(test)]
mod tests {
    use super::super::params::init_params;
    use super::*;
    use serde_json::json;

    #[test]
    fn roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let cfg = NetConfig::desk(16, 16);
        let params: ParamSet<f32> = init_params(&cfg, 5, true);
        let meta = json!({"stage": "pretrain", "steps": 2000, "seed": 5});
        save_checkpoint(&path, &params, &cfg, meta.clone()).unwrap();

        let (loaded, lcfg, lmeta) = load_checkpoint(&path).unwrap();
        assert_eq!(lcfg, cfg);
        assert_eq!(lmeta, meta);
        assert_eq!(loaded.0.len(), params.0.len());
        for (name, t) in params.iter() {
            assert_eq!(t, &loaded.0[name], "{name}");
        }
        let (mcfg, mmeta) = read_checkpoint_meta(&path).unwrap();
        assert_eq!(mcfg, cfg);
        assert_eq!(mmeta, meta);
    }

    #[test]
    fn serialization_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = NetConfig::desk(16, 16);
        let params: ParamSet<f32> = init_params(&cfg, 9, false);
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        save_checkpoint(&p1, &params, &cfg, json!({"k": 1})).unwrap();
        save_checkpoint(&p2, &params, &cfg, json!({"k": 1})).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }

    #[test]
    fn corrupt_and_truncated_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let cfg = NetConfig::desk(16, 16);
        let params: ParamSet<f32> = init_params(&cfg, 5, true);
        save_checkpoint(&path, &params, &cfg, json!({})).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(NetError::Format(_))));

        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(NetError::Format(_))));

        let mut extra = bytes.clone();
        extra.push(0);
        std::fs::write(&path, &extra).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(NetError::Format(_))));
    }

    #[test]
    fn unsorted_tensor_names_are_rejected() {
        // Hand-build a two-tensor file with names out of order.
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"3DCP");
        buf.extend_from_slice(&1u16.to_le_bytes());
        buf.extend_from_slice(&2u32.to_le_bytes());
        for name in ["b", "a"] {
            buf.push(1);
            buf.extend_from_slice(name.as_bytes());
            buf.push(1);
            buf.extend_from_slice(&1u32.to_le_bytes());
            buf.extend_from_slice(&1.0f32.to_le_bytes());
        }
        let trailer = serde_json::to_vec(&Trailer {
            config: NetConfig::desk(16, 16),
            meta: serde_json::Value::Null,
        })
        .unwrap();
        buf.extend_from_slice(&(trailer.len() as u32).to_le_bytes());
        buf.extend_from_slice(&trailer);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        std::fs::write(&path, &buf).unwrap();
        match load_checkpoint(&path) {
            Err(NetError::Format(msg)) => assert!(msg.contains("not sorted"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn fnv1a64_known_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }
}
