//! Checkpoint file: `DDMCKPT\0`, little-endian `u32` version, `u32` length
//! and JSON text of the config, `u32` parameter count, then per parameter
//! `u32` name length, name bytes, `u32` rank, `u32` dims and `f64` values.

use std::path::Path;

use ddmem_tensor::Tensor;

use super::{Model, ModelConfig};
use crate::error::{format_err, Error, Result};

const MAGIC: &[u8; 8] = b"DDMCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.store.numel());
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION as usize);
        let config = serde_json::to_vec(&self.config).expect("config serialises");
        put_u32(&mut out, config.len());
        out.extend_from_slice(&config);
        put_u32(&mut out, self.store.len());
        for (_, name, t) in self.store.iter() {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.ndim());
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err("not a model checkpoint".into());
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION as usize {
            return Err(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}"));
        }
        let len = r.u32()?;
        let config: ModelConfig = serde_json::from_slice(r.take(len)?).map_err(|e| e.to_string())?;
        let mut model = Model::new(config).map_err(|e| e.to_string())?;
        let count = r.u32()?;
        if count != model.store.len() {
            return Err(format!("checkpoint has {count} parameters, config defines {}", model.store.len()));
        }
        for _ in 0..count {
            let n = r.u32()?;
            let name = std::str::from_utf8(r.take(n)?).map_err(|e| e.to_string())?.to_string();
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<std::result::Result<Vec<_>, _>>()?;
            let numel: usize = shape.iter().product();
            let data = r.take(numel * 8)?.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8"))).collect();
            let id = model.store.find(&name).ok_or_else(|| format!("unknown parameter {name}"))?;
            if model.store.get(id).shape() != shape.as_slice() {
                return Err(format!("parameter {name} has shape {shape:?}, expected {:?}", model.store.get(id).shape()));
            }
            *model.store.get_mut(id) = Tensor::new(&shape, data).map_err(|e| e.to_string())?;
        }
        if r.at != bytes.len() {
            return Err("trailing bytes after parameters".into());
        }
        Ok(model)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")) as usize)
    }
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, model.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    Model::from_bytes(&bytes).map_err(|reason| format_err(path, reason))
}
