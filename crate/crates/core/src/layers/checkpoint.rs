//! Binary container of named `f64` tensors.
//!
//! Layout (little-endian): magic `CEMPARAM`, `u32` version, `u32` count, then
//! per tensor a `u32` name length, UTF-8 name, `u32` rank, `u64` extents and
//! the `f64` data.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::config::BlockConfig;
use crate::tensor::Tensor;

use super::params::ParamStore;
use super::LayerError;

pub const MAGIC: &[u8; 8] = b"CEMPARAM";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_tensors<W: Write>(w: &mut W, items: &[(&str, &Tensor)]) -> Result<(), LayerError> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(items.len() as u32).to_le_bytes())?;
    for (name, t) in items {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, LayerError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, LayerError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>, LayerError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(LayerError::Format("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(LayerError::Format(format!("unsupported version {version}")));
    }
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| LayerError::Format("name is not UTF-8".into()))?;
        let rank = read_u32(r)? as usize;
        let shape = (0..rank).map(|_| read_u64(r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        let t = Tensor::new(shape, data).map_err(|e| LayerError::Format(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

impl ParamStore {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), LayerError> {
        let items: Vec<(&str, &Tensor)> = self.entries().iter().map(|e| (e.name.as_str(), &e.value)).collect();
        write_tensors(w, &items)
    }

    /// Overwrites values from a container holding exactly this store's
    /// names and shapes.
    pub fn read_values<R: Read>(&mut self, r: &mut R) -> Result<(), LayerError> {
        let items = read_tensors(r)?;
        if items.len() != self.len() {
            return Err(LayerError::Format(format!("expected {} tensors, found {}", self.len(), items.len())));
        }
        for (name, t) in items {
            let id = self
                .find(&name)
                .ok_or_else(|| LayerError::Format(format!("unknown tensor {name}")))?;
            self.set(id, t)?;
        }
        Ok(())
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `path` and a `path.json` config sidecar.
pub fn save_block(path: &Path, store: &ParamStore, cfg: &BlockConfig) -> Result<(), LayerError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    store.write_to(&mut f)?;
    f.flush()?;
    let json = serde_json::to_string_pretty(cfg).map_err(|e| LayerError::Format(e.to_string()))?;
    fs::write(sidecar(path), json)?;
    Ok(())
}

pub fn load_block_config(path: &Path) -> Result<BlockConfig, LayerError> {
    let text = fs::read_to_string(sidecar(path))?;
    serde_json::from_str(&text).map_err(|e| LayerError::Format(e.to_string()))
}
