//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `FCNP`, version u32, tensor count u32, then
//! per tensor: name length u16 + UTF-8 name, rank u8, dims u32 each, f32
//! payload.

use crate::error::{FearError, Result};
use crate::numcore::store::ParamStore;
use crate::numcore::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"FCNP";
const VERSION: u32 = 1;

/// Writes every named tensor in insertion order.
pub fn save(entries: &[(&str, &Tensor)], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, tensor) in entries {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(FearError::Format(format!("tensor name too long: {name}")));
        }
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        if tensor.shape.len() > u8::MAX as usize {
            return Err(FearError::Format(format!("tensor rank too high: {name}")));
        }
        w.write_all(&[tensor.shape.len() as u8])?;
        for &d in &tensor.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &tensor.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_store(store: &ParamStore, path: &Path) -> Result<()> {
    let entries: Vec<(&str, &Tensor)> = store.iter().collect();
    save(&entries, path)
}

/// Reads all tensors from a checkpoint file.
pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FearError::Format(format!("{}: bad magic", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(FearError::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u16(&mut r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| FearError::Format("tensor name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0f32; numel];
        let mut buf = [0u8; 4];
        for v in data.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f32::from_le_bytes(buf);
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Loads a checkpoint into an existing store. Every stored parameter must be
/// present in the file with a matching shape; extra file entries are
/// returned for the caller (memory snapshots and other non-parameter state).
pub fn load_into_store(store: &mut ParamStore, path: &Path) -> Result<Vec<(String, Tensor)>> {
    let entries = load(path)?;
    let mut extra = Vec::new();
    let mut seen = vec![false; store.len()];
    for (name, tensor) in entries {
        match store.lookup(&name) {
            Some(id) => {
                let target = store.get_mut(id);
                if target.shape != tensor.shape {
                    return Err(FearError::dim(format!(
                        "checkpoint {name}: shape {:?} != expected {:?}",
                        tensor.shape, target.shape
                    )));
                }
                target.data = tensor.data;
                seen[id_index(store, &name)] = true;
            }
            None => extra.push((name, tensor)),
        }
    }
    for (i, s) in seen.iter().enumerate() {
        if !s {
            let missing = store.iter().nth(i).map(|(n, _)| n.to_string()).unwrap_or_default();
            return Err(FearError::Format(format!("checkpoint missing parameter {missing}")));
        }
    }
    Ok(extra)
}

fn id_index(store: &ParamStore, name: &str) -> usize {
    store.iter().position(|(n, _)| n == name).unwrap()
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_shapes_and_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.fcnp");
        let a = Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, f32::MIN_POSITIVE, 7.5]).unwrap();
        let b = Tensor::from_vec(vec![0.125; 5]);
        save(&[("net.a", &a), ("net.b", &b)], &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "net.a");
        assert_eq!(loaded[0].1.shape, vec![2, 3]);
        assert_eq!(loaded[0].1.data, a.data);
        assert_eq!(loaded[1].0, "net.b");
        assert_eq!(loaded[1].1.data, b.data);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.fcnp");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(load(&path).is_err());
    }
}
