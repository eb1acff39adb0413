//! Single-file checkpoint archive.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic "SEGKITCK" | u32 version | u16 len + dtype tag
//! u32 len + architecture config as TOML
//! u32 count, then per entry: u8 kind (0 parameter, 1 buffer)
//!   | u16 len + name | u8 rank | u32 dims... | elements
//! ```

use std::path::Path;

use segtensor::{Scalar, Tensor};

use super::{build_model, ArchitectureConfig, Model, ParamStore};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SEGKITCK";
const VERSION: u32 = 1;

pub fn checkpoint_to_bytes<T: Scalar>(model: &Model<T>) -> Result<Vec<u8>> {
    let config = toml::to_string(model.config()).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str16(&mut out, T::DTYPE);
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    let entries: Vec<(u8, &String, &Tensor<T>)> = model
        .params()
        .iter()
        .map(|(k, v)| (0, k, v))
        .chain(model.buffers().iter().map(|(k, v)| (1, k, v)))
        .collect();
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (kind, name, t) in entries {
        out.push(kind);
        put_str16(&mut out, name);
        out.push(t.ndim() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

fn put_str16(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::bad_checkpoint(field, "truncated")),
        }
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn utf8(&mut self, n: usize, field: &str) -> Result<&'a str> {
        std::str::from_utf8(self.take(n, field)?).map_err(|_| Error::bad_checkpoint(field, "not UTF-8"))
    }
}

pub fn checkpoint_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::bad_checkpoint("magic", "not a checkpoint file"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::bad_checkpoint(
            "version",
            format!("unsupported version {version}"),
        ));
    }
    let n = r.u16("dtype")? as usize;
    let dtype = r.utf8(n, "dtype")?;
    if dtype != T::DTYPE {
        return Err(Error::bad_checkpoint(
            "dtype",
            format!("file holds {dtype}, requested {}", T::DTYPE),
        ));
    }
    let n = r.u32("config")? as usize;
    let text = r.utf8(n, "config")?;
    let config: ArchitectureConfig =
        toml::from_str(text).map_err(|e| Error::bad_checkpoint("config", e.message().to_string()))?;
    let mut model = build_model::<T>(&config, 0).map_err(|e| Error::bad_checkpoint("config", e.to_string()))?;

    let count = r.u32("entries")? as usize;
    let mut params = ParamStore::new();
    let mut buffers = ParamStore::new();
    for _ in 0..count {
        let kind = r.u8("entry kind")?;
        let n = r.u16("entry name")? as usize;
        let name = r.utf8(n, "entry name")?.to_string();
        let rank = r.u8(&name)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32(&name)? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = r.take(len.saturating_mul(T::BYTES), &name)?;
        let data: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        let t = Tensor::from_vec(&shape, data);
        let store = match kind {
            0 => &mut params,
            1 => &mut buffers,
            k => return Err(Error::bad_checkpoint("entry kind", format!("{name}: unknown kind {k}"))),
        };
        if store.insert(name.clone(), t).is_some() {
            return Err(Error::bad_checkpoint(name, "duplicate entry"));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::bad_checkpoint("entries", "trailing bytes"));
    }
    model.load_state(params, buffers)?;
    Ok(model)
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, checkpoint_to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::super::Family;
    use super::*;

    fn small(f: Family) -> Model<f32> {
        build_model(&ArchitectureConfig::new(f).with_base_channels(4), 7).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        for f in [Family::UNet, Family::BrNet, Family::Fcn8s] {
            let m = small(f);
            let back: Model<f32> = checkpoint_from_bytes(&checkpoint_to_bytes(&m).unwrap()).unwrap();
            assert_eq!(back.config(), m.config());
            assert_eq!(
                back.params().keys().collect::<Vec<_>>(),
                m.params().keys().collect::<Vec<_>>()
            );
            for (k, v) in m.params() {
                assert_eq!(back.params()[k].data(), v.data(), "{k}");
            }
        }
    }

    #[test]
    fn corruption_names_a_field() {
        let bytes = checkpoint_to_bytes(&small(Family::UNet)).unwrap();
        let err = checkpoint_from_bytes::<f32>(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::BadCheckpoint { .. }));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            checkpoint_from_bytes::<f32>(&bad),
            Err(Error::BadCheckpoint { field, .. }) if field == "magic"
        ));
        assert!(matches!(
            checkpoint_from_bytes::<f64>(&bytes),
            Err(Error::BadCheckpoint { field, .. }) if field == "dtype"
        ));
    }

    #[test]
    fn family_string_is_validated() {
        let bytes = checkpoint_to_bytes(&small(Family::UNet)).unwrap();
        let text = String::from_utf8_lossy(&bytes).to_string();
        assert!(text.contains("family = \"UNet\""));
        let swapped = replace(&bytes, b"family = \"UNet\"", b"family = \"UNot\"");
        assert!(matches!(
            checkpoint_from_bytes::<f32>(&swapped),
            Err(Error::BadCheckpoint { field, .. }) if field == "config"
        ));
        let other = replace(&bytes, b"family = \"UNet\"", b"family = \"FPN\" ");
        assert!(matches!(
            checkpoint_from_bytes::<f32>(&other),
            Err(Error::BadCheckpoint { .. })
        ));
    }

    fn replace(hay: &[u8], from: &[u8], to: &[u8]) -> Vec<u8> {
        assert_eq!(from.len(), to.len());
        let at = hay.windows(from.len()).position(|w| w == from).unwrap();
        let mut out = hay.to_vec();
        out[at..at + from.len()].copy_from_slice(to);
        out
    }
}
