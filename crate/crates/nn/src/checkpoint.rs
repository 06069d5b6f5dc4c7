use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::params::ParamStore;
use crate::tensor::Mat;
use crate::{NnError, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"OMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

/// Named parameter table plus free-form configuration text.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, config_text: &str) -> Self {
        let entries = store
            .iter()
            .map(|(_, p)| CheckpointEntry {
                name: p.name.clone(),
                dims: vec![p.value.rows(), p.value.cols()],
                data: p.value.data().iter().map(|&v| v as f32).collect(),
            })
            .collect();
        Checkpoint { config_text: config_text.to_string(), entries }
    }

    pub fn entry(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Copies stored values into every parameter of `store`. Each parameter
    /// must be present with a matching shape; extra entries are ignored.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone(), p.value.shape())).collect();
        let mut staged = Vec::with_capacity(ids.len());
        for (id, name, (r, c)) in ids {
            let e = self.entry(&name).ok_or_else(|| NnError::Checkpoint { offset: 0, message: format!("missing parameter {name}") })?;
            if e.dims != [r, c] {
                return Err(NnError::Checkpoint { offset: 0, message: format!("parameter {name} has dims {:?}, expected [{r}, {c}]", e.dims) });
            }
            staged.push((id, Mat::from_vec(r, c, e.data.iter().map(|&v| v as f64).collect())));
        }
        for (id, m) in staged {
            *store.value_mut(id) = m;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_text.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_text.as_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.dims.len() as u8);
            for &d in &e.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

pub fn write_checkpoint_bytes(store: &ParamStore, config_text: &str) -> Vec<u8> {
    Checkpoint::from_store(store, config_text).to_bytes()
}

/// Writes atomically: a sibling temp file is renamed over `path`.
pub fn write_checkpoint(path: &Path, store: &ParamStore, config_text: &str) -> Result<()> {
    let bytes = write_checkpoint_bytes(store, config_text);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint_bytes(&fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> NnError {
        NnError::Checkpoint { offset: self.pos as u64, message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize, what: &str) -> Result<String> {
        let start = self.pos;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| NnError::Checkpoint { offset: start as u64, message: format!("{what} is not UTF-8") })
    }
}

pub fn read_checkpoint_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        r.pos = 0;
        return Err(r.err("bad magic"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        r.pos -= 4;
        return Err(r.err(format!("unsupported version {version}")));
    }
    let clen = r.u32("config length")? as usize;
    let config_text = r.string(clen, "config text")?;
    let count = r.u32("parameter count")?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let nlen = r.u16("name length")? as usize;
        let name = r.string(nlen, "parameter name")?;
        let ndim = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32("dimension")? as usize);
        }
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| r.err("dimension overflow"))?;
        let nbytes = numel.checked_mul(4).ok_or_else(|| r.err("dimension overflow"))?;
        let raw = r.take(nbytes, "payload")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        entries.push(CheckpointEntry { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes"));
    }
    Ok(Checkpoint { config_text, entries })
}

/// SHA-256 over names, shapes and exact `f64` values of every parameter
/// whose name starts with `prefix`, in store order.
pub fn hash_params(store: &ParamStore, prefix: &str) -> String {
    let mut h = Sha256::new();
    for (_, p) in store.iter().filter(|(_, p)| p.name.starts_with(prefix)) {
        h.update((p.name.len() as u64).to_le_bytes());
        h.update(p.name.as_bytes());
        h.update((p.value.rows() as u64).to_le_bytes());
        h.update((p.value.cols() as u64).to_le_bytes());
        for v in p.value.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("und.w", Mat::from_vec(2, 2, vec![1.0, -2.5, 0.25, 3.0]));
        s.add("tex.b", Mat::from_vec(1, 3, vec![0.5, 0.0, -1.0]));
        s
    }

    #[test]
    fn round_trip_and_load() {
        let s = store();
        let bytes = write_checkpoint_bytes(&s, "d_model = 8\n");
        let ck = read_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(ck.config_text, "d_model = 8\n");
        assert_eq!(ck.to_bytes(), bytes);
        let mut t = store();
        t.value_mut(t.id("und.w").unwrap()).scale_assign(0.0);
        ck.load_into(&mut t).unwrap();
        assert_eq!(hash_params(&t, ""), hash_params(&s, ""));
    }

    #[test]
    fn corrupt_streams_error_with_offsets() {
        let bytes = write_checkpoint_bytes(&store(), "x");
        for n in 0..bytes.len() {
            assert!(read_checkpoint_bytes(&bytes[..n]).is_err(), "prefix {n}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint_bytes(&bad), Err(NnError::Checkpoint { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(read_checkpoint_bytes(&bad), Err(NnError::Checkpoint { offset: 4, .. })));
        let mut long = bytes;
        long.push(0);
        assert!(read_checkpoint_bytes(&long).is_err());
    }

    #[test]
    fn load_requires_matching_shapes() {
        let ck = Checkpoint::from_store(&store(), "");
        let mut other = ParamStore::new();
        other.add("und.w", Mat::zeros(3, 2));
        assert!(ck.load_into(&mut other).is_err());
        let mut missing = ParamStore::new();
        missing.add("geo.w", Mat::zeros(1, 1));
        assert!(ck.load_into(&mut missing).is_err());
    }

    #[test]
    fn prefix_hash_isolates_modules() {
        let mut s = store();
        let und = hash_params(&s, "und.");
        let id = s.id("tex.b").unwrap();
        s.value_mut(id).set(0, 0, 9.0);
        assert_eq!(hash_params(&s, "und."), und);
        assert_ne!(hash_params(&s, "tex."), hash_params(&store(), "tex."));
    }
}
