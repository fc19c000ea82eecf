//! Versioned binary parameter container.
//!
//! Layout, all integers little-endian:
//! `magic[8] | version u32 | config_len u64 | config utf-8 | count u64 |`
//! then per entry `name_len u32 | name | rank u32 | dims u64×rank | values f64×n`.

use std::path::Path;

use dfr_tensor::ParamStore;
use thiserror::Error;

pub const MAGIC: [u8; 8] = *b"DFRCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic header)")]
    BadMagic,

    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    Version(u32),

    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),

    #[error("{0} trailing bytes after the last entry")]
    Trailing(usize),

    #[error("invalid utf-8 in {0}")]
    Utf8(&'static str),

    #[error("entry `{0}` has a shape that does not match its values")]
    Shape(String),

    #[error("entry `{name}`: {message}")]
    Mismatch { name: String, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Configuration the parameters were produced with, as TOML text.
    pub config: String,
    pub entries: Vec<Entry>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, wide: bool) -> Result<usize, CheckpointError> {
        let n = if wide { self.u64()? } else { u64::from(self.u32()?) };
        // Every length prefixes at least one byte per unit, so anything
        // larger than what is left is corrupt rather than a huge allocation.
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.bytes.len() - self.pos)
            .ok_or(CheckpointError::Truncated(self.bytes.len()))
    }

    fn string(&mut self, wide: bool, what: &'static str) -> Result<String, CheckpointError> {
        let n = self.len(wide)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Utf8(what))
    }
}

impl Checkpoint {
    pub fn from_store(config: impl Into<String>, store: &ParamStore) -> Self {
        let entries = store
            .iter()
            .map(|p| Entry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                data: p.tensor.data().to_vec(),
            })
            .collect();
        Self {
            config: config.into(),
            entries,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(self.config.len() as u64).to_le_bytes());
        b.extend_from_slice(self.config.as_bytes());
        b.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            b.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            b.extend_from_slice(e.name.as_bytes());
            b.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &e.data {
                b.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let config = r.string(true, "config")?;
        let count = r.len(true)?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string(false, "entry name")?;
            let rank = r.len(false)?;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= bytes.len() - r.pos))
                .ok_or_else(|| CheckpointError::Shape(name.clone()))?;
            let data = r
                .take(n * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            entries.push(Entry { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Trailing(bytes.len() - r.pos));
        }
        Ok(Self { config, entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Copies every entry into the same-named parameter of `store`. The
    /// store must hold exactly these names with these shapes.
    pub fn restore(&self, store: &mut ParamStore) -> Result<(), CheckpointError> {
        if store.len() != self.entries.len() {
            return Err(CheckpointError::Mismatch {
                name: "*".into(),
                message: format!("{} entries for {} parameters", self.entries.len(), store.len()),
            });
        }
        for e in &self.entries {
            let mismatch = |message: String| CheckpointError::Mismatch {
                name: e.name.clone(),
                message,
            };
            let id = store.id(&e.name).ok_or_else(|| mismatch("no such parameter".into()))?;
            let have = store.tensor(id).shape();
            if have != e.shape.as_slice() {
                return Err(mismatch(format!("shape {:?}, parameter has {have:?}", e.shape)));
            }
            store.set_data(id, &e.data).map_err(|err| mismatch(err.to_string()))?;
        }
        Ok(())
    }
}
