//! `.sgln` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "SGLN" | version u32 | count u32
//! count × { key_len u32 | key utf-8 | dtype u8 | rank u32 | dims u32×rank | data }
//! crc32 u32 over every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;

use crate::discriminator::Discriminator;
use crate::error::{CheckpointError, Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::params::ParamStore;
use crate::tensor::DType;
use crate::Tensor;

pub const MAGIC: [u8; 4] = *b"SGLN";
pub const VERSION: u32 = 1;
pub const EXTENSION: &str = "sgln";

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl Value {
    pub fn shape(&self) -> &[usize] {
        match self {
            Value::F32(t) => t.shape(),
            Value::F64(t) => t.shape(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Value::F32(t) => t.len(),
            Value::F64(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            Value::F32(_) => DType::F32,
            Value::F64(_) => DType::F64,
        }
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        match self {
            Value::F32(t) => t.clone(),
            Value::F64(t) => t.cast(),
        }
    }
}

/// One row of [`Checkpoint::list_keys`].
#[derive(Clone, Debug, PartialEq)]
pub struct KeyRow {
    pub key: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: IndexMap<String, Value>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, key: impl Into<String>, value: Value) -> Result<(), CheckpointError> {
        let key = key.into();
        if self.entries.contains_key(&key) {
            return Err(CheckpointError::DuplicateKey(key));
        }
        self.entries.insert(key, value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (key, value) in &self.entries {
            out.extend_from_slice(&(key.len() as u32).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            out.push(value.dtype().tag());
            out.extend_from_slice(&(value.shape().len() as u32).to_le_bytes());
            for &d in value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match value {
                Value::F32(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                Value::F64(t) => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    fn parse_body(buf: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf, pos: 12 };
        let count = u32::from_le_bytes(buf[8..12].try_into().unwrap());
        let mut ckpt = Checkpoint::new();
        for _ in 0..count {
            let klen = r.u32("key length")? as usize;
            let key = std::str::from_utf8(r.take(klen, "key")?)
                .map_err(|_| CheckpointError::Malformed("key is not valid UTF-8".into()))?
                .to_string();
            let tag = r.take(1, "dtype")?[0];
            let dtype = DType::from_tag(tag).ok_or_else(|| CheckpointError::Malformed(format!("{key}: dtype tag {tag}")))?;
            let rank = r.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(r.u32("dims")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(dtype.size()))
                .ok_or_else(|| CheckpointError::Malformed(format!("{key}: shape {shape:?} overflows")))?;
            let raw = r.take(n, "tensor data")?;
            let bad = |e: crate::TensorError| CheckpointError::Malformed(format!("{key}: {e}"));
            let value = match dtype {
                DType::F32 => Value::F32(
                    Tensor::new(shape, raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
                        .map_err(bad)?,
                ),
                DType::F64 => Value::F64(
                    Tensor::new(shape, raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
                        .map_err(bad)?,
                ),
            };
            ckpt.insert(key, value)?;
        }
        r.take(4, "checksum")?;
        if r.pos != buf.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(ckpt)
    }

    /// Parses and validates a serialized checkpoint. A checksum failure is
    /// reported as truncation when the entry structure runs past the end.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        let magic: [u8; 4] = buf.get(..4).ok_or(CheckpointError::Truncated("magic"))?.try_into().unwrap();
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = u32::from_le_bytes(buf.get(4..8).ok_or(CheckpointError::Truncated("version"))?.try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: VERSION,
            });
        }
        if buf.len() < 16 {
            return Err(CheckpointError::Truncated("entry count"));
        }
        let split = buf.len() - 4;
        let stored = u32::from_le_bytes(buf[split..].try_into().unwrap());
        let computed = crc32fast::hash(&buf[..split]);
        if stored != computed {
            return match Self::parse_body(buf) {
                Err(e @ CheckpointError::Truncated(_)) => Err(e),
                _ => Err(CheckpointError::Crc { stored, computed }),
            };
        }
        Self::parse_body(buf)
    }

    /// Writes atomically through a temporary file in the same directory.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let io = |source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        };
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        fs::create_dir_all(dir).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        tmp.write_all(&self.to_bytes()).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let buf = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&buf)
    }

    /// Rewrites key suffixes. For each key the first rule whose `from`
    /// matches a trailing dot-separated run of components applies. Values
    /// are untouched.
    pub fn remap_keys(&self, rules: &[(&str, &str)]) -> Result<Self, CheckpointError> {
        let rename = |key: &str| -> String {
            for (from, to) in rules {
                if key == *from {
                    return to.to_string();
                }
                if let Some(stem) = key.strip_suffix(from) {
                    if stem.ends_with('.') {
                        return format!("{stem}{to}");
                    }
                }
            }
            key.to_string()
        };
        let mut out: IndexMap<String, Value> = IndexMap::new();
        let mut sources: IndexMap<String, Vec<String>> = IndexMap::new();
        for (k, v) in &self.entries {
            let nk = rename(k);
            sources.entry(nk.clone()).or_default().push(k.clone());
            out.entry(nk).or_insert_with(|| v.clone());
        }
        let colliding: Vec<String> = sources.into_values().filter(|s| s.len() > 1).flatten().collect();
        if !colliding.is_empty() {
            return Err(CheckpointError::Collision(colliding));
        }
        Ok(Self { entries: out })
    }

    /// Keys in file order with shapes and element counts.
    pub fn list_keys(&self) -> (Vec<KeyRow>, usize) {
        let rows: Vec<KeyRow> = self
            .entries
            .iter()
            .map(|(k, v)| KeyRow {
                key: k.clone(),
                shape: v.shape().to_vec(),
                count: v.len(),
            })
            .collect();
        let total = rows.iter().map(|r| r.count).sum();
        (rows, total)
    }

    /// Copies every entry of `store` under `prefix`.
    pub fn put_store(&mut self, prefix: &str, store: &ParamStore) -> Result<(), CheckpointError> {
        for (k, p) in store.iter() {
            self.insert(format!("{prefix}{k}"), Value::F32(p.value.clone()))?;
        }
        Ok(())
    }

    /// Fills `store` from entries under `prefix`. Every store key must be
    /// present with the same shape.
    pub fn load_store(&self, prefix: &str, store: &mut ParamStore) -> Result<(), CheckpointError> {
        let mut converted = Vec::with_capacity(store.len());
        for key in store.keys() {
            let full = format!("{prefix}{key}");
            let v = self.get(&full).ok_or_else(|| CheckpointError::MissingKey(full.clone()))?;
            converted.push((key.to_string(), v.to_f32()));
        }
        for ((key, t), (_, p)) in converted.into_iter().zip(store.iter_mut()) {
            if t.shape() != p.value.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    key,
                    expected: p.value.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            p.value = t;
        }
        Ok(())
    }

    pub fn put_scalar(&mut self, key: &str, v: f64) -> Result<(), CheckpointError> {
        self.insert(key, Value::F64(Tensor::scalar(v)))
    }

    pub fn scalar(&self, key: &str) -> Result<f64, CheckpointError> {
        match self.get(key) {
            Some(Value::F64(t)) if t.len() == 1 => Ok(t.item()),
            Some(Value::F32(t)) if t.len() == 1 => Ok(t.item() as f64),
            Some(v) => Err(CheckpointError::ShapeMismatch {
                key: key.into(),
                expected: vec![],
                found: v.shape().to_vec(),
            }),
            None => Err(CheckpointError::MissingKey(key.into())),
        }
    }

    /// Stores the architecture as `meta.*` scalars.
    pub fn put_config(&mut self, cfg: &GeneratorConfig, group_size: usize) -> Result<(), CheckpointError> {
        let fields = [
            ("latent_size", cfg.latent_size as f64),
            ("n_layers", cfg.n_layers as f64),
            ("img_channels", cfg.img_channels as f64),
            ("min_res", cfg.min_res as f64),
            ("blocks", cfg.blocks as f64),
            ("max_res", cfg.max_res as f64),
            ("leaky_slope", cfg.leaky_slope as f64),
            ("truncation_psi", cfg.truncation_psi as f64),
            ("truncation_cutoff", cfg.truncation_cutoff.map_or(-1.0, |c| c as f64)),
            ("w_avg_decay", cfg.w_avg_decay as f64),
            ("group_size", group_size as f64),
        ];
        for (k, v) in fields {
            self.put_scalar(&format!("meta.{k}"), v)?;
        }
        let ch = cfg.channels.iter().map(|&c| c as f64).collect();
        self.insert(
            "meta.channels",
            Value::F64(Tensor::new(vec![cfg.channels.len()], ch).map_err(|e| CheckpointError::Malformed(e.to_string()))?),
        )
    }

    /// Architecture stored by [`Checkpoint::put_config`] plus the group size.
    pub fn config(&self) -> Result<(GeneratorConfig, usize), CheckpointError> {
        let int = |k: &str| -> Result<usize, CheckpointError> {
            let v = self.scalar(&format!("meta.{k}"))?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(CheckpointError::Malformed(format!("meta.{k} = {v}")));
            }
            Ok(v as usize)
        };
        let real = |k: &str| self.scalar(&format!("meta.{k}"));
        let channels = match self.get("meta.channels") {
            Some(v) => v.to_f32().data().iter().map(|&c| c as usize).collect(),
            None => return Err(CheckpointError::MissingKey("meta.channels".into())),
        };
        let cutoff = real("truncation_cutoff")?;
        let cfg = GeneratorConfig {
            latent_size: int("latent_size")?,
            n_layers: int("n_layers")?,
            img_channels: int("img_channels")?,
            min_res: int("min_res")?,
            blocks: int("blocks")?,
            max_res: int("max_res")?,
            channels,
            leaky_slope: real("leaky_slope")? as f32,
            truncation_psi: real("truncation_psi")? as f32,
            truncation_cutoff: (cutoff >= 0.0).then_some(cutoff as usize),
            w_avg_decay: real("w_avg_decay")? as f32,
        };
        Ok((cfg, int("group_size")?))
    }
}

pub const G_PREFIX: &str = "G.";
pub const G_EMA_PREFIX: &str = "G_copy.";
pub const D_PREFIX: &str = "D.";

/// The trained networks held by one checkpoint.
#[derive(Clone, Debug)]
pub struct ModelSet {
    pub g: Generator,
    pub g_ema: Generator,
    pub d: Discriminator,
}

impl ModelSet {
    pub fn new(config: GeneratorConfig, group_size: usize, seed: u64) -> Result<Self> {
        let g = Generator::new(config.clone(), seed)?;
        let d = Discriminator::new(&config, group_size, seed)?;
        Ok(Self {
            g_ema: g.clone(),
            g,
            d,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        self.g.config()
    }

    pub fn write_into(&self, ckpt: &mut Checkpoint) -> Result<()> {
        ckpt.put_config(self.g.config(), self.d.group_size())?;
        ckpt.put_store(G_PREFIX, self.g.params())?;
        ckpt.put_store(G_EMA_PREFIX, self.g_ema.params())?;
        ckpt.put_store(D_PREFIX, self.d.params())?;
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new();
        self.write_into(&mut c)?;
        Ok(c)
    }

    /// Rebuilds the architecture from `meta.*` and loads every tensor.
    /// Nothing is reinitialized: all values come from the file.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let (config, group) = ckpt.config()?;
        let mut set = Self::new(config, group, 0)?;
        ckpt.load_store(G_PREFIX, set.g.params_mut())?;
        ckpt.load_store(G_EMA_PREFIX, set.g_ema.params_mut())?;
        ckpt.load_store(D_PREFIX, set.d.params_mut())?;
        Ok(set)
    }

    /// Fails with an architecture error unless `config` matches the stored one.
    pub fn expect_config(&self, config: &GeneratorConfig) -> Result<()> {
        if self.g.config() != config {
            return Err(Error::Architecture(format!(
                "checkpoint config {:?} differs from requested {:?}",
                self.g.config(),
                config
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new();
        c.insert("a.weight_orig", Value::F32(Tensor::new(vec![2], vec![1.5, -2.0]).unwrap()))
            .unwrap();
        c.insert("a.bias", Value::F64(Tensor::scalar(0.25))).unwrap();
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn error_kinds() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Version { found: 9, .. })));
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 10] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Crc { .. })));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 7]),
            Err(CheckpointError::Truncated(_))
        ));
    }

    #[test]
    fn remap_collision() {
        let mut c = Checkpoint::new();
        c.insert("x.weight_orig", Value::F64(Tensor::scalar(1.0))).unwrap();
        c.insert("x.weight", Value::F64(Tensor::scalar(2.0))).unwrap();
        match c.remap_keys(&[("weight_orig", "weight")]) {
            Err(CheckpointError::Collision(keys)) => assert_eq!(keys, vec!["x.weight_orig", "x.weight"]),
            other => panic!("{other:?}"),
        }
    }
}
