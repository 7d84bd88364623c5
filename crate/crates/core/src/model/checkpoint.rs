//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic       8 bytes   b"MASTERCK"
//! version     u32       1
//! config_len  u32       byte length of the config document
//! config      UTF-8     TOML rendering of ModelConfig
//! n_tensors   u32       23
//! per tensor, in ModelParams order:
//!   name_len  u32
//!   name      UTF-8
//!   rank      u32
//!   dims      rank × u64
//!   values    product(dims) × f64 (IEEE-754 bits)
//! ```
//!
//! Values are stored as raw bits, so save → load is bit-exact.

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelError, ModelParams, PARAM_NAMES};
use crate::numerics::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MASTERCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.buf.len() - self.pos < n {
            return Err(ModelError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, ModelError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let config = toml::to_string(&self.config).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(64 + config.len() + 8 * self.params.n_values());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        let tensors = self.params.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in PARAM_NAMES.iter().zip(tensors) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.values() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let config: ModelConfig = toml::from_str(&r.string()?).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        config.validate()?;
        let n = r.u32()? as usize;
        if n != PARAM_NAMES.len() {
            return Err(ModelError::Checkpoint(format!("expected {} tensors, found {n}", PARAM_NAMES.len())));
        }
        let mut tensors = Vec::with_capacity(n);
        for want in PARAM_NAMES {
            let name = r.string()?;
            if name != want {
                return Err(ModelError::Checkpoint(format!("expected tensor `{want}`, found `{name}`")));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let len: usize = shape.iter().product();
            let values = (0..len).map(|_| r.u64().map(f64::from_bits)).collect::<Result<Vec<_>, _>>()?;
            tensors.push(Tensor::new(shape, values)?);
        }
        if r.pos != buf.len() {
            return Err(ModelError::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        let params = ModelParams::from_tensors(&config, tensors)?;
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
