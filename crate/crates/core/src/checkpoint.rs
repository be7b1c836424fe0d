//! Self-describing binary container for named tensors plus `key=value` metadata.
//!
//! Layout: the 8-byte magic `SUMMITCK`, a little-endian `u64` header length, the UTF-8
//! header, then each tensor's raw little-endian payload in manifest order. The header
//! holds `key=value` lines followed by one `tensor <name> <dtype> <d0>x<d1>...` line per
//! tensor.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SUMMITCK";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Default for Checkpoint<T> {
    fn default() -> Self {
        Self {
            meta: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing header key `{key}`")))
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = String::new();
        for (k, v) in &self.meta {
            if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') || k.starts_with("tensor ") {
                return Err(Error::Checkpoint(format!("header entry `{k}` cannot be encoded")));
            }
            header.push_str(&format!("{k}={v}\n"));
        }
        for (name, t) in &self.tensors {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::Checkpoint(format!("tensor name `{name}` cannot be encoded")));
            }
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            header.push_str(&format!("tensor {name} {} {}\n", T::DTYPE, dims.join("x")));
        }
        let payload: usize = self.tensors.iter().map(|(_, t)| t.len() * T::BYTES).sum();
        let mut out = Vec::with_capacity(16 + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for (_, t) in &self.tensors {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header = bytes
            .get(16..16 + len)
            .ok_or_else(|| bad("truncated header"))?;
        let header = std::str::from_utf8(header).map_err(|_| bad("header is not UTF-8"))?;
        let mut ck = Self::default();
        let mut offset = 16 + len;
        for line in header.lines() {
            if let Some(rest) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = rest.split(' ').collect();
                let [name, dtype, dims] = parts[..] else {
                    return Err(Error::Checkpoint(format!("malformed manifest line `{line}`")));
                };
                if dtype != T::DTYPE {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name} has dtype {dtype}, expected {}",
                        T::DTYPE
                    )));
                }
                let shape = dims
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::Checkpoint(format!("bad shape `{dims}` for {name}")))?;
                let n: usize = shape.iter().product();
                let end = offset + n * T::BYTES;
                let raw = bytes
                    .get(offset..end)
                    .ok_or_else(|| Error::Checkpoint(format!("payload of {name} is truncated")))?;
                let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
                ck.tensors.push((name.to_string(), Tensor::new(shape, data)?));
                offset = end;
            } else {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::Checkpoint(format!("malformed header line `{line}`")))?;
                ck.meta.push((k.to_string(), v.to_string()));
            }
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after the last tensor"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        // write-then-rename so an interrupted save never leaves a torn file behind
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
