//! `FGW1` weight files: magic, version, config digest, string metadata and
//! named little-endian tensors.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{ParamStore, Tensor2};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FGW1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub dtype: Dtype,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<StoredTensor>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Data(msg.into())
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| bad("truncated checkpoint"))?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| bad("truncated checkpoint"))?;
    Ok(u64::from_le_bytes(b))
}

fn get_str(r: &mut impl Read) -> Result<String> {
    let n = get_u32(r)? as usize;
    if n > 1 << 20 {
        return Err(bad("checkpoint string too long"));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(|_| bad("truncated checkpoint"))?;
    String::from_utf8(b).map_err(|_| bad("checkpoint string is not UTF-8"))
}

impl Checkpoint {
    pub fn new(config_hash: [u8; 32]) -> Self {
        Self {
            config_hash,
            ..Self::default()
        }
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| bad(format!("checkpoint lacks `{key}`")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta(key)?
            .parse()
            .map_err(|_| bad(format!("checkpoint field `{key}` is malformed")))
    }

    pub fn push(&mut self, name: &str, dims: Vec<usize>, dtype: Dtype, data: Vec<f64>) {
        self.tensors.push(StoredTensor {
            name: name.to_string(),
            dims,
            dtype,
            data,
        });
    }

    /// Stores every tensor of `store` under `prefix/`.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore, dtype: Dtype) {
        for (n, t) in store.names.iter().zip(&store.tensors) {
            self.push(&format!("{prefix}/{n}"), vec![t.rows, t.cols], dtype, t.data.clone());
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&StoredTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| bad(format!("checkpoint lacks tensor `{name}`")))
    }

    /// Rebuilds the store saved under `prefix/`, in saved order.
    pub fn store(&self, prefix: &str) -> Result<ParamStore> {
        let mut p = ParamStore::new();
        let lead = format!("{prefix}/");
        for t in self.tensors.iter().filter(|t| t.name.starts_with(&lead)) {
            if t.dims.len() != 2 {
                return Err(bad(format!("tensor `{}` is not 2-D", t.name)));
            }
            p.push(&t.name[lead.len()..], Tensor2::from_vec(t.dims[0], t.dims[1], t.data.clone())?);
        }
        if p.tensors.is_empty() {
            return Err(bad(format!("checkpoint has no tensors under `{prefix}`")));
        }
        Ok(p)
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, VERSION)?;
        w.write_all(&self.config_hash)?;
        put_u32(w, self.meta.len() as u32)?;
        for (k, v) in &self.meta {
            put_str(w, k)?;
            put_str(w, v)?;
        }
        put_u32(w, self.tensors.len() as u32)?;
        for t in &self.tensors {
            put_str(w, &t.name)?;
            w.write_all(&[match t.dtype {
                Dtype::F64 => 0u8,
                Dtype::F32 => 1u8,
            }])?;
            put_u32(w, t.dims.len() as u32)?;
            for d in &t.dims {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            match t.dtype {
                Dtype::F64 => {
                    for v in &t.data {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                Dtype::F32 => {
                    for v in &t.data {
                        w.write_all(&(*v as f32).to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated checkpoint"))?;
        if &magic != MAGIC {
            return Err(bad("not an FGW1 weight file"));
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(bad(format!("unsupported FGW1 version {version}")));
        }
        let mut config_hash = [0u8; 32];
        r.read_exact(&mut config_hash).map_err(|_| bad("truncated checkpoint"))?;
        let mut meta = BTreeMap::new();
        for _ in 0..get_u32(r)? {
            let k = get_str(r)?;
            let v = get_str(r)?;
            meta.insert(k, v);
        }
        let n = get_u32(r)?;
        let mut tensors = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let name = get_str(r)?;
            let mut dt = [0u8; 1];
            r.read_exact(&mut dt).map_err(|_| bad("truncated checkpoint"))?;
            let dtype = match dt[0] {
                0 => Dtype::F64,
                1 => Dtype::F32,
                x => return Err(bad(format!("unknown dtype tag {x}"))),
            };
            let nd = get_u32(r)?;
            let dims: Vec<usize> = (0..nd).map(|_| get_u64(r).map(|d| d as usize)).collect::<Result<_>>()?;
            let count: usize = dims.iter().product();
            if count > 1 << 28 {
                return Err(bad("tensor too large"));
            }
            let mut data = Vec::with_capacity(count);
            match dtype {
                Dtype::F64 => {
                    for _ in 0..count {
                        data.push(f64::from_bits(get_u64(r)?));
                    }
                }
                Dtype::F32 => {
                    for _ in 0..count {
                        data.push(f32::from_bits(get_u32(r)?) as f64);
                    }
                }
            }
            tensors.push(StoredTensor { name, dims, dtype, data });
        }
        Ok(Self {
            config_hash,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read(&mut bytes.as_slice())
    }
}
