//! CGWT: a small little-endian container for named f32 tensors.
//!
//! ```text
//! magic      4 bytes  "CGWT"
//! version    u16      1
//! count      u32      number of tensors
//! per tensor:
//!   name_len u16, name (UTF-8), ndim u8, dims (ndim x u32),
//!   data     prod(dims) x f32, row-major
//! ```
//!
//! Encoder files carry `convB_I.weight`/`convB_I.bias` plus `preproc.mean` and
//! `preproc.std`; decoder files carry `deconvB_I.weight`/`.bias`.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CGWT";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Format(format!(
                "tensor `{name}` has dims {dims:?} ({n} values) but {} values were given",
                data.len()
            )));
        }
        if dims.len() > u8::MAX as usize || dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Format(format!(
                "tensor `{name}` dims {dims:?} not representable"
            )));
        }
        if name.len() > u16::MAX as usize {
            return Err(Error::Format("tensor name longer than 65535 bytes".into()));
        }
        Ok(Self { name, dims, data })
    }

    /// Builds a tensor from f64 values, rounding each to the nearest f32.
    pub fn from_f64(name: impl Into<String>, dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(name, dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

/// An ordered collection of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorFile {
    tensors: Vec<Tensor>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tensor: Tensor) -> Result<()> {
        if self.get(&tensor.name).is_some() {
            return Err(Error::Format(format!("duplicate tensor `{}`", tensor.name)));
        }
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Looks up `name` and checks its dims.
    pub fn expect(&self, name: &str, dims: &[usize]) -> Result<&Tensor> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        if t.dims != dims {
            return Err(Error::TensorShape {
                name: name.to_string(),
                expected: dims.to_vec(),
                found: t.dims.clone(),
            });
        }
        Ok(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "header")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let version = r.u16("header")?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let count = r.u32("header")? as usize;
        let mut file = TensorFile::new();
        for index in 0..count {
            let ctx = format!("tensor #{index}");
            let name_len = r.u16(&ctx)? as usize;
            let name = std::str::from_utf8(r.take(name_len, &ctx)?)
                .map_err(|_| Error::Format(format!("{ctx}: name is not valid UTF-8")))?
                .to_string();
            let ctx = format!("tensor #{index} `{name}`");
            let ndim = r.take(1, &ctx)?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(r.u32(&ctx)? as usize);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::Format(format!("{ctx}: dims {dims:?} overflow")))?;
            let raw = r.take(n, &ctx)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            file.push(Tensor { name, dims, data })?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after {count} tensors",
                bytes.len() - r.pos
            )));
        }
        Ok(file)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, ctx: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated(ctx.to_string()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, ctx: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, ctx)?.try_into().unwrap()))
    }

    fn u32(&mut self, ctx: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, ctx)?.try_into().unwrap()))
    }
}
