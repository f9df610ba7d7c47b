//! Binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! | offset        | size        | field                               |
//! |---------------|-------------|-------------------------------------|
//! | 0             | 8           | magic `OBOITNSR`                    |
//! | 8             | 4           | version, `u32` (= 1)                |
//! | 12            | 4           | rank, `u32` (1 = logits, 3 = map)   |
//! | 16            | 8 * rank    | dims, `u64` each                    |
//! | 16 + 8 * rank | 4 * prod    | payload, `f32`, row-major           |
//!
//! The file length must equal the declared size exactly. Bags store their
//! double-precision prototypes in the same layout under the magic `OBOITF64`
//! with an `f64` payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC_F32: &[u8; 8] = b"OBOITNSR";
pub const MAGIC_F64: &[u8; 8] = b"OBOITF64";
pub const VERSION: u32 = 1;

const PREFIX_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn magic(self) -> &'static [u8; 8] {
        match self {
            Dtype::F32 => MAGIC_F32,
            Dtype::F64 => MAGIC_F64,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorHeader {
    pub dtype: Dtype,
    pub dims: Vec<usize>,
}

impl TensorHeader {
    pub fn header_len(&self) -> usize {
        PREFIX_LEN + 8 * self.dims.len()
    }

    pub fn num_values(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn file_len(&self) -> usize {
        self.header_len() + self.num_values() * self.dtype.width()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

fn check_shape(dims: &[usize], len: usize, dtype: Dtype) -> Result<()> {
    match (dtype, dims.len()) {
        (Dtype::F32, 1 | 3) | (Dtype::F64, 1) => {}
        (_, rank) => {
            return Err(Error::ShapeMismatch(format!(
                "unsupported rank {rank} for {dtype:?} tensor"
            )))
        }
    }
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::ShapeMismatch(format!("dims {dims:?} overflow")))?;
    if expected != len {
        return Err(Error::ShapeMismatch(format!(
            "{len} values for dims {dims:?}"
        )));
    }
    Ok(())
}

fn encode_header(out: &mut Vec<u8>, dtype: Dtype, dims: &[usize]) {
    out.extend_from_slice(dtype.magic());
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
}

/// Serializes a float32 tensor into the container layout.
pub fn encode_tensor(dims: &[usize], values: &[f32]) -> Result<Vec<u8>> {
    check_shape(dims, values.len(), Dtype::F32)?;
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::RejectedValue { index });
    }
    let mut out = Vec::with_capacity(PREFIX_LEN + 8 * dims.len() + 4 * values.len());
    encode_header(&mut out, Dtype::F32, dims);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_tensor_f64(values: &[f64]) -> Result<Vec<u8>> {
    let dims = [values.len()];
    check_shape(&dims, values.len(), Dtype::F64)?;
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::RejectedValue { index });
    }
    let mut out = Vec::with_capacity(PREFIX_LEN + 8 + 8 * values.len());
    encode_header(&mut out, Dtype::F64, &dims);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

/// Parses and validates the header; `total_len` is the full file length.
pub fn decode_header(bytes: &[u8], total_len: u64) -> Result<TensorHeader> {
    if bytes.len() < 8 {
        return Err(Error::NotATensorFile);
    }
    let dtype = match &bytes[..8] {
        m if m == MAGIC_F32 => Dtype::F32,
        m if m == MAGIC_F64 => Dtype::F64,
        _ => return Err(Error::NotATensorFile),
    };
    if bytes.len() < PREFIX_LEN {
        return Err(Error::CorruptTensor("truncated header".into()));
    }
    let version = u32_at(bytes, 8);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let rank = u32_at(bytes, 12) as usize;
    let rank_ok = match dtype {
        Dtype::F32 => rank == 1 || rank == 3,
        Dtype::F64 => rank == 1,
    };
    if !rank_ok {
        return Err(Error::CorruptTensor(format!("unsupported rank {rank}")));
    }
    if bytes.len() < PREFIX_LEN + 8 * rank {
        return Err(Error::CorruptTensor("truncated dims".into()));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| usize::try_from(u64_at(bytes, PREFIX_LEN + 8 * i)))
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::CorruptTensor("dimension exceeds address space".into()))?;
    let expected = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
        .and_then(|n| n.checked_mul(dtype.width() as u64))
        .and_then(|n| n.checked_add((PREFIX_LEN + 8 * rank) as u64))
        .ok_or_else(|| Error::CorruptTensor("declared size overflows".into()))?;
    if expected != total_len {
        return Err(Error::CorruptTensor(format!(
            "declared size {expected} bytes, file has {total_len}"
        )));
    }
    Ok(TensorHeader { dtype, dims })
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let header = decode_header(bytes, bytes.len() as u64)?;
    if header.dtype != Dtype::F32 {
        return Err(Error::NotATensorFile);
    }
    let values = bytes[header.header_len()..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect::<Vec<_>>();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::CorruptTensor(format!("non-finite value at {index}")));
    }
    Ok(Tensor {
        dims: header.dims,
        values,
    })
}

pub fn decode_tensor_f64(bytes: &[u8]) -> Result<Vec<f64>> {
    let header = decode_header(bytes, bytes.len() as u64)?;
    if header.dtype != Dtype::F64 {
        return Err(Error::NotATensorFile);
    }
    let values = bytes[header.header_len()..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect::<Vec<_>>();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::CorruptTensor("non-finite value".into()));
    }
    Ok(values)
}

pub fn write_tensor(path: impl AsRef<Path>, dims: &[usize], values: &[f32]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(dims, values)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

pub fn write_tensor_f64(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor_f64(values)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tensor_f64(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor_f64(&bytes)
}

/// Reads only the header and checks it against the file length.
pub fn read_tensor_header(path: impl AsRef<Path>) -> Result<TensorHeader> {
    use std::io::Read;

    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut buf = Vec::with_capacity(PREFIX_LEN + 24);
    file.by_ref()
        .take((PREFIX_LEN + 24) as u64)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    decode_header(&buf, len)
}
