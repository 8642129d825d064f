//! Dense tensor files ("DTF1").
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  "DTF1"
//! dtype   u8       1 = f32
//! ndim    u8       1..=3
//! dims    ndim x u32
//! payload product(dims) x f32, row-major
//! ```
//!
//! The payload must be exactly `product(dims) * 4` bytes; trailing bytes are
//! rejected like truncation.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DTF1";
pub const DTYPE_F32: u8 = 1;
const MAX_NDIM: usize = 3;

/// An in-memory dense f32 tensor with its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_NDIM {
            return Err(Error::Format(format!(
                "ndim must be in 1..={MAX_NDIM}, got {}",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Format("dimension exceeds u32 range".into()));
        }
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::Format(format!(
                "shape {dims:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn from_vector(v: &Array1<f64>) -> Self {
        Tensor {
            dims: vec![v.len()],
            data: v.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn from_matrix(m: &Array2<f64>) -> Self {
        Tensor {
            dims: vec![m.nrows(), m.ncols()],
            data: m.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn from_matrix_f32(m: &Array2<f32>) -> Self {
        Tensor {
            dims: vec![m.nrows(), m.ncols()],
            data: m.iter().copied().collect(),
        }
    }

    /// Interprets a 1-D tensor (or a 2-D tensor with a single row) as a vector.
    pub fn to_vector(&self) -> Result<Array1<f64>> {
        match self.dims.as_slice() {
            [_] | [1, _] => Ok(self.data.iter().map(|&x| x as f64).collect()),
            other => Err(Error::Format(format!("expected a vector, got shape {other:?}"))),
        }
    }

    pub fn to_matrix(&self) -> Result<Array2<f64>> {
        self.to_matrix_f32().map(|m| m.mapv(f64::from))
    }

    pub fn to_matrix_f32(&self) -> Result<Array2<f32>> {
        match *self.dims.as_slice() {
            [r, c] => Ok(Array2::from_shape_vec((r, c), self.data.clone())
                .expect("shape checked at construction")),
            ref other => Err(Error::Format(format!("expected a matrix, got shape {other:?}"))),
        }
    }

    pub fn to_array3(&self) -> Result<Array3<f64>> {
        match *self.dims.as_slice() {
            [a, b, c] => Ok(Array3::from_shape_vec(
                (a, b, c),
                self.data.iter().map(|&x| x as f64).collect(),
            )
            .expect("shape checked at construction")),
            ref other => Err(Error::Format(format!("expected a 3-d tensor, got shape {other:?}"))),
        }
    }
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 4 * t.dims.len() + 4 * t.data.len());
    out.extend_from_slice(MAGIC);
    out.push(DTYPE_F32);
    out.push(t.dims.len() as u8);
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses only the header, returning the dims and the payload offset.
fn decode_header(bytes: &[u8]) -> Result<(Vec<usize>, usize)> {
    if bytes.len() < 6 {
        return Err(Error::Format("file shorter than the 6-byte header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"DTF1\"",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    let dtype = bytes[4];
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let ndim = bytes[5] as usize;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(Error::Format(format!("ndim must be in 1..=3, got {ndim}")));
    }
    let header_len = 6 + 4 * ndim;
    if bytes.len() < header_len {
        return Err(Error::Format("truncated dims".into()));
    }
    let dims = bytes[6..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    Ok((dims, header_len))
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let (dims, offset) = decode_header(bytes)?;
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("element count overflows".into()))?;
    let payload = &bytes[offset..];
    let expected = numel
        .checked_mul(4)
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    if payload.len() < expected {
        return Err(Error::Format(format!(
            "truncated payload: expected {expected} bytes, found {}",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor { dims, data })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Reads just the dims of a tensor file without loading the payload.
pub fn read_tensor_dims(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    use std::io::Read;
    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = [0u8; 6 + 4 * MAX_NDIM];
    let mut filled = 0;
    while filled < head.len() {
        let n = file.read(&mut head[filled..]).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    decode_header(&head[..filled]).map(|(dims, _)| dims)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    read_tensor(path)?.to_matrix()
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<Array1<f64>> {
    read_tensor(path)?.to_vector()
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    write_tensor(path, &Tensor::from_matrix(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_small_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.dtf");
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        write_tensor(&path, &t).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(back.dims(), &[2, 3]);
        assert_eq!(back.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(read_tensor_dims(&path).unwrap(), vec![2, 3]);
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = encode(&Tensor::new(vec![1], vec![0.5]).unwrap());
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let bytes = encode(&Tensor::new(vec![4], vec![1.0; 4]).unwrap());
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(decode(&bytes[..7]), Err(Error::Format(_))));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode(&Tensor::new(vec![1], vec![1.0]).unwrap());
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn unsupported_dtype() {
        let mut bytes = encode(&Tensor::new(vec![1], vec![1.0]).unwrap());
        bytes[4] = 2;
        assert!(matches!(decode(&bytes), Err(Error::UnsupportedDtype(2))));
    }

    #[test]
    fn ndim_limits() {
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1], vec![0.0]).is_err());
        let mut bytes = encode(&Tensor::new(vec![1], vec![1.0]).unwrap());
        bytes[5] = 4;
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn zero_sized_dims_are_legal() {
        let t = Tensor::new(vec![0, 5], vec![]).unwrap();
        assert_eq!(decode(&encode(&t)).unwrap(), t);
    }
}
