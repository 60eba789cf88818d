//! Descriptor blobs: `u32` rank, `rank` × `u32` dims, then little-endian f32
//! values in row-major order.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BlobError {
    #[error("blob truncated at byte {0}")]
    Truncated(usize),
    #[error("blob dims {dims:?} need {expected} values, payload has {actual}")]
    Size { dims: Vec<u32>, expected: usize, actual: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub dims: Vec<u32>,
    pub values: Vec<f32>,
}

impl Blob {
    pub fn new(dims: Vec<u32>, values: Vec<f32>) -> Result<Self, BlobError> {
        let expected = dims.iter().map(|&d| d as usize).product::<usize>();
        if expected != values.len() {
            return Err(BlobError::Size { dims, expected, actual: values.len() });
        }
        Ok(Self { dims, values })
    }

    pub fn vector(values: &[f64]) -> Self {
        Self { dims: vec![values.len() as u32], values: values.iter().map(|&v| v as f32).collect() }
    }

    /// Rows of a rank-2 blob (a rank-1 blob is one row).
    pub fn rows(&self) -> Vec<Vec<f64>> {
        let cols = self.dims.last().copied().unwrap_or(0) as usize;
        if cols == 0 {
            return Vec::new();
        }
        self.values.chunks(cols).map(|r| r.iter().map(|&v| v as f64).collect()).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + 4 * self.values.len());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BlobError> {
        let word = |i: usize| -> Result<[u8; 4], BlobError> {
            bytes.get(i..i + 4).map(|b| b.try_into().unwrap()).ok_or(BlobError::Truncated(i))
        };
        let rank = u32::from_le_bytes(word(0)?) as usize;
        let dims = (0..rank).map(|i| word(4 + 4 * i).map(u32::from_le_bytes)).collect::<Result<Vec<_>, _>>()?;
        let start = 4 + 4 * rank;
        let payload = &bytes[start.min(bytes.len())..];
        if payload.len() % 4 != 0 {
            return Err(BlobError::Truncated(bytes.len()));
        }
        let values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Self::new(dims, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BlobError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BlobError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
