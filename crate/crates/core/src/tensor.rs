//! Dense `(channels, height, width)` f32 tensors and the CTSR file format.
//!
//! A CTSR file is the magic `CTSR1\n`, a little-endian `u32` byte length,
//! that many bytes of UTF-8 JSON (`{"dtype":"f32","shape":[C,H,W]}`), then
//! `C*H*W` little-endian f32 values in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CTSR_MAGIC: &[u8; 6] = b"CTSR1\n";

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: [usize; 3], len: usize },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch([usize; 3], [usize; 3]),
    #[error("not a CTSR file (bad magic)")]
    BadMagic,
    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 3],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::full(channels, height, width, 0.0)
    }

    pub fn full(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self { shape: [channels, height, width], data: vec![value; channels * height * width] }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<f32>) -> Result<Self, TensorError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::LengthMismatch { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let [c, h, w] = shape;
        let mut data = Vec::with_capacity(c * h * w);
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    data.push(f(ci, i, j));
                }
            }
        }
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[0]
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.shape[1]
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.shape[2]
    }
    #[inline]
    pub fn plane_len(&self) -> usize {
        self.shape[1] * self.shape[2]
    }

    #[inline]
    pub fn index(&self, c: usize, i: usize, j: usize) -> usize {
        debug_assert!(c < self.shape[0] && i < self.shape[1] && j < self.shape[2]);
        (c * self.shape[1] + i) * self.shape[2] + j
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[self.index(c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f32) {
        let k = self.index(c, i, j);
        self.data[k] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn ensure_same_shape(&self, other: &Tensor) -> Result<(), TensorError> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(TensorError::ShapeMismatch(self.shape, other.shape))
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TensorError> {
        let header = serde_json::to_vec(&Header { dtype: "f32".into(), shape: self.shape })?;
        w.write_all(CTSR_MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, TensorError> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != CTSR_MAGIC {
            return Err(TensorError::BadMagic);
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)?;
        if header.dtype != "f32" {
            return Err(TensorError::UnsupportedDtype(header.dtype));
        }
        let n: usize = header.shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        Self::from_vec(header.shape, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TensorError> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TensorError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    shape: [usize; 3],
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::from_vec([1, 1, 2], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let header = br#"{"dtype":"f32","shape":[1,1,2]}"#;
        assert_eq!(&buf[..6], b"CTSR1\n");
        assert_eq!(&buf[6..10], &(header.len() as u32).to_le_bytes());
        assert_eq!(&buf[10..10 + header.len()], header);
        assert_eq!(&buf[10 + header.len()..], [1.0f32.to_le_bytes(), (-2.5f32).to_le_bytes()].concat());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(Tensor::read_from(&b"CTSR2\n\0\0\0\0"[..]), Err(TensorError::BadMagic)));
        let t = Tensor::zeros(2, 3, 3);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(matches!(Tensor::read_from(&buf[..]), Err(TensorError::Io(_))));
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec([2, 2, 2], vec![0.0; 7]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            let mut s = seed;
            let t = Tensor::from_fn([c, h, w], |_, _, _| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f32::from_bits((s >> 33) as u32 & 0x7f7f_ffff)
            });
            let mut buf = Vec::new();
            t.write_to(&mut buf).unwrap();
            let back = Tensor::read_from(&buf[..]).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
