//! Binary tensor cache: magic `CTEN`, u32 version, u8 dtype, u8 ndim,
//! u64 dims, then the row-major little-endian f32 payload.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"CTEN";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a tensor file (bad magic)")]
    BadMagic,
    #[error("unsupported tensor file version {0}")]
    BadVersion(u32),
    #[error("unsupported dtype code {0}")]
    BadDtype(u8),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("dims {dims:?} do not match {len} values")]
    ShapeMismatch { dims: Vec<u64>, len: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub dims: Vec<u64>,
    pub data: Vec<f32>,
}

pub fn encode(dims: &[u64], data: &[f32]) -> Result<Vec<u8>, TensorFileError> {
    let expected: u64 = dims.iter().product();
    if expected as usize != data.len() || dims.len() > u8::MAX as usize {
        return Err(TensorFileError::ShapeMismatch {
            dims: dims.to_vec(),
            len: data.len(),
        });
    }
    let mut out = Vec::with_capacity(10 + 8 * dims.len() + 4 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(dims.len() as u8);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(mut bytes: &[u8]) -> Result<StoredTensor, TensorFileError> {
    let mut magic = [0u8; 4];
    read_exact(&mut bytes, &mut magic, 4)?;
    if &magic != MAGIC {
        return Err(TensorFileError::BadMagic);
    }
    let mut word = [0u8; 4];
    read_exact(&mut bytes, &mut word, 4)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(TensorFileError::BadVersion(version));
    }
    let mut head = [0u8; 2];
    read_exact(&mut bytes, &mut head, 2)?;
    if head[0] != DTYPE_F32 {
        return Err(TensorFileError::BadDtype(head[0]));
    }
    let mut dims = Vec::with_capacity(head[1] as usize);
    for _ in 0..head[1] {
        let mut d = [0u8; 8];
        read_exact(&mut bytes, &mut d, 8)?;
        dims.push(u64::from_le_bytes(d));
    }
    let count: u64 = dims.iter().product();
    let expected = count as usize * 4;
    if bytes.len() < expected {
        return Err(TensorFileError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[..expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(StoredTensor { dims, data })
}

fn read_exact(src: &mut &[u8], dst: &mut [u8], n: usize) -> Result<(), TensorFileError> {
    src.read_exact(&mut dst[..n]).map_err(|_| TensorFileError::Truncated {
        expected: n,
        found: src.len(),
    })
}

pub fn write(path: impl AsRef<Path>, dims: &[u64], data: &[f32]) -> Result<(), TensorFileError> {
    let bytes = encode(dims, data)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<StoredTensor, TensorFileError> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let bytes = encode(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(&bytes[..4], b"CTEN");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(bytes[8], 0);
        assert_eq!(bytes[9], 2);
        assert_eq!(&bytes[10..18], &2u64.to_le_bytes());
        assert_eq!(bytes.len(), 10 + 16 + 24);
    }

    #[test]
    fn corruption_detected() {
        let bytes = encode(&[4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(TensorFileError::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(TensorFileError::BadMagic)));
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(matches!(decode(&v2), Err(TensorFileError::BadVersion(2))));
    }

    proptest! {
        #[test]
        fn round_trip(data in proptest::collection::vec(-1e6f32..1e6, 0..64), split in 1usize..4) {
            let dims = if data.len() % split == 0 && !data.is_empty() {
                vec![split as u64, (data.len() / split) as u64]
            } else {
                vec![data.len() as u64]
            };
            let back = decode(&encode(&dims, &data).unwrap()).unwrap();
            prop_assert_eq!(back.dims, dims);
            prop_assert_eq!(back.data, data);
        }
    }
}
