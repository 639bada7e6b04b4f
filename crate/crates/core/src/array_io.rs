//! The binary array format shared by every persisted artifact, plus JSON helpers.
//!
//! Layout: `rows: u64`, `cols: u64`, then `rows·cols` values as `f64`,
//! row-major, everything little-endian.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

const HEADER_BYTES: usize = 16;

pub fn encode_array(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + 8 * m.as_slice().len());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_array(bytes: &[u8]) -> std::result::Result<Matrix, String> {
    if bytes.len() < HEADER_BYTES {
        return Err(format!("{} bytes is shorter than the header", bytes.len()));
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| format!("dims {rows}x{cols} overflow"))?;
    let body = &bytes[HEADER_BYTES..];
    if body.len() != n * 8 {
        return Err(format!(
            "dims {rows}x{cols} need {} payload bytes, found {}",
            n * 8,
            body.len()
        ));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())
}

pub fn write_array(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, encode_array(m)).map_err(|e| Error::io(path, e))
}

pub fn read_array(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_array(&bytes).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_two_little_endian_u64() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        let bytes = encode_array(&m);
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(&bytes[0..8], &1u64.to_le_bytes());
        assert_eq!(&bytes[8..16], &3u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &1.0f64.to_le_bytes());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let m = Matrix::zeros(2, 2);
        let bytes = encode_array(&m);
        assert!(decode_array(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_array(&bytes[..10]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bin");
        let m = Matrix::from_rows(&[[1.5, -2.0], [f64::MIN_POSITIVE, 1e300]]).unwrap();
        write_array(&path, &m).unwrap();
        assert_eq!(read_array(&path).unwrap(), m);
    }

    proptest! {
        #[test]
        fn encode_decode_is_identity(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
            let data: Vec<f64> = (0..rows * cols)
                .map(|i| f64::from_bits(seed.rotate_left(i as u32) & 0x7fef_ffff_ffff_ffff))
                .collect();
            let m = Matrix::from_vec(rows, cols, data).unwrap();
            prop_assert_eq!(decode_array(&encode_array(&m)).unwrap(), m);
        }
    }
}
