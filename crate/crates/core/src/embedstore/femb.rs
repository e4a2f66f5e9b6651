//! Little-endian binary container for `f32` matrices.
//!
//! Layout: 4-byte magic, `u16` version, `u32` dim, then a format-specific
//! row count and `rows × dim` row-major `f32` values. No trailing bytes.

use crate::error::{Error, Result};

pub const FEMB_MAGIC: [u8; 4] = *b"FEMB";
pub const FRRM_MAGIC: [u8; 4] = *b"FRRM";
pub const FORMAT_VERSION: u16 = 1;

const FEMB_HEADER: usize = 4 + 2 + 4 + 8;
const FRRM_HEADER: usize = 4 + 2 + 4;

/// Encodes an embedding matrix (`count` rows of `dim` values).
pub fn encode_femb(dim: u32, values: &[f32]) -> Vec<u8> {
    debug_assert!(dim > 0 && values.len().is_multiple_of(dim as usize));
    let count = (values.len() / dim as usize) as u64;
    let mut buf = Vec::with_capacity(FEMB_HEADER + values.len() * 4);
    buf.extend_from_slice(&FEMB_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Decodes a FEMB blob into `(dim, values)`. Finiteness is checked by the
/// store, not here, so that the error can carry the offending row.
pub fn decode_femb(bytes: &[u8]) -> Result<(u32, Vec<f32>)> {
    check_prefix(bytes, FEMB_MAGIC, FEMB_HEADER)?;
    let dim = read_u32(bytes, 6);
    if dim == 0 {
        return Err(Error::DimZero);
    }
    let count = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
    let body = &bytes[FEMB_HEADER..];
    let expected = (count as u128) * (dim as u128) * 4;
    if body.len() as u128 != expected {
        return Err(Error::RowCountMismatch { declared: count, dim, body_bytes: body.len() });
    }
    Ok((dim, read_f32s(body)))
}

/// Encodes a square `dim × dim` matrix.
pub fn encode_frrm(dim: u32, values: &[f32]) -> Vec<u8> {
    debug_assert_eq!(values.len(), (dim as usize) * (dim as usize));
    let mut buf = Vec::with_capacity(FRRM_HEADER + values.len() * 4);
    buf.extend_from_slice(&FRRM_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_frrm(bytes: &[u8]) -> Result<(u32, Vec<f32>)> {
    check_prefix(bytes, FRRM_MAGIC, FRRM_HEADER)?;
    let dim = read_u32(bytes, 6);
    if dim == 0 {
        return Err(Error::DimZero);
    }
    let body = &bytes[FRRM_HEADER..];
    let expected = (dim as u128) * (dim as u128) * 4;
    if body.len() as u128 != expected {
        return Err(Error::RowCountMismatch { declared: dim as u64, dim, body_bytes: body.len() });
    }
    Ok((dim, read_f32s(body)))
}

/// Bare `f32` vector file used for single query embeddings: `dim` values, no header.
pub fn decode_raw_f32(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(4) {
        return Err(Error::TruncatedHeader { needed: 4 * (bytes.len() / 4 + 1), available: bytes.len() });
    }
    Ok(read_f32s(bytes))
}

pub fn encode_raw_f32(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn check_prefix(bytes: &[u8], magic: [u8; 4], header: usize) -> Result<()> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedHeader { needed: header, available: bytes.len() });
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != magic {
        return Err(Error::MagicMismatch { expected: magic, found });
    }
    if bytes.len() < header {
        return Err(Error::TruncatedHeader { needed: header, available: bytes.len() });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    Ok(())
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn read_f32s(body: &[u8]) -> Vec<f32> {
    body.chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let bytes = encode_femb(2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(&bytes[..4], b"FEMB");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(read_u32(&bytes, 6), 2);
        assert_eq!(u64::from_le_bytes(bytes[10..18].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 18 + 16);
    }

    #[test]
    fn truncated_body_is_row_count_mismatch() {
        let mut bytes = encode_femb(4, &[0.5; 20]);
        // claim five rows, ship four
        bytes.truncate(bytes.len() - 16);
        assert!(matches!(
            decode_femb(&bytes),
            Err(Error::RowCountMismatch { declared: 5, dim: 4, .. })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_femb(2, &[1.0, 1.0]);
        bytes.push(0);
        assert!(matches!(decode_femb(&bytes), Err(Error::RowCountMismatch { .. })));
    }

    #[test]
    fn wrong_magic_and_version() {
        let mut bytes = encode_femb(2, &[1.0, 1.0]);
        bytes[0] = b'X';
        assert!(matches!(decode_femb(&bytes), Err(Error::MagicMismatch { .. })));
        let mut bytes = encode_femb(2, &[1.0, 1.0]);
        bytes[4] = 7;
        assert!(matches!(decode_femb(&bytes), Err(Error::UnsupportedVersion(7))));
        let frrm = encode_frrm(1, &[1.0]);
        assert!(matches!(decode_femb(&frrm), Err(Error::MagicMismatch { .. })));
    }

    #[test]
    fn zero_dim_and_short_header() {
        let mut bytes = encode_femb(1, &[]);
        bytes[6..10].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_femb(&bytes), Err(Error::DimZero)));
        assert!(matches!(decode_femb(b"FEMB\x01"), Err(Error::TruncatedHeader { .. })));
        assert!(matches!(decode_femb(b"FE"), Err(Error::TruncatedHeader { .. })));
    }

    #[test]
    fn frrm_roundtrip_bytes() {
        let values: Vec<f32> = (0..9).map(|i| i as f32 * 0.25 - 1.0).collect();
        let bytes = encode_frrm(3, &values);
        let (dim, back) = decode_frrm(&bytes).unwrap();
        assert_eq!(dim, 3);
        assert_eq!(encode_frrm(dim, &back), bytes);
        assert!(matches!(decode_frrm(&bytes[..bytes.len() - 4]), Err(Error::RowCountMismatch { .. })));
    }
}
