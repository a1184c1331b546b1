//! Reader and writer for the PEG patch-embedding interchange format.
//!
//! Layout, little-endian throughout:
//!
//! | bytes  | field                                   |
//! |--------|-----------------------------------------|
//! | 0-3    | magic `PEGF`                            |
//! | 4-7    | version (u32, currently 1)              |
//! | 8-19   | rows, cols, dim (u32 each)              |
//! | 20-31  | image_height, image_width, patch_size   |
//! | 32-35  | flags (bit 0 = normalized)              |
//! | 36..   | rows*cols*dim f32, row-major            |

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::grid::{GridError, ImageGeometry, PatchEmbeddingGrid};

pub const MAGIC: &[u8; 4] = b"PEGF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 36;
pub const FLAG_NORMALIZED: u32 = 1;

#[derive(Debug, Error)]
pub enum PegError {
    #[error("bad magic {0:?}, expected \"PEGF\"")]
    BadMagic([u8; 4]),
    #[error("unsupported PEG version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("header dimensions inconsistent with payload: {0}")]
    DimensionOverflow(String),
    #[error("non-finite value at index {index}")]
    NonFiniteInput { index: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(GridError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl From<GridError> for PegError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::NonFiniteInput { index } => PegError::NonFiniteInput { index },
            other => PegError::InvalidGrid(other),
        }
    }
}

struct Header {
    rows: u32,
    cols: u32,
    dim: u32,
    height: u32,
    width: u32,
    patch_size: u32,
    flags: u32,
}

fn u32_at(buf: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(buf[offset..offset + 4].try_into().unwrap())
}

fn parse_header(buf: &[u8]) -> Result<Header, PegError> {
    if buf.len() < HEADER_LEN {
        return Err(PegError::TruncatedPayload {
            expected: HEADER_LEN,
            actual: buf.len(),
        });
    }
    let magic: [u8; 4] = buf[0..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(PegError::BadMagic(magic));
    }
    let version = u32_at(buf, 4);
    if version != VERSION {
        return Err(PegError::UnsupportedVersion(version));
    }
    Ok(Header {
        rows: u32_at(buf, 8),
        cols: u32_at(buf, 12),
        dim: u32_at(buf, 16),
        height: u32_at(buf, 20),
        width: u32_at(buf, 24),
        patch_size: u32_at(buf, 28),
        flags: u32_at(buf, 32),
    })
}

fn payload_len(h: &Header) -> Result<usize, PegError> {
    (h.rows as usize)
        .checked_mul(h.cols as usize)
        .and_then(|n| n.checked_mul(h.dim as usize))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| {
            PegError::DimensionOverflow(format!("{}x{}x{} overflows", h.rows, h.cols, h.dim))
        })
}

/// Decodes a grid from an in-memory PEG buffer.
///
/// The buffer must contain exactly one grid: trailing bytes are reported as
/// `DimensionOverflow`.
pub fn decode_grid(buf: &[u8]) -> Result<PatchEmbeddingGrid, PegError> {
    let h = parse_header(buf)?;
    let expected = payload_len(&h)?;
    let actual = buf.len() - HEADER_LEN;
    if actual < expected {
        return Err(PegError::TruncatedPayload { expected, actual });
    }
    if actual > expected {
        return Err(PegError::DimensionOverflow(format!(
            "header declares {expected} payload bytes, found {actual}"
        )));
    }
    grid_from_parts(&h, &buf[HEADER_LEN..])
}

fn grid_from_parts(h: &Header, payload: &[u8]) -> Result<PatchEmbeddingGrid, PegError> {
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let geometry = ImageGeometry {
        height: h.height as usize,
        width: h.width as usize,
        patch_size: h.patch_size as usize,
    };
    Ok(PatchEmbeddingGrid::new(
        h.rows as usize,
        h.cols as usize,
        h.dim as usize,
        data,
        geometry,
        h.flags & FLAG_NORMALIZED != 0,
    )?)
}

/// Reads one grid from a byte stream. Reads exactly the header plus the
/// declared payload; anything after it is left in the stream.
pub fn load_grid<R: Read>(mut source: R) -> Result<PatchEmbeddingGrid, PegError> {
    let mut header = [0u8; HEADER_LEN];
    let got = read_fully(&mut source, &mut header)?;
    if got < HEADER_LEN {
        // Check magic first so a short non-PEG stream reports the right error.
        if got >= 4 && &header[0..4] != MAGIC {
            return Err(PegError::BadMagic(header[0..4].try_into().unwrap()));
        }
        return Err(PegError::TruncatedPayload {
            expected: HEADER_LEN,
            actual: got,
        });
    }
    let h = parse_header(&header)?;
    let expected = payload_len(&h)?;
    let mut payload = Vec::new();
    source.take(expected as u64).read_to_end(&mut payload)?;
    if payload.len() < expected {
        return Err(PegError::TruncatedPayload {
            expected,
            actual: payload.len(),
        });
    }
    grid_from_parts(&h, &payload)
}

fn read_fully<R: Read>(source: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Encodes a grid into a fresh buffer.
pub fn encode_grid(grid: &PatchEmbeddingGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + grid.data().len() * 4);
    write_grid_into(grid, &mut out);
    out
}

fn write_grid_into(grid: &PatchEmbeddingGrid, out: &mut Vec<u8>) {
    let g = grid.geometry();
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        grid.rows() as u32,
        grid.cols() as u32,
        grid.dim() as u32,
        g.height as u32,
        g.width as u32,
        g.patch_size as u32,
        if grid.is_normalized() { FLAG_NORMALIZED } else { 0 },
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in grid.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Writes a grid to a byte sink. Output is a pure function of the grid.
pub fn store_grid<W: Write>(grid: &PatchEmbeddingGrid, mut sink: W) -> Result<(), PegError> {
    sink.write_all(&encode_grid(grid))?;
    sink.flush()?;
    Ok(())
}

pub fn read_grid_file(path: impl AsRef<Path>) -> Result<PatchEmbeddingGrid, PegError> {
    decode_grid(&std::fs::read(path)?)
}

pub fn write_grid_file(grid: &PatchEmbeddingGrid, path: impl AsRef<Path>) -> Result<(), PegError> {
    std::fs::write(path, encode_grid(grid))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(rows: u32, cols: u32, dim: u32, h: u32, w: u32, p: u32, flags: u32) -> Vec<u8> {
        let mut b = b"PEGF".to_vec();
        for v in [1, rows, cols, dim, h, w, p, flags] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn minimal_grid_layout() {
        let g = PatchEmbeddingGrid::from_raw(1, 1, 1, 1, vec![1.0]).unwrap();
        let bytes = encode_grid(&g);
        let mut expected = header(1, 1, 1, 1, 1, 1, 0);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(bytes.len(), HEADER_LEN + 4);
    }

    #[test]
    fn normalized_flag_round_trips() {
        let g = PatchEmbeddingGrid::from_raw(1, 2, 2, 3, vec![3.0, 4.0, 0.0, 2.0])
            .unwrap()
            .normalize()
            .unwrap();
        let bytes = encode_grid(&g);
        assert_eq!(u32_at(&bytes, 32), FLAG_NORMALIZED);
        assert_eq!(decode_grid(&bytes).unwrap(), g);
    }

    #[test]
    fn truncated_payload() {
        let mut b = header(2, 2, 3, 2, 2, 1, 0);
        for i in 0..10 {
            b.extend_from_slice(&(i as f32).to_le_bytes());
        }
        assert!(matches!(
            decode_grid(&b),
            Err(PegError::TruncatedPayload { expected: 48, actual: 40 })
        ));
        assert!(matches!(
            load_grid(&b[..]),
            Err(PegError::TruncatedPayload { expected: 48, actual: 40 })
        ));
    }

    #[test]
    fn truncated_header() {
        assert!(matches!(
            load_grid(&b"PEGF\x01\x00"[..]),
            Err(PegError::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut b = header(1, 1, 1, 1, 1, 1, 0);
        b.extend_from_slice(&0.5f32.to_le_bytes());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode_grid(&bad), Err(PegError::BadMagic(_))));
        let mut v2 = b.clone();
        v2[4] = 2;
        assert!(matches!(decode_grid(&v2), Err(PegError::UnsupportedVersion(2))));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut b = header(1, 1, 1, 1, 1, 1, 0);
        b.extend_from_slice(&[0u8; 8]);
        assert!(matches!(decode_grid(&b), Err(PegError::DimensionOverflow(_))));
    }

    #[test]
    fn huge_dims_overflow() {
        let b = header(u32::MAX, u32::MAX, u32::MAX, 1, 1, 1, 0);
        assert!(matches!(decode_grid(&b), Err(PegError::DimensionOverflow(_))));
    }

    #[test]
    fn nan_payload_rejected() {
        let mut b = header(1, 1, 2, 1, 1, 1, 0);
        b.extend_from_slice(&1.0f32.to_le_bytes());
        b.extend_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode_grid(&b), Err(PegError::NonFiniteInput { index: 1 })));
    }

    // Bytes laid out as the embedding exporter writes them for a 64x64 image
    // at patch size 16: floor(64 / 16) = 4 patches per side.
    #[test]
    fn exporter_style_file() {
        let (h, w, p, d) = (64u32, 64u32, 16u32, 8u32);
        let (rows, cols) = (h / p, w / p);
        let mut b = header(rows, cols, d, h, w, p, 0);
        for i in 0..rows * cols * d {
            b.extend_from_slice(&((i % 7) as f32 - 3.0).to_le_bytes());
        }
        let g = load_grid(&b[..]).unwrap();
        assert_eq!((g.rows(), g.cols(), g.dim()), (4, 4, 8));
        assert_eq!(g.geometry().grid_shape(), (4, 4));
        assert!(!g.is_normalized());
    }

    #[test]
    fn stream_leaves_trailing_data() {
        let g = PatchEmbeddingGrid::from_raw(1, 1, 2, 1, vec![1.0, 2.0]).unwrap();
        let mut b = encode_grid(&g);
        b.extend_from_slice(b"tail");
        let mut cursor = io::Cursor::new(b);
        assert_eq!(load_grid(&mut cursor).unwrap(), g);
        let mut rest = Vec::new();
        cursor.read_to_end(&mut rest).unwrap();
        assert_eq!(rest, b"tail");
    }

    #[test]
    fn store_is_deterministic() {
        let g = PatchEmbeddingGrid::from_raw(2, 3, 4, 2, (0..24).map(|i| i as f32 * 0.25).collect())
            .unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        store_grid(&g, &mut a).unwrap();
        store_grid(&g, &mut b).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn round_trip_bit_exact(
            (rows, cols, dim, data) in (1usize..6, 1usize..6, 1usize..9).prop_flat_map(|(r, c, d)| {
                (Just(r), Just(c), Just(d), prop::collection::vec(
                    any::<f32>().prop_filter("finite", |v| v.is_finite()), r * c * d))
            }),
            patch in 1usize..20,
        ) {
            let g = PatchEmbeddingGrid::from_raw(rows, cols, dim, patch, data).unwrap();
            let mut buf = Vec::new();
            store_grid(&g, &mut buf).unwrap();
            let back = load_grid(&buf[..]).unwrap();
            prop_assert_eq!(back.geometry(), g.geometry());
            let a: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = g.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
