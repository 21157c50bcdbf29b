//! EMB1 dense and SPX1 sparse binary formats (little-endian).
//!
//! EMB1: `"EMB1"`, version `u32 = 1`, dtype `u32` (0 = f32, 1 = f64),
//! rows `u64`, cols `u64`, then `rows * cols` scalars in column-major order.
//!
//! SPX1: `"SPX1"`, version `u32 = 1`, m `u64`, n `u64`, nnz `u64`, then `nnz`
//! triplets `(col u64, row u64, value f64)` sorted by column, then row.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::sparse::SparseCodeMatrix;

pub const EMB1_MAGIC: [u8; 4] = *b"EMB1";
pub const SPX1_MAGIC: [u8; 4] = *b"SPX1";
pub const FORMAT_VERSION: u32 = 1;
pub const EMB1_HEADER_LEN: u64 = 4 + 4 + 4 + 8 + 8;
const SPX1_HEADER_LEN: u64 = 4 + 4 + 8 + 8 + 8;
const TRIPLET_LEN: u64 = 24;

/// On-disk scalar width.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn code(self) -> u32 {
        match self {
            Precision::F32 => 0,
            Precision::F64 => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Precision::F32),
            1 => Ok(Precision::F64),
            c => Err(Error::UnsupportedDtype(c)),
        }
    }

    pub fn width(self) -> u64 {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::InvalidConfig(format!(
                "precision must be f32 or f64, got '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Emb1Header {
    pub precision: Precision,
    pub rows: u64,
    pub cols: u64,
}

impl Emb1Header {
    pub fn payload_len(&self) -> u64 {
        self.rows * self.cols * self.precision.width()
    }
}

fn read_array<const N: usize>(r: &mut impl Read, remaining: &mut u64) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::TruncatedFile {
            expected: N as u64,
            found: *remaining,
        },
        _ => Error::Io(e),
    })?;
    *remaining = remaining.saturating_sub(N as u64);
    Ok(buf)
}

fn check_magic(found: [u8; 4], expected: [u8; 4]) -> Result<()> {
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

fn read_emb1_header(r: &mut impl Read, file_len: u64) -> Result<Emb1Header> {
    let mut remaining = file_len;
    check_magic(read_array::<4>(r, &mut remaining)?, EMB1_MAGIC)?;
    let version = u32::from_le_bytes(read_array(r, &mut remaining)?);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let precision = Precision::from_code(u32::from_le_bytes(read_array(r, &mut remaining)?))?;
    let rows = u64::from_le_bytes(read_array(r, &mut remaining)?);
    let cols = u64::from_le_bytes(read_array(r, &mut remaining)?);
    let header = Emb1Header {
        precision,
        rows,
        cols,
    };
    let payload = file_len.saturating_sub(EMB1_HEADER_LEN);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(precision.width()))
        .ok_or_else(|| Error::Corrupt(format!("{rows}x{cols} overflows")))?;
    if payload < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: payload,
        });
    }
    Ok(header)
}

/// Reads only the EMB1 header.
pub fn read_header(path: impl AsRef<Path>) -> Result<Emb1Header> {
    let f = File::open(path)?;
    let len = f.metadata()?.len();
    read_emb1_header(&mut BufReader::new(f), len)
}

fn decode_scalars(bytes: &[u8], precision: Precision) -> Vec<f64> {
    match precision {
        Precision::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Precision::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    }
}

fn to_matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<DenseMatrix> {
    DenseMatrix::new(rows, cols, values).map_err(|e| match e {
        Error::Precondition(msg) => Error::Corrupt(msg),
        other => other,
    })
}

/// Loads an EMB1 file, returning the matrix and its stored precision.
pub fn load_matrix_with_precision(path: impl AsRef<Path>) -> Result<(DenseMatrix, Precision)> {
    let f = File::open(path)?;
    let len = f.metadata()?.len();
    let mut r = BufReader::new(f);
    let h = read_emb1_header(&mut r, len)?;
    let mut bytes = vec![0u8; h.payload_len() as usize];
    r.read_exact(&mut bytes)?;
    let m = to_matrix(h.rows as usize, h.cols as usize, decode_scalars(&bytes, h.precision))?;
    Ok((m, h.precision))
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    load_matrix_with_precision(path).map(|(m, _)| m)
}

/// Reads columns `start..start + count` of an EMB1 file without loading the
/// rest of the payload.
pub fn load_column_window(path: impl AsRef<Path>, start: usize, count: usize) -> Result<DenseMatrix> {
    let mut f = File::open(path)?;
    let len = f.metadata()?.len();
    let h = read_emb1_header(&mut BufReader::new(&mut f), len)?;
    if (start + count) as u64 > h.cols {
        return Err(Error::DimensionMismatch(format!(
            "columns {}..{} of a file with {} columns",
            start,
            start + count,
            h.cols
        )));
    }
    let col_bytes = h.rows * h.precision.width();
    f.seek(SeekFrom::Start(EMB1_HEADER_LEN + start as u64 * col_bytes))?;
    let mut bytes = vec![0u8; (col_bytes * count as u64) as usize];
    f.read_exact(&mut bytes)?;
    to_matrix(h.rows as usize, count, decode_scalars(&bytes, h.precision))
}

/// Writes an EMB1 file. With [`Precision::F32`] values are rounded to the
/// nearest `f32`.
pub fn store_matrix(path: impl AsRef<Path>, matrix: &DenseMatrix, precision: Precision) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&EMB1_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&precision.code().to_le_bytes())?;
    w.write_all(&(matrix.rows() as u64).to_le_bytes())?;
    w.write_all(&(matrix.cols() as u64).to_le_bytes())?;
    match precision {
        Precision::F32 => {
            for v in matrix.as_slice() {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Precision::F64 => {
            for v in matrix.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes an SPX1 file.
pub fn store_codes(path: impl AsRef<Path>, codes: &SparseCodeMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&SPX1_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(codes.atoms() as u64).to_le_bytes())?;
    w.write_all(&(codes.samples() as u64).to_le_bytes())?;
    w.write_all(&(codes.nnz() as u64).to_le_bytes())?;
    let mut entries = Vec::new();
    for (s, col) in codes.columns().iter().enumerate() {
        entries.clear();
        entries.extend_from_slice(col);
        entries.sort_by_key(|e| e.0);
        for &(j, v) in &entries {
            w.write_all(&(s as u64).to_le_bytes())?;
            w.write_all(&(j as u64).to_le_bytes())?;
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads an SPX1 file. The per-column budget of the result is the largest
/// column count present (at least one).
pub fn load_codes(path: impl AsRef<Path>) -> Result<SparseCodeMatrix> {
    let f = File::open(path)?;
    let len = f.metadata()?.len();
    let mut r = BufReader::new(f);
    let mut remaining = len;
    check_magic(read_array::<4>(&mut r, &mut remaining)?, SPX1_MAGIC)?;
    let version = u32::from_le_bytes(read_array(&mut r, &mut remaining)?);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let m = u64::from_le_bytes(read_array(&mut r, &mut remaining)?) as usize;
    let n = u64::from_le_bytes(read_array(&mut r, &mut remaining)?) as usize;
    let nnz = u64::from_le_bytes(read_array(&mut r, &mut remaining)?);
    let expected = nnz
        .checked_mul(TRIPLET_LEN)
        .ok_or_else(|| Error::Corrupt("nnz overflows".into()))?;
    let payload = len.saturating_sub(SPX1_HEADER_LEN);
    if payload < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: payload,
        });
    }
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut last_col = 0usize;
    for _ in 0..nnz {
        let col = u64::from_le_bytes(read_array(&mut r, &mut remaining)?) as usize;
        let row = u64::from_le_bytes(read_array(&mut r, &mut remaining)?) as usize;
        let value = f64::from_le_bytes(read_array(&mut r, &mut remaining)?);
        if col >= n || row >= m {
            return Err(Error::Corrupt(format!("entry ({row}, {col}) outside {m}x{n}")));
        }
        if col < last_col {
            return Err(Error::Corrupt("triplets not sorted by column".into()));
        }
        last_col = col;
        columns[col].push((row, value));
    }
    let k = columns.iter().map(Vec::len).max().unwrap_or(0).max(1);
    SparseCodeMatrix::from_columns(m, k, columns).map_err(|e| Error::Corrupt(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn identity_round_trip() {
        let dir = tmp();
        let p = dir.path().join("i.emb1");
        for prec in [Precision::F32, Precision::F64] {
            store_matrix(&p, &DenseMatrix::identity(2), prec).unwrap();
            let (m, got) = load_matrix_with_precision(&p).unwrap();
            assert_eq!(got, prec);
            assert_eq!(m, DenseMatrix::identity(2));
        }
    }

    #[test]
    fn header_layout_is_fixed() {
        let dir = tmp();
        let p = dir.path().join("h.emb1");
        store_matrix(&p, &DenseMatrix::new(1, 2, vec![1.0, -2.0]).unwrap(), Precision::F64).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &1u64.to_le_bytes());
        assert_eq!(&bytes[20..28], &2u64.to_le_bytes());
        assert_eq!(&bytes[28..36], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 44);
    }

    #[test]
    fn bad_magic() {
        let dir = tmp();
        let p = dir.path().join("bad.emb1");
        store_matrix(&p, &DenseMatrix::identity(2), Precision::F32).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(load_matrix(&p), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload() {
        let dir = tmp();
        let p = dir.path().join("t.emb1");
        let m = DenseMatrix::from_fn(3, 10, |i, j| (i + j) as f64);
        store_matrix(&p, &m, Precision::F32).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 12]).unwrap();
        assert!(matches!(
            load_matrix(&p),
            Err(Error::TruncatedFile { expected: 120, found: 108 })
        ));
        std::fs::write(&p, &bytes[..10]).unwrap();
        assert!(matches!(load_matrix(&p), Err(Error::TruncatedFile { .. })));
    }

    #[test]
    fn unsupported_dtype() {
        let dir = tmp();
        let p = dir.path().join("d.emb1");
        store_matrix(&p, &DenseMatrix::identity(1), Precision::F32).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[8] = 7;
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(load_matrix(&p), Err(Error::UnsupportedDtype(7))));
    }

    #[test]
    fn column_window_reads_slice() {
        let dir = tmp();
        let p = dir.path().join("w.emb1");
        let m = DenseMatrix::from_fn(4, 9, |i, j| (10 * j + i) as f64);
        store_matrix(&p, &m, Precision::F64).unwrap();
        assert_eq!(load_column_window(&p, 3, 4).unwrap(), m.column_range(3, 4));
        assert!(load_column_window(&p, 7, 4).is_err());
    }

    #[test]
    fn codes_round_trip() {
        let dir = tmp();
        let p = dir.path().join("c.spx1");
        let x = SparseCodeMatrix::from_columns(
            5,
            2,
            vec![vec![(4, -1.25), (1, 0.5)], vec![], vec![(0, 3.0)]],
        )
        .unwrap();
        store_codes(&p, &x).unwrap();
        let y = load_codes(&p).unwrap();
        assert_eq!(y.to_dense(), x.to_dense());
        assert_eq!(y.column(0), &[(1, 0.5), (4, -1.25)]);
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[3] = b'0';
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(load_codes(&p), Err(Error::BadMagic { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in proptest::collection::vec(-1e6f64..1e6, 36),
            f64_mode in any::<bool>(),
        ) {
            let dir = tmp();
            let p = dir.path().join("r.emb1");
            let prec = if f64_mode { Precision::F64 } else { Precision::F32 };
            let vals: Vec<f64> = seed[..rows * cols]
                .iter()
                .map(|&v| if f64_mode { v } else { v as f32 as f64 })
                .collect();
            let m = DenseMatrix::new(rows, cols, vals).unwrap();
            store_matrix(&p, &m, prec).unwrap();
            let back = load_matrix(&p).unwrap();
            let bits = |m: &DenseMatrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&m));
        }
    }
}
