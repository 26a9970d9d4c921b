//! `BMAT1` binary matrices and plain numeric CSV.
//!
//! `BMAT1` layout: ASCII magic `BMAT1`, `u32` LE rows, `u32` LE cols, then
//! `rows * cols` little-endian `f64` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::DenseMatrix;
use crate::{Error, Result};

pub const BMAT_MAGIC: &[u8; 5] = b"BMAT1";

pub fn write_bmat(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write_bmat_to(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn write_bmat_to(w: &mut impl Write, m: &DenseMatrix) -> Result<()> {
    let rows = u32::try_from(m.rows())
        .map_err(|_| Error::InvalidInput("row count exceeds u32".into()))?;
    let cols = u32::try_from(m.cols())
        .map_err(|_| Error::InvalidInput("column count exceeds u32".into()))?;
    w.write_all(BMAT_MAGIC)?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_bmat(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    read_bmat_from(&mut r).map_err(|e| match e {
        Error::InvalidInput(msg) | Error::Dimension(msg) => Error::Format {
            path: path.to_path_buf(),
            msg,
        },
        Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => Error::Format {
            path: path.to_path_buf(),
            msg: "truncated BMAT payload".into(),
        },
        other => other,
    })
}

pub fn read_bmat_from(r: &mut impl Read) -> Result<DenseMatrix> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != BMAT_MAGIC {
        return Err(Error::InvalidInput("bad BMAT magic".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let rows = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u32::from_le_bytes(word) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::InvalidInput("BMAT shape overflows".into()))?;
    let mut data = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::InvalidInput("trailing bytes after BMAT payload".into()));
    }
    DenseMatrix::from_vec(rows, cols, data)
}

/// Headerless numeric CSV, one matrix row per record.
pub fn read_csv_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| Error::Format {
                    path: path.to_path_buf(),
                    msg: format!("not a number: {s:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    DenseMatrix::from_rows(&rows).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

pub fn write_csv_matrix(path: impl AsRef<Path>, m: &DenseMatrix) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path.as_ref())?;
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bmat_layout_is_bit_exact() {
        let m = DenseMatrix::from_rows(&[vec![1.0, -2.5], vec![0.0, 3.25], vec![7.0, 8.0]]).unwrap();
        let mut buf = Vec::new();
        write_bmat_to(&mut buf, &m).unwrap();
        assert_eq!(&buf[..5], b"BMAT1");
        assert_eq!(&buf[5..9], &3u32.to_le_bytes());
        assert_eq!(&buf[9..13], &2u32.to_le_bytes());
        assert_eq!(&buf[13..21], &1.0f64.to_le_bytes());
        assert_eq!(&buf[21..29], &(-2.5f64).to_le_bytes());
        assert_eq!(buf.len(), 13 + 6 * 8);
        let back = read_bmat_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn bmat_rejects_bad_magic_truncation_and_trailing_bytes() {
        let m = DenseMatrix::identity(2);
        let mut buf = Vec::new();
        write_bmat_to(&mut buf, &m).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_bmat_from(&mut bad.as_slice()).is_err());

        let short = &buf[..buf.len() - 3];
        assert!(read_bmat_from(&mut &short[..]).is_err());

        let mut long = buf.clone();
        long.push(0);
        assert!(read_bmat_from(&mut long.as_slice()).is_err());
    }

    #[test]
    fn csv_round_trip_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = DenseMatrix::from_rows(&[vec![0.1, -1e-300], vec![12345.678, 2.0 / 3.0]]).unwrap();
        write_csv_matrix(&path, &m).unwrap();
        assert_eq!(read_csv_matrix(&path).unwrap(), m);
    }
}
