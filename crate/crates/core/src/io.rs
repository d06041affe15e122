//! Snapshot binary files and Matrix Market import.
//!
//! Snapshot layout: the magic bytes `HSNP1\0\0\0`, row and column counts as
//! little-endian `u64`, a one-byte velocity flag (0 or 1), the states as
//! column-major little-endian `f64`, then the velocity block in the same
//! layout when the flag is set.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"HSNP1\0\0\0";

fn parse_err(message: impl Into<String>) -> Error {
    Error::Parse {
        line: 0,
        message: message.into(),
    }
}

pub fn write_matrices<W: Write>(out: &mut W, states: &DMatrix<f64>, velocities: Option<&DMatrix<f64>>) -> Result<()> {
    if let Some(v) = velocities {
        if v.shape() != states.shape() {
            return Err(Error::InvalidArgument(format!(
                "velocity block is {:?}, states are {:?}",
                v.shape(),
                states.shape()
            )));
        }
    }
    out.write_all(SNAPSHOT_MAGIC)?;
    out.write_all(&(states.nrows() as u64).to_le_bytes())?;
    out.write_all(&(states.ncols() as u64).to_le_bytes())?;
    out.write_all(&[u8::from(velocities.is_some())])?;
    for block in std::iter::once(states).chain(velocities) {
        for v in block.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(input: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_block<R: Read>(input: &mut R, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut data = vec![0.0; rows * cols];
    let mut buf = [0u8; 8];
    for v in &mut data {
        input.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(DMatrix::from_vec(rows, cols, data))
}

/// Reads states and the optional velocity block.
pub fn read_matrices<R: Read>(input: &mut R) -> Result<(DMatrix<f64>, Option<DMatrix<f64>>)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(parse_err("not a snapshot file (bad magic)"));
    }
    let rows = usize::try_from(read_u64(input)?).map_err(|_| parse_err("row count overflow"))?;
    let cols = usize::try_from(read_u64(input)?).map_err(|_| parse_err("column count overflow"))?;
    rows.checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| parse_err("matrix size overflow"))?;
    let mut flag = [0u8; 1];
    input.read_exact(&mut flag)?;
    let states = read_block(input, rows, cols)?;
    let velocities = match flag[0] {
        0 => None,
        1 => Some(read_block(input, rows, cols)?),
        f => return Err(parse_err(format!("invalid velocity flag {f}"))),
    };
    Ok((states, velocities))
}

pub fn write_snapshot_file(path: &Path, states: &DMatrix<f64>, velocities: Option<&DMatrix<f64>>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_matrices(&mut out, states, velocities)?;
    out.flush()?;
    Ok(())
}

pub fn read_snapshot_file(path: &Path) -> Result<(DMatrix<f64>, Option<DMatrix<f64>>)> {
    read_matrices(&mut BufReader::new(File::open(path)?))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
}

/// Parses a Matrix Market file: `coordinate` real/integer with `general` or
/// `symmetric` storage, or `array` real/integer general (dense, column-major).
pub fn read_matrix_market<R: BufRead>(input: R) -> Result<DMatrix<f64>> {
    let mut lines = input.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err("empty Matrix Market file"))?;
    let header = header?;
    let fields: Vec<String> = header.split_whitespace().map(|s| s.to_ascii_lowercase()).collect();
    let bad_header = |msg: &str| Error::Parse {
        line: 1,
        message: format!("{msg}: '{header}'"),
    };
    if fields.len() != 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" {
        return Err(bad_header("not a Matrix Market matrix header"));
    }
    let coordinate = match fields[2].as_str() {
        "coordinate" => true,
        "array" => false,
        _ => return Err(bad_header("unsupported format")),
    };
    if !matches!(fields[3].as_str(), "real" | "integer" | "double") {
        return Err(bad_header("only real matrices are supported"));
    }
    let symmetry = match fields[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        _ => return Err(bad_header("unsupported symmetry")),
    };

    let mut data = lines.filter_map(|(i, l)| match l {
        Ok(l) => {
            let t = l.trim();
            (!t.is_empty() && !t.starts_with('%')).then(|| Ok((i + 1, t.to_string())))
        }
        Err(e) => Some(Err(Error::from(e))),
    });
    let (size_line, size) = data.next().ok_or_else(|| parse_err("missing size line"))??;
    let nums = |line: usize, s: &str| -> Result<Vec<f64>> {
        s.split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("invalid number '{t}'"),
                })
            })
            .collect()
    };
    let dims = |line: usize, v: &[f64], want: usize| -> Result<Vec<usize>> {
        if v.len() != want || v.iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
            return Err(Error::Parse {
                line,
                message: format!("expected {want} non-negative integers"),
            });
        }
        Ok(v.iter().map(|&x| x as usize).collect())
    };
    let size_vals = nums(size_line, &size)?;

    if coordinate {
        let d = dims(size_line, &size_vals, 3)?;
        let (rows, cols, nnz) = (d[0], d[1], d[2]);
        if symmetry == Symmetry::Symmetric && rows != cols {
            return Err(Error::Parse {
                line: size_line,
                message: "symmetric storage of a non-square matrix".into(),
            });
        }
        let mut m = DMatrix::zeros(rows, cols);
        let mut count = 0;
        for entry in data {
            let (line, text) = entry?;
            let v = nums(line, &text)?;
            if v.len() != 3 {
                return Err(Error::Parse {
                    line,
                    message: "coordinate entry needs 'row col value'".into(),
                });
            }
            let idx = dims(line, &v[..2], 2)?;
            let (i, j) = (idx[0], idx[1]);
            if i == 0 || j == 0 || i > rows || j > cols {
                return Err(Error::Parse {
                    line,
                    message: format!("index ({i}, {j}) outside {rows}x{cols}"),
                });
            }
            m[(i - 1, j - 1)] += v[2];
            if symmetry == Symmetry::Symmetric && i != j {
                m[(j - 1, i - 1)] += v[2];
            }
            count += 1;
        }
        if count != nnz {
            return Err(parse_err(format!("expected {nnz} entries, found {count}")));
        }
        Ok(m)
    } else {
        let d = dims(size_line, &size_vals, 2)?;
        let (rows, cols) = (d[0], d[1]);
        let mut values = Vec::with_capacity(rows * cols);
        for entry in data {
            let (line, text) = entry?;
            values.extend(nums(line, &text)?);
        }
        match symmetry {
            Symmetry::General => {
                if values.len() != rows * cols {
                    return Err(parse_err(format!("expected {} values, found {}", rows * cols, values.len())));
                }
                Ok(DMatrix::from_vec(rows, cols, values))
            }
            Symmetry::Symmetric => {
                // Lower triangle, column by column.
                if rows != cols || values.len() != rows * (rows + 1) / 2 {
                    return Err(parse_err("malformed symmetric array"));
                }
                let mut m = DMatrix::zeros(rows, cols);
                let mut it = values.into_iter();
                for j in 0..cols {
                    for i in j..rows {
                        let v = it.next().expect("counted above");
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
                Ok(m)
            }
        }
    }
}

pub fn read_matrix_market_file(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix_market(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let x = DMatrix::from_fn(3, 4, |i, j| (i as f64 + 0.1) / (j as f64 + 0.3) - 1e-300);
        let mut v = x.map(|a| -a * std::f64::consts::PI);
        v[(0, 0)] = f64::MIN_POSITIVE / 4.0;
        for vel in [None, Some(&v)] {
            let mut buf = Vec::new();
            write_matrices(&mut buf, &x, vel).unwrap();
            assert_eq!(&buf[..8], SNAPSHOT_MAGIC);
            assert_eq!(buf.len(), 8 + 16 + 1 + 8 * 12 * (1 + usize::from(vel.is_some())));
            let (rx, rv) = read_matrices(&mut buf.as_slice()).unwrap();
            assert!(rx.iter().zip(x.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
            assert_eq!(rv.is_some(), vel.is_some());
            if let Some(rv) = rv {
                assert!(rv.iter().zip(v.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }

    #[test]
    fn snapshot_rejects_garbage() {
        assert!(read_matrices(&mut &b"HSNP2\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        write_matrices(&mut buf, &DMatrix::zeros(2, 2), None).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_matrices(&mut buf.as_slice()).is_err());
        assert!(write_matrices(&mut Vec::new(), &DMatrix::zeros(2, 2), Some(&DMatrix::zeros(2, 3))).is_err());
    }

    #[test]
    fn matrix_market_coordinate() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n% comment\n3 3 4\n1 1 2.0\n2 1 -1\n2 2 2\n3 3 1.5e0\n";
        let m = read_matrix_market(text.as_bytes()).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, 0.0, 0.0, 0.0, 1.5]));

        let general = "%%MatrixMarket matrix coordinate real general\n2 3 2\n1 3 5\n2 1 -2\n";
        let g = read_matrix_market(general.as_bytes()).unwrap();
        assert_eq!(g, DMatrix::from_row_slice(2, 3, &[0.0, 0.0, 5.0, -2.0, 0.0, 0.0]));
    }

    #[test]
    fn matrix_market_array_and_errors() {
        let text = "%%MatrixMarket matrix array real general\n3 1\n1.0\n0.5\n-2\n";
        let v = read_matrix_market(text.as_bytes()).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 0.5, -2.0]);
        let bad_index = "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n";
        assert!(read_matrix_market(bad_index.as_bytes()).is_err());
        let short = "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n";
        assert!(read_matrix_market(short.as_bytes()).is_err());
        let complex = "%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1 0\n";
        assert!(read_matrix_market(complex.as_bytes()).is_err());
    }
}
