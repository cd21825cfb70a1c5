//! Plain-text matrix files.
//!
//! A block is a header line `rows cols` followed by `rows` lines of `cols`
//! whitespace-separated numbers. Files may hold several blocks back to back;
//! blank lines and lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Scalar};

/// Formats one block with enough digits to parse back to the same bits.
pub fn format_matrix<T: Scalar>(m: &Matrix<T>) -> String {
    let prec = T::ROUND_TRIP_DIGITS - 1;
    let mut s = String::with_capacity(m.len() * (prec + 8) + 16);
    let _ = writeln!(s, "{} {}", m.rows(), m.cols());
    for row in m.row_iter() {
        for (j, x) in row.iter().enumerate() {
            if j > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{:.*e}", prec, x);
        }
        s.push('\n');
    }
    s
}

pub fn write_matrix<T: Scalar, W: Write>(w: &mut W, m: &Matrix<T>) -> Result<()> {
    w.write_all(format_matrix(m).as_bytes())?;
    Ok(())
}

/// Reads every block in `r`.
pub fn read_matrices<T: Scalar, R: BufRead>(r: R) -> Result<Vec<Matrix<T>>> {
    let mut lines = r
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)))
        .filter(|l| match l {
            Ok((_, s)) => {
                let t = s.trim();
                !t.is_empty() && !t.starts_with('#')
            }
            Err(_) => true,
        });
    let mut out = Vec::new();
    while let Some(header) = lines.next() {
        let (line_no, header) = header?;
        let dims: Vec<&str> = header.split_whitespace().collect();
        let parse_dim = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Parse(format!("line {line_no}: bad dimension '{s}'")))
        };
        if dims.len() != 2 {
            return Err(Error::Parse(format!(
                "line {line_no}: expected 'rows cols', got '{}'",
                header.trim()
            )));
        }
        let (rows, cols) = (parse_dim(dims[0])?, parse_dim(dims[1])?);
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let (no, line) = lines.next().ok_or_else(|| {
                Error::Parse(format!(
                    "block at line {line_no}: expected {rows} rows, found {r}"
                ))
            })??;
            let before = data.len();
            for tok in line.split_whitespace() {
                let x = tok
                    .parse::<T>()
                    .map_err(|_| Error::Parse(format!("line {no}: bad number '{tok}'")))?;
                data.push(x);
            }
            if data.len() - before != cols {
                return Err(Error::Parse(format!(
                    "line {no}: expected {cols} values, found {}",
                    data.len() - before
                )));
            }
        }
        out.push(Matrix::new(rows, cols, data)?);
    }
    Ok(out)
}

pub fn read_matrix<T: Scalar, R: BufRead>(r: R) -> Result<Matrix<T>> {
    let mut all = read_matrices(r)?;
    match all.len() {
        1 => Ok(all.remove(0)),
        k => Err(Error::Parse(format!("expected one matrix, found {k}"))),
    }
}

pub fn read_matrix_file<T: Scalar>(path: &std::path::Path) -> Result<Vec<Matrix<T>>> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_matrices(std::io::BufReader::new(f))
}
