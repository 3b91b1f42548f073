//! CSV matrices: one row per line, comma-separated decimals, no header.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::reference::Matrix;

/// Expected dimensions; `None` accepts any size.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Shape {
    pub rows: Option<usize>,
    pub cols: Option<usize>,
}

impl Shape {
    pub fn exact(rows: usize, cols: usize) -> Self {
        Shape {
            rows: Some(rows),
            cols: Some(cols),
        }
    }

    pub fn cols(cols: usize) -> Self {
        Shape {
            rows: None,
            cols: Some(cols),
        }
    }
}

pub fn load_matrix(path: &Path, expected: Shape) -> Result<Matrix> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let shape_err = |msg: String| Error::Shape {
        path: path.to_path_buf(),
        msg,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: r + 1,
            col: 0,
            msg: e.to_string(),
        })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(c, tok)| match tok.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: r + 1,
                    col: c + 1,
                    msg: format!("not a finite number: {tok:?}"),
                }),
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(shape_err(format!(
                    "row {} has {} columns, row 1 has {}",
                    r + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(shape_err("no rows".into()));
    }
    let (n, d) = (rows.len(), rows[0].len());
    if expected.rows.is_some_and(|e| e != n) || expected.cols.is_some_and(|e| e != d) {
        return Err(shape_err(format!(
            "found {n}x{d}, expected {}x{}",
            expected.rows.map_or("*".into(), |v| v.to_string()),
            expected.cols.map_or("*".into(), |v| v.to_string()),
        )));
    }
    Matrix::from_rows(&rows)
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for row in m.iter_rows() {
        let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
