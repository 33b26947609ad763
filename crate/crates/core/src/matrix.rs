//! Dense row-major `f64` matrix.
//!
//! All numeric state in this crate (inputs, logits, soft group assignments,
//! feature blocks) lives in these matrices. Reductions always run in row
//! order so repeated runs are bitwise identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from a flat row-major buffer.
    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "flat buffer of {} values cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix { rows: n, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    /// Gathers the given rows into a new matrix, preserving order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Writes a matrix as `<stem>.f64` (row-major little-endian) plus a
/// `<stem>.shape` text sidecar holding `rows,cols`.
pub fn write_matrix(stem: &std::path::Path, m: &Matrix) -> Result<()> {
    if let Some(dir) = stem.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut bytes = Vec::with_capacity(m.data.len() * 8);
    for v in &m.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(stem.with_extension("f64"), bytes)?;
    std::fs::write(stem.with_extension("shape"), format!("{},{}\n", m.rows, m.cols))?;
    Ok(())
}

pub fn read_matrix(stem: &std::path::Path) -> Result<Matrix> {
    let spath = stem.with_extension("shape");
    let fpath = stem.with_extension("f64");
    for p in [&spath, &fpath] {
        if !p.exists() {
            return Err(Error::MissingInput(p.display().to_string()));
        }
    }
    let shape = std::fs::read_to_string(&spath)?;
    let (r, c) = shape
        .trim()
        .split_once(',')
        .ok_or_else(|| Error::Parse(format!("{}: malformed shape", spath.display())))?;
    let rows: usize = r
        .parse()
        .map_err(|_| Error::Parse(format!("{}: bad rows", spath.display())))?;
    let cols: usize = c
        .parse()
        .map_err(|_| Error::Parse(format!("{}: bad cols", spath.display())))?;
    let bytes = std::fs::read(&fpath)?;
    if bytes.len() != rows * cols * 8 {
        return Err(Error::Parse(format!(
            "{}: expected {} bytes, found {}",
            fpath.display(),
            rows * cols * 8,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|chunk| f64::from_le_bytes(chunk.try_into().unwrap()))
        .collect();
    Matrix::from_flat(rows, cols, data)
}
