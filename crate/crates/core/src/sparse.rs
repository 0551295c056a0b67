//! Compressed sparse row storage.
//!
//! Every row stores its off-diagonal entries in ascending column order
//! followed by the diagonal entry, which is always present. Row sums taken in
//! storage order are then exactly zero whenever the diagonal was set to minus
//! the sum of the off-diagonals.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

/// Sorts off-diagonals, merges duplicates and moves the diagonal to the end.
fn normalize_row(row: usize, mut entries: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    entries.sort_by_key(|e| e.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(entries.len() + 1);
    let mut diag = 0.0;
    for (col, v) in entries {
        if col == row {
            diag += v;
        } else if let Some(last) = out.last_mut().filter(|l| l.0 == col) {
            last.1 += v;
        } else {
            out.push((col, v));
        }
    }
    out.push((row, diag));
    out
}

impl CsrMatrix {
    /// Builds from per-row entry lists (any order, duplicates summed).
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let rows: Vec<Vec<(usize, f64)>> = rows
            .into_par_iter()
            .enumerate()
            .map(|(i, r)| normalize_row(i, r))
            .collect();
        Self::from_normalized_rows(n, rows)
    }

    /// Builds from rows already in storage layout.
    pub(crate) fn from_normalized_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nnz = rows.iter().map(Vec::len).sum();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        indptr.push(0);
        for r in rows {
            debug_assert!(r.iter().all(|e| e.0 < n));
            for (c, v) in r {
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            n,
            indptr,
            indices,
            values,
        }
    }

    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows = vec![Vec::new(); n];
        for &(i, j, v) in triplets {
            rows[i].push((j, v));
        }
        Self::from_rows(rows)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows((0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    /// Entries of row `i` without the trailing diagonal.
    pub fn off_diagonal(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1] - 1;
        self.indices[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.values[self.indptr[i + 1] - 1])
            .collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).filter(|e| e.0 == j).map(|e| e.1).sum()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        let body = |(i, yi): (usize, &mut f64)| {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        };
        if self.n >= 4096 {
            y.par_iter_mut().enumerate().for_each(body);
        } else {
            y.iter_mut().enumerate().for_each(body);
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `xᵀ M`.
    pub fn left_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, xi) in x.iter().enumerate() {
            for (j, v) in self.row(i) {
                y[j] += xi * v;
            }
        }
        y
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|e| e.1).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.n];
        for (i, j, v) in self.triplets() {
            rows[j].push((i, v));
        }
        Self::from_rows(rows)
    }

    /// Applies `f(row, col, value)` entrywise, keeping the pattern.
    pub fn map(&self, f: impl Fn(usize, usize, f64) -> f64 + Sync) -> Self {
        let mut out = self.clone();
        out.values
            .par_iter_mut()
            .zip(self.indices.par_iter())
            .enumerate()
            .for_each(|(k, (v, &j))| {
                let i = self.indptr.partition_point(|&p| p <= k) - 1;
                *v = f(i, j, *v);
            });
        out
    }

    /// `alpha * self + beta * other`.
    pub fn combine(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: other.n,
            });
        }
        let rows = (0..self.n)
            .into_par_iter()
            .map(|i| {
                let mut r: Vec<(usize, f64)> = self.row(i).map(|(j, v)| (j, alpha * v)).collect();
                r.extend(other.row(i).map(|(j, v)| (j, beta * v)));
                normalize_row(i, r)
            })
            .collect();
        Ok(Self::from_normalized_rows(self.n, rows))
    }

    /// `self + beta * other` with each diagonal reset to minus the sum of the
    /// row's off-diagonals, so the result annihilates constants exactly.
    pub fn combine_generator(&self, other: &Self, beta: f64) -> Result<Self> {
        let mut sum = self.combine(1.0, other, beta)?;
        for i in 0..sum.n {
            let end = sum.indptr[i + 1] - 1;
            let off: f64 = sum.values[sum.indptr[i]..end].iter().sum();
            sum.values[end] = -off;
        }
        Ok(sum)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Induced 1-norm (largest absolute column sum).
    pub fn norm_one(&self) -> f64 {
        let mut cols = vec![0.0; self.n];
        for (_, j, v) in self.triplets() {
            cols[j] += v.abs();
        }
        cols.into_iter().fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    /// Plain-text triplets: a header `N nnz`, then `row col value` per line
    /// with 17 significant digits.
    pub fn write_triplets(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{} {}", self.n, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{i} {j} {v:.16e}")?;
        }
        Ok(())
    }

    pub fn read_triplets(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidInput(format!("triplet file: {msg}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty"))?;
        let mut h = header.split_whitespace();
        let n: usize = h
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("header"))?;
        let nnz: usize = h
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("header"))?;
        let mut triplets = Vec::with_capacity(nnz);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut p = line.split_whitespace();
            let i = p
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(line))?;
            let j = p
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(line))?;
            let v = p
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(line))?;
            triplets.push((i, j, v));
        }
        if triplets.len() != nnz {
            return Err(bad("entry count does not match header"));
        }
        Ok(Self::from_triplets(n, &triplets))
    }
}
