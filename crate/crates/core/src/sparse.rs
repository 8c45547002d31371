//! Compressed sparse row storage, a Jacobi-preconditioned conjugate gradient
//! solver and an envelope Cholesky factorization used as the SPD test.

use std::fmt::Display;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows above this count use a row-parallel matrix-vector product. Rows are
/// independent so results are bit-identical either way.
const PAR_ROWS: usize = 4096;

/// Sparse matrix in CSR form with strictly increasing column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T = f64> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

/// Integer matrix with entries in {-1, 0, +1}.
pub type IncidenceMatrix = CsrMatrix<i8>;

impl<T> CsrMatrix<T>
where
    T: Copy + Default + PartialEq + std::ops::AddAssign,
{
    /// Builds from `(row, col, value)` triplets. Duplicates are summed in
    /// input order, and explicit zeros that result from the sum are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        // Stable: equal (row, col) keys keep their input order.
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));

        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut k = 0;
        while k < order.len() {
            let (r, c, _) = triplets[order[k]];
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            let mut acc = T::default();
            while k < order.len() && triplets[order[k]].0 == r && triplets[order[k]].1 == c {
                acc += triplets[order[k]].2;
                k += 1;
            }
            if acc != T::default() {
                indices.push(c);
                values.push(acc);
                indptr[r + 1] += 1;
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => T::default(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn transpose(&self) -> Self {
        let trips: Vec<_> = self.iter().map(|(r, c, v)| (c, r, v)).collect();
        CsrMatrix::from_triplets(self.ncols, self.nrows, &trips)
    }

    /// Principal submatrix on the index list `keep` (must be sorted ascending).
    pub fn principal_submatrix(&self, keep: &[usize]) -> Self {
        let mut pos = vec![usize::MAX; self.ncols.max(self.nrows)];
        for (k, &i) in keep.iter().enumerate() {
            pos[i] = k;
        }
        let mut trips = Vec::new();
        for (k, &r) in keep.iter().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if pos[c] != usize::MAX {
                    trips.push((k, pos[c], v));
                }
            }
        }
        CsrMatrix::from_triplets(keep.len(), keep.len(), &trips)
    }

    /// Keeps all rows and the columns listed in `keep` (sorted ascending).
    pub fn select_columns(&self, keep: &[usize]) -> Self {
        let mut pos = vec![usize::MAX; self.ncols];
        for (k, &i) in keep.iter().enumerate() {
            pos[i] = k;
        }
        let trips: Vec<_> = self
            .iter()
            .filter(|&(_, c, _)| pos[c] != usize::MAX)
            .map(|(r, c, v)| (r, pos[c], v))
            .collect();
        CsrMatrix::from_triplets(self.nrows, keep.len(), &trips)
    }
}

impl<T: Copy + Display> CsrMatrix<T> {
    /// Writes the matrix in Matrix Market coordinate format (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, out: &mut W, field: &str) -> std::io::Result<()> {
        writeln!(out, "%%MatrixMarket matrix coordinate {field} general")?;
        writeln!(out, "{} {} {}", self.nrows, self.ncols, self.values.len())?;
        for r in 0..self.nrows {
            let span = self.indptr[r]..self.indptr[r + 1];
            for (c, v) in self.indices[span.clone()].iter().zip(&self.values[span]) {
                writeln!(out, "{} {} {}", r + 1, c + 1, v)?;
            }
        }
        Ok(())
    }
}

impl CsrMatrix<i8> {
    /// `y = A x` for a real vector.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            *yr = cols
                .iter()
                .zip(vals)
                .map(|(&c, &v)| f64::from(v) * x[c])
                .sum();
        }
    }

    /// `y = Aᵀ x` for a real vector, accumulated in row order.
    pub fn tmul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        y.fill(0.0);
        for (r, &xr) in x.iter().enumerate() {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += f64::from(v) * xr;
            }
        }
    }

    /// Exact integer product `self · otherᵀ`, returned as its nonzero entries.
    pub fn mul_transpose_exact(&self, other: &CsrMatrix<i8>) -> Vec<(usize, usize, i64)> {
        assert_eq!(self.ncols, other.ncols);
        let ot = other.transpose();
        let mut out = Vec::new();
        let mut acc = vec![0i64; other.nrows];
        let mut touched = Vec::new();
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&k, &a) in cols.iter().zip(vals) {
                let (orows, ovals) = ot.row(k);
                for (&j, &b) in orows.iter().zip(ovals) {
                    if acc[j] == 0 {
                        touched.push(j);
                    }
                    acc[j] += i64::from(a) * i64::from(b);
                }
            }
            touched.sort_unstable();
            touched.dedup();
            for &j in &touched {
                if acc[j] != 0 {
                    out.push((r, j, acc[j]));
                }
                acc[j] = 0;
            }
            touched.clear();
        }
        out
    }

    pub fn to_f64(&self) -> CsrMatrix<f64> {
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values: self.values.iter().map(|&v| f64::from(v)).collect(),
        }
    }

    /// Overwrites one stored entry. Test hook for negative controls.
    #[doc(hidden)]
    pub fn corrupt_entry(&mut self, r: usize, c: usize, v: i8) -> bool {
        let span = self.indptr[r]..self.indptr[r + 1];
        match self.indices[span.clone()].binary_search(&c) {
            Ok(k) => {
                self.values[span.start + k] = v;
                true
            }
            Err(_) => false,
        }
    }
}

impl CsrMatrix<f64> {
    pub fn identity(n: usize) -> Self {
        let trips: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        CsrMatrix::from_triplets(n, n, &trips)
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let trips: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        CsrMatrix::from_triplets(d.len(), d.len(), &trips)
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        let row_dot = |r: usize| -> f64 {
            let span = self.indptr[r]..self.indptr[r + 1];
            self.indices[span.clone()]
                .iter()
                .zip(&self.values[span])
                .map(|(&c, &v)| v * x[c])
                .sum()
        };
        if self.nrows >= PAR_ROWS {
            y.par_iter_mut()
                .enumerate()
                .for_each(|(r, yr)| *yr = row_dot(r));
        } else {
            for (r, yr) in y.iter_mut().enumerate() {
                *yr = row_dot(r);
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec(x, &mut y);
        y
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.apply(x))
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.apply(y))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= s);
        m
    }

    /// Largest `|A_ij - A_ji|` relative to the largest `|A_ij|`.
    pub fn asymmetry(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let t = self.transpose();
        let mut worst = 0.0f64;
        for (r, c, v) in self.iter() {
            worst = worst.max((v - t.get(r, c)).abs());
        }
        for (r, c, v) in t.iter() {
            worst = worst.max((v - self.get(r, c)).abs());
        }
        worst / scale
    }

    /// Cholesky factorization restricted to the row envelope. Returns `None`
    /// when a nonpositive pivot appears.
    pub fn envelope_cholesky(&self) -> Option<EnvelopeCholesky> {
        assert_eq!(self.nrows, self.ncols);
        let n = self.nrows;
        let first: Vec<usize> = (0..n)
            .map(|i| {
                let (cols, _) = self.row(i);
                cols.first().copied().unwrap_or(i).min(i)
            })
            .collect();
        let mut start = Vec::with_capacity(n + 1);
        start.push(0usize);
        for i in 0..n {
            start.push(start[i] + (i - first[i] + 1));
        }
        let mut l = vec![0.0; start[n]];
        for i in 0..n {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                if c <= i {
                    l[start[i] + c - first[i]] = v;
                }
            }
        }
        for i in 0..n {
            for j in first[i]..=i {
                let lo = first[i].max(first[j]);
                let mut s = l[start[i] + j - first[i]];
                for k in lo..j {
                    s -= l[start[i] + k - first[i]] * l[start[j] + k - first[j]];
                }
                if j < i {
                    l[start[i] + j - first[i]] = s / l[start[j] + j - first[j]];
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[start[i] + i - first[i]] = s.sqrt();
                }
            }
        }
        Some(EnvelopeCholesky { first, start, l })
    }
}

/// Lower-triangular Cholesky factor stored by row envelope.
#[derive(Clone, Debug)]
pub struct EnvelopeCholesky {
    first: Vec<usize>,
    start: Vec<usize>,
    l: Vec<f64>,
}

impl EnvelopeCholesky {
    fn at(&self, i: usize, j: usize) -> f64 {
        if j < self.first[i] {
            0.0
        } else {
            self.l[self.start[i] + j - self.first[i]]
        }
    }

    /// Solves `L Lᵀ x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.first.len();
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in self.first[i]..i {
                s -= self.at(i, k) * y[k];
            }
            y[i] = s / self.at(i, i);
        }
        for i in (0..n).rev() {
            y[i] /= self.at(i, i);
            let yi = y[i];
            for k in self.first[i]..i {
                y[k] -= self.at(i, k) * yi;
            }
        }
        y
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    /// `‖b − A x‖₂ / ‖b‖₂` from the recurrence at exit.
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradient for SPD `a`, warm-started from `x`.
///
/// Stops when `‖r‖₂ ≤ rel_tol ‖b‖₂`. A zero right-hand side yields `x = 0`.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgStats> {
    let n = b.len();
    assert_eq!(a.nrows(), n);
    assert_eq!(x.len(), n);
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        x.fill(0.0);
        return Ok(CgStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();

    let mut r = a.apply(x);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let mut r_norm = norm2(&r);
    if r_norm <= rel_tol * b_norm {
        return Ok(CgStats {
            iterations: 0,
            relative_residual: r_norm / b_norm,
        });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    for it in 1..=max_iter {
        a.mul_vec(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        r_norm = norm2(&r);
        if r_norm <= rel_tol * b_norm {
            return Ok(CgStats {
                iterations: it,
                relative_residual: r_norm / b_norm,
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverDiverged {
        iterations: max_iter,
        residual: r_norm / b_norm,
    })
}
