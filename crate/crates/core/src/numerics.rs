//! Dense and sparse kernels shared by every stage of the pipeline.
//!
//! All arithmetic is 64-bit. Slice-level kernels (`gemm_*`, [`cosine`],
//! [`softmax_in_place`]) are exposed for the attention code, which works on
//! small per-node blocks rather than whole matrices.

use crate::error::{Error, Result};
use crate::par;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "buffer of length {} cannot hold {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, rhs.cols);
        let (k, n) = (self.cols, rhs.cols);
        par::for_each_row_mut(&mut out.data, n, |i, row| {
            gemm_nn(&self.data[i * k..(i + 1) * k], &rhs.data, 1, k, n, row);
        });
        Ok(out)
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &DenseMatrix) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        DenseMatrix::new(self.rows, self.cols, data)
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Column-wise concatenation `[self | other]`.
    pub fn hstack(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "hstack of {} and {} rows",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        DenseMatrix::new(self.rows, cols, data)
    }

    pub fn select_rows(&self, idx: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        DenseMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn check_same_shape(&self, other: &DenseMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Validating constructor: `row_ptr` nondecreasing, columns in bounds and
    /// strictly increasing within each row, values finite.
    pub fn new(
        rows: usize,
        cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        vals: Vec<f64>,
    ) -> Result<Self> {
        if row_ptr.len() != rows + 1 || row_ptr[0] != 0 {
            return Err(Error::Shape("row_ptr must have rows+1 entries starting at 0".into()));
        }
        if col_idx.len() != vals.len() || *row_ptr.last().unwrap() != col_idx.len() {
            return Err(Error::Shape("row_ptr, col_idx and vals disagree on nnz".into()));
        }
        for r in 0..rows {
            if row_ptr[r] > row_ptr[r + 1] {
                return Err(Error::Shape(format!("row_ptr decreases at row {r}")));
            }
            let cols_r = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            for (k, &c) in cols_r.iter().enumerate() {
                if c >= cols {
                    return Err(Error::Index(format!("column {c} in row {r} (cols = {cols})")));
                }
                if k > 0 && cols_r[k - 1] >= c {
                    return Err(Error::Shape(format!("columns not strictly increasing in row {r}")));
                }
            }
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("non-finite CSR value".into()));
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            vals,
        })
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::Index(format!("entry ({r}, {c}) outside {rows}x{cols}")));
            }
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            vals.push(v);
            last = Some((r, c));
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self::new(rows, cols, row_ptr, col_idx, vals)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut trip = Vec::new();
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let v = m.get(i, j);
                if v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(m.rows(), m.cols(), trip).expect("dense entries are in bounds")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn vals(&self) -> &[f64] {
        &self.vals
    }

    /// Column indices and values of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[s..e], &self.vals[s..e])
    }

    /// Same sparsity pattern, values replaced by `f(row, col, value)`.
    pub fn map_values(&self, f: impl Fn(usize, usize, f64) -> f64) -> CsrMatrix {
        let mut vals = Vec::with_capacity(self.vals.len());
        for r in 0..self.rows {
            let (cols, vs) = self.row(r);
            for (&c, &v) in cols.iter().zip(vs) {
                vals.push(f(r, c, v));
            }
        }
        CsrMatrix {
            vals,
            ..self.clone()
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                m.set(r, c, v);
            }
        }
        m
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0usize; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for r in 0..self.rows {
            let (cols, vs) = self.row(r);
            for (&c, &v) in cols.iter().zip(vs) {
                let slot = next[c];
                col_idx[slot] = r;
                vals[slot] = v;
                next[c] += 1;
            }
        }
        CsrMatrix {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            vals,
        }
    }

    /// Structural and numerical symmetry within `tol`.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let t = self.transpose();
        t.row_ptr == self.row_ptr
            && t.col_idx == self.col_idx
            && t.vals.iter().zip(&self.vals).all(|(a, b)| (a - b).abs() <= tol)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for (&c, &v) in self.col_idx.iter().zip(&self.vals) {
            s[c] += v;
        }
        s
    }

    /// Power-iteration estimate of the spectral norm (largest singular
    /// value), iterating on `AᵀA` from a deterministic start vector.
    pub fn spectral_norm_estimate(&self, iters: usize) -> f64 {
        if self.nnz() == 0 || self.cols == 0 {
            return 0.0;
        }
        let at = self.transpose();
        let mut v: Vec<f64> = (0..self.cols).map(|i| 1.0 + 0.01 * (i % 7) as f64).collect();
        let mut sigma = 0.0;
        for _ in 0..iters {
            let nv = norm2(&v);
            if nv == 0.0 {
                return 0.0;
            }
            v.iter_mut().for_each(|x| *x /= nv);
            let av = csr_matvec(self, &v);
            let atav = csr_matvec(&at, &av);
            sigma = norm2(&av);
            v = atav;
        }
        sigma
    }
}

fn csr_matvec(a: &CsrMatrix, x: &[f64]) -> Vec<f64> {
    (0..a.rows())
        .map(|r| {
            let (cols, vals) = a.row(r);
            cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum()
        })
        .collect()
}

/// Sparse-dense product `a * b`. Each output row accumulates its nonzeros in
/// column order, so the result is identical for any thread count.
pub fn spmm(a: &CsrMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols() != b.rows() {
        return Err(Error::Shape(format!(
            "spmm {}x{} by {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let mut out = DenseMatrix::zeros(a.rows(), b.cols());
    let d = b.cols();
    par::for_each_row_mut(out.data_mut(), d, |r, row| spmm_row(a, b, r, row));
    Ok(out)
}

/// `out += a[r, :] * b` for one output row.
#[inline]
pub fn spmm_row(a: &CsrMatrix, b: &DenseMatrix, r: usize, out: &mut [f64]) {
    let (cols, vals) = a.row(r);
    for (&c, &v) in cols.iter().zip(vals) {
        for (o, x) in out.iter_mut().zip(b.row(c)) {
            *o += v * x;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine of two vectors, clamped to `[-1, 1]`; zero if either has zero norm.
#[inline]
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm2(a);
    let nb = norm2(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine between row `i` of `a` and row `j` of `b`.
pub fn row_cosine(a: &DenseMatrix, b: &DenseMatrix, i: usize, j: usize) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!("row_cosine over {} vs {} columns", a.cols(), b.cols())));
    }
    if i >= a.rows() || j >= b.rows() {
        return Err(Error::Index(format!("rows ({i}, {j}) of ({}, {})", a.rows(), b.rows())));
    }
    Ok(cosine(a.row(i), b.row(j)))
}

/// In-place numerically stable softmax (max subtraction).
#[inline]
pub fn softmax_in_place(x: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    x.iter_mut().for_each(|v| *v /= s);
}

/// Row-wise softmax.
pub fn softmax_lastaxis(x: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    let cols = out.cols();
    par::for_each_row_mut(out.data_mut(), cols, |_, row| softmax_in_place(row));
    out
}

pub fn frobenius_norm(x: &DenseMatrix) -> f64 {
    norm2(x.data())
}

/// Solves `a * x = b` by Gaussian elimination with partial pivoting.
pub fn dense_solve(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return Err(Error::Shape(format!(
            "solve {}x{} with rhs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let m = b.cols();
    let mut lu = a.data().to_vec();
    let mut x = b.data().to_vec();
    for col in 0..n {
        let (piv, pmax) = (col..n)
            .map(|r| (r, lu[r * n + col].abs()))
            .fold((col, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if pmax < 1e-12 {
            return Err(Error::Singular { column: col, pivot: pmax });
        }
        if piv != col {
            for j in 0..n {
                lu.swap(col * n + j, piv * n + j);
            }
            for j in 0..m {
                x.swap(col * m + j, piv * m + j);
            }
        }
        let p = lu[col * n + col];
        for r in col + 1..n {
            let f = lu[r * n + col] / p;
            if f == 0.0 {
                continue;
            }
            lu[r * n + col] = 0.0;
            for j in col + 1..n {
                lu[r * n + j] -= f * lu[col * n + j];
            }
            for j in 0..m {
                x[r * m + j] -= f * x[col * m + j];
            }
        }
    }
    for col in (0..n).rev() {
        let p = lu[col * n + col];
        for j in 0..m {
            let mut s = x[col * m + j];
            for k in col + 1..n {
                s -= lu[col * n + k] * x[k * m + j];
            }
            x[col * m + j] = s / p;
        }
    }
    DenseMatrix::new(n, m, x)
}

/// `out (+)= a * b` with `a: m×k`, `b: k×n`, `out: m×n` (accumulates).
#[inline]
pub fn gemm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

/// `out += aᵀ * b` with `a: m×k`, `b: m×n`, `out: k×n`.
#[inline]
pub fn gemm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in out[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a * bᵀ` with `a: m×k`, `b: n×k`, `out: m×n`.
#[inline]
pub fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Matrix with `cols` orthonormal columns (`rows >= cols`), from modified
/// Gram-Schmidt on Gaussian draws.
pub fn orthonormal_columns(rows: usize, cols: usize, rng: &mut crate::seed::Rng) -> Result<DenseMatrix> {
    use rand_distr::{Distribution, StandardNormal};
    if cols > rows {
        return Err(Error::Config(format!("cannot fit {cols} orthonormal columns in dimension {rows}")));
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while basis.len() < cols {
        let mut v: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(rng)).collect();
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = norm2(&v);
        // redraw on (numerically) dependent samples
        if n < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    Ok(DenseMatrix::from_fn(rows, cols, |i, j| basis[j][i]))
}
