//! Small fixed-size vector helpers, sparse matrices and the direct LU solve.

use crate::autodiff::Real;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use thiserror::Error;

pub type V3<T> = [T; 3];
/// Row-major 3×3 matrix.
pub type M3<T> = [[T; 3]; 3];

#[inline]
pub fn v3<T: Real>(x: [f64; 3]) -> V3<T> {
    [T::from_f64(x[0]), T::from_f64(x[1]), T::from_f64(x[2])]
}
#[inline]
pub fn add<T: Real>(a: V3<T>, b: V3<T>) -> V3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
#[inline]
pub fn sub<T: Real>(a: V3<T>, b: V3<T>) -> V3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
#[inline]
pub fn scale<T: Real>(a: V3<T>, s: T) -> V3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}
#[inline]
pub fn dot<T: Real>(a: V3<T>, b: V3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
#[inline]
pub fn cross<T: Real>(a: V3<T>, b: V3<T>) -> V3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
#[inline]
pub fn norm<T: Real>(a: V3<T>) -> T {
    dot(a, a).sqrt()
}
#[inline]
pub fn detach3<T: Real>(a: V3<T>) -> V3<T> {
    [a[0].detach(), a[1].detach(), a[2].detach()]
}
#[inline]
pub fn re3<T: Real>(a: V3<T>) -> [f64; 3] {
    [a[0].re(), a[1].re(), a[2].re()]
}

#[inline]
pub fn mat_vec<T: Real>(m: &M3<T>, x: V3<T>) -> V3<T> {
    [dot(m[0], x), dot(m[1], x), dot(m[2], x)]
}
#[inline]
pub fn mat_mul<T: Real>(a: &M3<T>, b: &M3<T>) -> M3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, o) in row.iter_mut().enumerate() {
            *o = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}
#[inline]
pub fn transpose<T: Real>(m: &M3<T>) -> M3<T> {
    [
        [m[0][0], m[1][0], m[2][0]],
        [m[0][1], m[1][1], m[2][1]],
        [m[0][2], m[1][2], m[2][2]],
    ]
}
#[inline]
pub fn det<T: Real>(m: &M3<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}
/// Inverse via the adjugate; caller guarantees a nonzero determinant.
pub fn inverse<T: Real>(m: &M3<T>) -> M3<T> {
    let d = det(m);
    let c = |a: T, b: T, e: T, f: T| (a * f - b * e) / d;
    [
        [
            c(m[1][1], m[1][2], m[2][1], m[2][2]),
            c(m[0][2], m[0][1], m[2][2], m[2][1]),
            c(m[0][1], m[0][2], m[1][1], m[1][2]),
        ],
        [
            c(m[1][2], m[1][0], m[2][2], m[2][0]),
            c(m[0][0], m[0][2], m[2][0], m[2][2]),
            c(m[0][2], m[0][0], m[1][2], m[1][0]),
        ],
        [
            c(m[1][0], m[1][1], m[2][0], m[2][1]),
            c(m[0][1], m[0][0], m[2][1], m[2][0]),
            c(m[0][0], m[0][1], m[1][0], m[1][1]),
        ],
    ]
}
/// `[a]×`, the cross-product matrix.
#[inline]
pub fn skew(a: [f64; 3]) -> M3<f64> {
    [[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]]
}
#[inline]
pub fn outer(a: [f64; 3], b: [f64; 3]) -> M3<f64> {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = a[i] * b[j];
        }
    }
    m
}
pub const IDENTITY: M3<f64> = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[inline]
pub fn m3_add(a: &M3<f64>, b: &M3<f64>) -> M3<f64> {
    let mut m = *a;
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] += b[i][j];
        }
    }
    m
}
#[inline]
pub fn m3_scale(a: &M3<f64>, s: f64) -> M3<f64> {
    let mut m = *a;
    m.iter_mut().flatten().for_each(|x| *x *= s);
    m
}

/// Rotation matrix for the rotation vector `w` (axis·angle).
pub fn rotation_from_vector(w: [f64; 3]) -> M3<f64> {
    let angle = norm(w);
    if angle < 1e-300 {
        return IDENTITY;
    }
    let k = scale(w, 1.0 / angle);
    let kx = skew(k);
    let kx2 = mat_mul(&kx, &kx);
    m3_add(
        &m3_add(&IDENTITY, &m3_scale(&kx, angle.sin())),
        &m3_scale(&kx2, 1.0 - angle.cos()),
    )
}

// ---------------------------------------------------------------------------
// Vector utilities

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}
pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |m, a| m.max(a.abs()))
}
pub fn dot_n(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
/// `y += s·x`
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

// ---------------------------------------------------------------------------
// Sparse matrices

/// Coordinate-format accumulator. Duplicate entries are summed on compression.
#[derive(Clone, Debug, Default)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets { nrows, ncols, entries: Vec::new() }
    }
    #[inline]
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        if v != 0.0 {
            self.entries.push((i, j, v));
        }
    }
    /// Adds a 3×3 block scaled by `s` at block position (`bi`, `bj`).
    pub fn push_block(&mut self, bi: usize, bj: usize, block: &M3<f64>, s: f64) {
        for (r, row) in block.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                self.push(3 * bi + r, 3 * bj + c, s * v);
            }
        }
    }
    pub fn extend_scaled(&mut self, other: &Triplets, s: f64) {
        self.entries
            .extend(other.entries.iter().map(|&(i, j, v)| (i, j, s * v)));
    }
    pub fn to_csr(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(self)
    }
}

/// Compressed sparse row matrix with sorted, duplicate-free columns per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_triplets(t: &Triplets) -> Self {
        // Bucket by row, then stable-sort each row by column: duplicates are
        // summed in insertion order, so the result is deterministic.
        let mut start = vec![0usize; t.nrows + 1];
        for &(i, _, _) in &t.entries {
            start[i + 1] += 1;
        }
        for i in 0..t.nrows {
            start[i + 1] += start[i];
        }
        let mut next = start.clone();
        let mut bucket = vec![(0usize, 0.0f64); t.entries.len()];
        for &(i, j, v) in &t.entries {
            bucket[next[i]] = (j, v);
            next[i] += 1;
        }
        let mut row_ptr = vec![0; t.nrows + 1];
        let mut col_idx = Vec::with_capacity(t.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.entries.len());
        for i in 0..t.nrows {
            let row = &mut bucket[start[i]..start[i + 1]];
            row.sort_by_key(|&(j, _)| j);
            let mut last = None;
            for &(j, v) in row.iter() {
                if last == Some(j) {
                    *values.last_mut().expect("previous entry") += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            row_ptr[i + 1] = col_idx.len();
        }
        CsrMatrix { nrows: t.nrows, ncols: t.ncols, row_ptr, col_idx, values }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .map(|k| self.values[k] * x[self.col_idx[k]])
                    .sum()
            })
            .collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, row) in d.iter_mut().enumerate() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                row[self.col_idx[k]] += self.values[k];
            }
        }
        d
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.col_idx[k], self.values[k]))
        })
    }

    /// Largest `|A_ij - A_ji|` relative to the largest entry.
    pub fn relative_asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
            / scale
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearSolveError {
    #[error("sparse LU factorization failed: {0}")]
    Factorization(String),
    #[error("linear system is numerically singular")]
    Singular,
    #[error("dimension mismatch: matrix {rows}x{cols}, right-hand side {rhs}")]
    Dimension { rows: usize, cols: usize, rhs: usize },
}

/// Solves `A x = b` with a sparse LU factorization (partial pivoting).
pub fn sparse_lu_solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>, LinearSolveError> {
    if a.nrows != a.ncols || b.len() != a.nrows {
        return Err(LinearSolveError::Dimension { rows: a.nrows, cols: a.ncols, rhs: b.len() });
    }
    let n = a.nrows;
    let trip: Vec<Triplet<usize, usize, f64>> =
        a.triplets().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
        .map_err(|e| LinearSolveError::Factorization(format!("{e:?}")))?;
    let lu = mat
        .sp_lu()
        .map_err(|e| LinearSolveError::Factorization(format!("{e:?}")))?;
    let mut rhs = Mat::<f64>::zeros(n, 1);
    for (i, &bi) in b.iter().enumerate() {
        rhs[(i, 0)] = bi;
    }
    let x = faer::linalg::solvers::Solve::solve(&lu, &rhs);
    let out: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(LinearSolveError::Singular);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let m = [[2.0, 1.0, 0.5], [0.0, 3.0, 1.0], [1.0, -1.0, 4.0]];
        let p = mat_mul(&m, &inverse(&m));
        for i in 0..3 {
            for j in 0..3 {
                assert!((p[i][j] - IDENTITY[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn csr_sums_duplicates() {
        let mut t = Triplets::new(2, 2);
        t.push(0, 0, 1.0);
        t.push(0, 0, 2.0);
        t.push(1, 0, 4.0);
        let a = t.to_csr();
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.get(1, 0), 4.0);
        assert_eq!(a.get(1, 1), 0.0);
        assert_eq!(a.mul_vec(&[1.0, 1.0]), vec![3.0, 4.0]);
    }

    #[test]
    fn lu_nonsymmetric() {
        let mut t = Triplets::new(2, 2);
        t.push(0, 0, 2.0);
        t.push(0, 1, 1.0);
        t.push(1, 1, 3.0);
        let x = sparse_lu_solve(&t.to_csr(), &[1.0, 1.0]).unwrap();
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-14);
        assert!((x[1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn rotation_is_orthonormal() {
        let r = rotation_from_vector([0.3, -0.2, 0.9]);
        let p = mat_mul(&r, &transpose(&r));
        for i in 0..3 {
            for j in 0..3 {
                assert!((p[i][j] - IDENTITY[i][j]).abs() < 1e-14);
            }
        }
        assert!((det(&r) - 1.0).abs() < 1e-14);
    }
}
