//! Compressed sparse row matrices and a thin wrapper over faer's sparse LU.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};

/// Unordered (row, col, value) entries; duplicates are summed on compression.
#[derive(Clone, Debug, Default)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.nrows && c < self.ncols);
        if v != 0.0 {
            self.entries.push((r, c, v));
        }
    }

    pub fn extend(&mut self, other: Triplets) {
        self.entries.extend(other.entries);
    }

    pub fn into_csr(self) -> CsrMatrix {
        CsrMatrix::from_triplets(self)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Sorts entries by (row, col) and sums duplicates in the order they were
    /// pushed, so the result does not depend on how the entries were produced
    /// as long as the push order is fixed.
    pub fn from_triplets(t: Triplets) -> Self {
        let mut e = t.entries;
        // stable sort keeps push order among duplicates
        e.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; t.nrows + 1];
        let mut indices = Vec::with_capacity(e.len());
        let mut data: Vec<f64> = Vec::with_capacity(e.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in e {
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..t.nrows {
            indptr[i + 1] += indptr[i];
        }
        Self {
            nrows: t.nrows,
            ncols: t.ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        self.indices[a..b]
            .iter()
            .copied()
            .zip(self.data[a..b].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        match self.indices[a..b].binary_search(&c) {
            Ok(k) => self.data[a + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `selfᵀ x`
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for (c, v) in self.row(r) {
                y[c] += v * xr;
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let mut t = Triplets::new(self.ncols, self.nrows);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                t.entries.push((c, r, v));
            }
        }
        t.into_csr()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `a * self + b * other`
    pub fn add_scaled(&self, a: f64, other: &CsrMatrix, b: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t = Triplets::new(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                t.entries.push((r, c, a * v));
            }
            for (c, v) in other.row(r) {
                t.entries.push((r, c, b * v));
            }
        }
        t.into_csr()
    }

    /// Submatrix on the given row and column maps. `rmap[i]` is the new index
    /// of old row `i`, or `None` to drop it.
    pub fn restrict(
        &self,
        rmap: &[Option<usize>],
        nr: usize,
        cmap: &[Option<usize>],
        nc: usize,
    ) -> Self {
        let mut t = Triplets::new(nr, nc);
        for (r, nr_) in rmap.iter().enumerate() {
            let Some(rr) = *nr_ else { continue };
            for (c, v) in self.row(r) {
                if let Some(cc) = cmap[c] {
                    t.entries.push((rr, cc, v));
                }
            }
        }
        t.into_csr()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in d.iter_mut().enumerate() {
            for (c, v) in self.row(r) {
                row[c] = v;
            }
        }
        d
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|r| self.row(r).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A factorized square sparse matrix.
pub struct SparseLu {
    n: usize,
    lu: Option<faer::sparse::linalg::solvers::Lu<usize, f64>>,
}

impl SparseLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        assert_eq!(a.nrows, a.ncols, "LU needs a square matrix");
        let n = a.nrows;
        if n == 0 {
            return Ok(Self { n, lu: None });
        }
        let mut trip = Vec::with_capacity(a.nnz());
        for r in 0..n {
            for (c, v) in a.row(r) {
                trip.push(Triplet::new(r, c, v));
            }
        }
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
            .map_err(|_| Error::SingularSystem { step: None })?;
        let lu = m.sp_lu().map_err(|_| Error::SingularSystem { step: None })?;
        Ok(Self { n, lu: Some(lu) })
    }

    fn run(&self, b: &[f64], transpose: bool) -> Result<Vec<f64>> {
        assert_eq!(b.len(), self.n);
        let Some(lu) = &self.lu else {
            return Ok(Vec::new());
        };
        let mut rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        if transpose {
            lu.solve_transpose_in_place(rhs.as_mut());
        } else {
            lu.solve_in_place(rhs.as_mut());
        }
        let x: Vec<f64> = (0..self.n).map(|i| rhs[(i, 0)]).collect();
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(Error::SingularSystem { step: None })
        }
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.run(b, false)
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.run(b, true)
    }
}
