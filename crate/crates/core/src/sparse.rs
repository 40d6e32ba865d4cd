//! Minimal compressed-sparse-row storage for superoperators.

use std::ops::{AddAssign, Mul};

use nalgebra::{DMatrix, Scalar};
use num_traits::Zero;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T> CsrMatrix<T>
where
    T: Copy + Zero + AddAssign + Mul<Output = T> + PartialEq,
{
    /// Builds the matrix from `(row, col, value)` triplets. Duplicates are
    /// summed and exact zeros dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row = 0;
        let mut k = 0;
        while k < triplets.len() {
            let (r, c, _) = triplets[k];
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of bounds");
            let mut sum = T::zero();
            while k < triplets.len() && triplets[k].0 == r && triplets[k].1 == c {
                sum += triplets[k].2;
                k += 1;
            }
            while row < r {
                indptr.push(indices.len());
                row += 1;
            }
            if sum != T::zero() {
                indices.push(c);
                values.push(sum);
            }
        }
        while row < nrows {
            indptr.push(indices.len());
            row += 1;
        }
        Self { nrows, ncols, indptr, indices, values }
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

    /// y = A·x
    pub fn matvec(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = T::zero();
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            *out = acc;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.indptr[r]..self.indptr[r + 1]).map(move |k| (r, self.indices[k], self.values[k]))
        })
    }

    pub fn diagonal(&self) -> Vec<T> {
        let mut d = vec![T::zero(); self.nrows.min(self.ncols)];
        for (r, c, v) in self.iter() {
            if r == c {
                d[r] = v;
            }
        }
        d
    }
}

impl<T> CsrMatrix<T>
where
    T: Scalar + Copy + Zero + AddAssign + Mul<Output = T> + PartialEq,
{
    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::from_element(self.nrows, self.ncols, T::zero());
        for (r, c, v) in self.iter() {
            m[(r, c)] = v;
        }
        m
    }
}
