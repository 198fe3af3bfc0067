//! Hierarchy structure: linear aggregation constraints u = A b, coherence
//! predicates, and the summing matrix S = [A; I].

use nalgebra::DMatrix;
use num_traits::{FromPrimitive, NumAssign, Signed};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A summation hierarchy over `n` variables, `m` of which are bottom
/// variables. Variables are ordered upper block first, then bottom block.
///
/// Immutable after construction; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    /// (n - m) x m aggregation matrix, row-major.
    a: Vec<u64>,
    n_upper: usize,
    m: usize,
    labels: Vec<String>,
}

impl Hierarchy {
    /// Build a hierarchy from an integer aggregation matrix and variable
    /// labels (upper labels first, then bottom labels).
    pub fn new(a: Vec<Vec<u64>>, labels: Vec<String>) -> Result<Self> {
        if a.is_empty() || a[0].is_empty() {
            return Err(Error::EmptyMatrix);
        }
        let m = a[0].len();
        let n_upper = a.len();
        for (i, row) in a.iter().enumerate() {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: row.len(),
                });
            }
            if row.iter().all(|&x| x == 0) {
                return Err(Error::AllZeroRow(i));
            }
        }
        if labels.len() != n_upper + m {
            return Err(Error::LabelCountMismatch {
                expected: n_upper + m,
                got: labels.len(),
            });
        }
        Ok(Self {
            a: a.into_iter().flatten().collect(),
            n_upper,
            m,
            labels,
        })
    }

    /// Number of bottom variables.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Total number of variables.
    pub fn n(&self) -> usize {
        self.n_upper + self.m
    }

    /// Number of upper variables.
    pub fn n_upper(&self) -> usize {
        self.n_upper
    }

    /// Variable labels, upper block first.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Entry of the aggregation matrix.
    pub fn a_entry(&self, row: usize, col: usize) -> u64 {
        self.a[row * self.m + col]
    }

    /// Aggregation matrix as a dense scalar matrix.
    pub fn a_matrix<T: Scalar>(&self) -> DMatrix<T> {
        DMatrix::from_fn(self.n_upper, self.m, |i, j| {
            T::from_u64(self.a_entry(i, j)).unwrap()
        })
    }

    /// Summing matrix S = [A; I].
    pub fn summing_matrix<T: Scalar>(&self) -> DMatrix<T> {
        DMatrix::from_fn(self.n(), self.m, |i, j| {
            if i < self.n_upper {
                T::from_u64(self.a_entry(i, j)).unwrap()
            } else if i - self.n_upper == j {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    /// Compute the upper values A b for a bottom vector. Integer-exact when
    /// called with an integer scalar type.
    pub fn aggregate<T>(&self, b: &[T]) -> Result<Vec<T>>
    where
        T: NumAssign + FromPrimitive + Copy,
    {
        if b.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: b.len(),
            });
        }
        Ok((0..self.n_upper)
            .map(|i| {
                let mut acc = T::zero();
                for (j, &bj) in b.iter().enumerate() {
                    let w = self.a_entry(i, j);
                    if w == 1 {
                        acc += bj;
                    } else if w > 1 {
                        acc += T::from_u64(w).unwrap() * bj;
                    }
                }
                acc
            })
            .collect())
    }

    /// True iff the full vector y = [u; b] satisfies ||u - A b||_inf <= tol.
    pub fn is_coherent<T>(&self, y: &[T], tol: T) -> Result<bool>
    where
        T: NumAssign + FromPrimitive + Signed + PartialOrd + Copy,
    {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: y.len(),
            });
        }
        let u = self.aggregate(&y[self.n_upper..])?;
        Ok(u.iter()
            .zip(&y[..self.n_upper])
            .all(|(&ab, &ui)| (ab - ui).abs() <= tol))
    }
}
