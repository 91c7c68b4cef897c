//! Compressed-column matrices and the direct sparse LU used for the
//! implicit step and its transposed (adjoint) solve.

use std::sync::Arc;

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{Conj, MatMut};

use crate::error::{Error, Result};

/// Relative residual every accepted solve must reach.
pub const RESIDUAL_TOL: f64 = 1e-9;
const REFINEMENT_STEPS: usize = 3;

/// Fixed sparsity structure with its symbolic factorization.
pub struct CscPattern {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    symbolic: SymbolicSparseColMat<usize>,
    lu_symbolic: SymbolicLu<usize>,
}

impl std::fmt::Debug for CscPattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CscPattern")
            .field("n", &self.n)
            .field("nnz", &self.row_idx.len())
            .finish()
    }
}

impl CscPattern {
    /// Square pattern; row indices must be sorted and unique per column.
    pub fn new(n: usize, col_ptr: Vec<usize>, row_idx: Vec<usize>) -> Result<Arc<Self>> {
        if col_ptr.len() != n + 1 || col_ptr[n] != row_idx.len() {
            return Err(Error::invalid("inconsistent compressed-column pattern"));
        }
        for j in 0..n {
            let col = &row_idx[col_ptr[j]..col_ptr[j + 1]];
            if col.windows(2).any(|w| w[0] >= w[1]) || col.iter().any(|&i| i >= n) {
                return Err(Error::invalid(format!("column {j} has unsorted or out-of-range rows")));
            }
        }
        faer::set_global_parallelism(faer::Par::Seq);
        let symbolic = SymbolicSparseColMat::new_checked(n, n, col_ptr.clone(), None, row_idx.clone());
        let lu_symbolic = SymbolicLu::try_new(symbolic.as_ref()).map_err(|e| {
            log::debug!("symbolic factorization failed: {e:?}");
            Error::Solver {
                residual: f64::INFINITY,
                condition: f64::INFINITY,
            }
        })?;
        Ok(Arc::new(Self {
            n,
            col_ptr,
            row_idx,
            symbolic,
            lu_symbolic,
        }))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    /// Storage index of entry `(i, j)`, if structurally present.
    pub fn index(&self, i: usize, j: usize) -> Option<usize> {
        let (lo, hi) = (self.col_ptr[j], self.col_ptr[j + 1]);
        self.row_idx[lo..hi].binary_search(&i).ok().map(|k| lo + k)
    }
}

/// Square sparse matrix over a shared pattern.
#[derive(Clone, Debug)]
pub struct CscMatrix {
    pub pattern: Arc<CscPattern>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(pattern: Arc<CscPattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        Self { pattern, values }
    }

    /// Pattern of all nonzero entries plus the diagonal.
    pub fn from_dense(a: &[Vec<f64>]) -> Result<Self> {
        let n = a.len();
        if a.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("matrix must be square"));
        }
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for j in 0..n {
            for (i, row) in a.iter().enumerate() {
                if row[j] != 0.0 || i == j {
                    row_idx.push(i);
                    values.push(row[j]);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Ok(Self {
            pattern: CscPattern::new(n, col_ptr, row_idx)?,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pattern.index(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.pattern;
        let mut y = vec![0.0; p.n];
        for j in 0..p.n {
            let xj = x[j];
            for k in p.col_ptr[j]..p.col_ptr[j + 1] {
                y[p.row_idx[k]] += self.values[k] * xj;
            }
        }
        y
    }

    pub fn mul_vec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.pattern;
        (0..p.n)
            .map(|j| (p.col_ptr[j]..p.col_ptr[j + 1]).map(|k| self.values[k] * x[p.row_idx[k]]).sum())
            .collect()
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        let p = &self.pattern;
        (0..p.n)
            .map(|j| (p.col_ptr[j]..p.col_ptr[j + 1]).map(|k| self.values[k].abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    fn as_faer(&self) -> SparseColMatRef<'_, usize, f64> {
        SparseColMatRef::new(self.pattern.symbolic.as_ref(), &self.values)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Numeric LU factorization of a [`CscMatrix`].
pub struct SparseLu<'a> {
    matrix: &'a CscMatrix,
    lu: Option<Lu<usize, f64>>,
}

impl<'a> SparseLu<'a> {
    /// Factorizes `a`. A structurally or numerically singular matrix yields
    /// a factorization whose solves fail with [`Error::Solver`].
    pub fn new(a: &'a CscMatrix) -> Self {
        let lu = Lu::try_new_with_symbolic(a.pattern.lu_symbolic.clone(), a.as_faer()).ok();
        Self { matrix: a, lu }
    }

    /// Solves `A y = b` with relative residual at most [`RESIDUAL_TOL`].
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_impl(b, false)
    }

    /// Solves `A^T z = g` with the same residual contract.
    pub fn solve_transpose(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.solve_impl(g, true)
    }

    fn raw(&self, rhs: &mut [f64], transpose: bool) {
        let lu = self.lu.as_ref().expect("checked by caller");
        let n = rhs.len();
        let m = MatMut::from_column_major_slice_mut(rhs, n, 1);
        if transpose {
            lu.solve_transpose_in_place_with_conj(Conj::No, m);
        } else {
            lu.solve_in_place_with_conj(Conj::No, m);
        }
    }

    fn residual(&self, y: &[f64], b: &[f64], transpose: bool) -> Vec<f64> {
        let ay = if transpose {
            self.matrix.mul_vec_transpose(y)
        } else {
            self.matrix.mul_vec(y)
        };
        b.iter().zip(&ay).map(|(bi, ai)| bi - ai).collect()
    }

    fn solve_impl(&self, b: &[f64], transpose: bool) -> Result<Vec<f64>> {
        let n = self.matrix.dim();
        if b.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: b.len(),
            });
        }
        let bn = norm(b);
        if bn == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let fail = |residual: f64, y: &[f64]| Error::Solver {
            residual,
            condition: self.matrix.norm_one() * norm1(y) / norm1(b),
        };
        if self.lu.is_none() {
            return Err(Error::Solver {
                residual: f64::INFINITY,
                condition: f64::INFINITY,
            });
        }
        let mut y = b.to_vec();
        self.raw(&mut y, transpose);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver {
                residual: f64::INFINITY,
                condition: f64::INFINITY,
            });
        }
        let mut r = self.residual(&y, b, transpose);
        let mut rel = norm(&r) / bn;
        let mut step = 0;
        while rel > RESIDUAL_TOL && step < REFINEMENT_STEPS {
            self.raw(&mut r, transpose);
            for (yi, di) in y.iter_mut().zip(&r) {
                *yi += di;
            }
            r = self.residual(&y, b, transpose);
            rel = norm(&r) / bn;
            step += 1;
        }
        if !(rel <= RESIDUAL_TOL) {
            return Err(fail(rel, &y));
        }
        Ok(y)
    }
}

/// Solves `A y = b`.
pub fn solve_system(a: &CscMatrix, b: &[f64]) -> Result<Vec<f64>> {
    SparseLu::new(a).solve(b)
}

/// Adjoint of [`solve_system`]: the loss gradient with respect to `b`, given
/// the gradient `g` with respect to the solution, is `A^{-T} g`.
pub fn solve_backward(a: &CscMatrix, g: &[f64]) -> Result<Vec<f64>> {
    SparseLu::new(a).solve_transpose(g)
}

/// Gradient with respect to the stored entries of `A`: `-(dL/db) y^T`
/// restricted to the sparsity pattern.
pub fn grad_wrt_matrix(a_pattern: &CscPattern, grad_b: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a_pattern.nnz()];
    for j in 0..a_pattern.n {
        for k in a_pattern.col_ptr[j]..a_pattern.col_ptr[j + 1] {
            out[k] = -grad_b[a_pattern.row_idx[k]] * y[j];
        }
    }
    out
}

/// Relative residual `|A y - b| / |b|` (zero when `b = 0` and `y = 0`).
pub fn relative_residual(a: &CscMatrix, y: &[f64], b: &[f64]) -> f64 {
    let ay = a.mul_vec(y);
    let r: Vec<f64> = b.iter().zip(&ay).map(|(bi, ai)| bi - ai).collect();
    let bn = norm(b);
    if bn == 0.0 {
        norm(&r)
    } else {
        norm(&r) / bn
    }
}
