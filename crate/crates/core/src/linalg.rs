//! Dense linear algebra helpers: numeric rank and minimum-norm solves.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::expr::{Binding, Expr, VarRef};
use crate::Error;

pub type Matrix = DMatrix<f64>;

/// Relative singular-value threshold for rank decisions.
pub const RANK_TOLERANCE: f64 = 1e-9;

/// Singular values in descending order.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Number of singular values above `rel_tol * σ_max`.
pub fn rank_from_singular_values(sv: &[f64], rel_tol: f64) -> usize {
    let Some(&max) = sv.first() else { return 0 };
    if max <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

pub fn numeric_rank(m: &Matrix) -> usize {
    rank_from_singular_values(&singular_values(m), RANK_TOLERANCE)
}

/// Minimum-norm least-squares solution of `a x = b`.
pub fn solve_min_norm(a: &Matrix, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return None;
    }
    svd.solve(b, RANK_TOLERANCE * max).ok()
}

/// Matrix of symbolic partial derivatives `∂f_i/∂v_j`.
#[derive(Clone, Debug)]
pub struct SymbolicJacobian {
    pub vars: Vec<VarRef>,
    pub entries: Vec<Vec<Expr>>,
}

impl SymbolicJacobian {
    pub fn new(functions: &[Expr], vars: &[VarRef]) -> Self {
        let entries = functions.iter().map(|f| f.gradient(vars.iter())).collect();
        SymbolicJacobian { vars: vars.to_vec(), entries }
    }

    pub fn nrows(&self) -> usize {
        self.entries.len()
    }

    pub fn ncols(&self) -> usize {
        self.vars.len()
    }

    pub fn evaluate(&self, b: &Binding) -> Result<Matrix, Error> {
        let mut m = Matrix::zeros(self.nrows(), self.ncols());
        for (i, row) in self.entries.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                m[(i, j)] = e.evaluate(b)?;
            }
        }
        Ok(m)
    }
}
