//! Dense convex QP with a relaxed-barrier interior-point solver.
//!
//! Problems have the form
//!
//! ```text
//! min ½ xᵀHx + gᵀx   s.t.  A_eq x = b_eq,  A_ineq x ≤ b_ineq
//! ```
//!
//! Inequalities enter the objective through [`relaxed_barrier`] applied to
//! the slack `h = b_ineq − A_ineq x`, so iterates may be infeasible. Each
//! Newton direction comes from an LDLᵀ factorization of the KKT matrix of the
//! equality-constrained barrier problem.

mod barrier;
mod batch;
mod dump;
mod ldl;
mod solver;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use barrier::{relaxed_barrier, BarrierValue};
pub use batch::{solve_batch, solve_batch_in_pool};
pub use dump::QpDump;
pub use ldl::{Ldl, LdlFailure};
pub use solver::solve;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("hessian is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("hessian is not positive definite (min eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("batch members have heterogeneous dimensions at index {0}")]
    HeterogeneousBatch(usize),
    #[error("invalid barrier configuration: {0}")]
    Config(String),
    #[error("qp dump: {0}")]
    Dump(String),
}

/// `min ½ xᵀHx + gᵀx` subject to `A_eq x = b_eq`, `A_ineq x ≤ b_ineq`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        h: DMatrix<f64>,
        g: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        a_ineq: DMatrix<f64>,
        b_ineq: DVector<f64>,
    ) -> Result<Self, QpError> {
        let p = Self {
            h,
            g,
            a_eq,
            b_eq,
            a_ineq,
            b_ineq,
        };
        p.check_dimensions()?;
        Ok(p)
    }

    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Result<Self, QpError> {
        let n = g.len();
        Self::new(
            h,
            g,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DMatrix::zeros(0, n),
            DVector::zeros(0),
        )
    }

    pub fn with_inequalities(
        h: DMatrix<f64>,
        g: DVector<f64>,
        a_ineq: DMatrix<f64>,
        b_ineq: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = g.len();
        Self::new(h, g, DMatrix::zeros(0, n), DVector::zeros(0), a_ineq, b_ineq)
    }

    /// `(n, m, p)`: variables, equalities, inequalities.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.g.len(), self.b_eq.len(), self.b_ineq.len())
    }

    pub fn check_dimensions(&self) -> Result<(), QpError> {
        let n = self.g.len();
        let dim = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(QpError::Dimension {
                    what,
                    expected,
                    got,
                })
            }
        };
        dim("H rows", n, self.h.nrows())?;
        dim("H cols", n, self.h.ncols())?;
        dim("A_eq cols", n, self.a_eq.ncols())?;
        dim("A_eq rows", self.b_eq.len(), self.a_eq.nrows())?;
        dim("A_ineq cols", n, self.a_ineq.ncols())?;
        dim("A_ineq rows", self.b_ineq.len(), self.a_ineq.nrows())?;
        Ok(())
    }

    /// Symmetry within 1e-10 and a strictly positive minimum eigenvalue.
    pub fn check_convexity(&self) -> Result<(), QpError> {
        self.check_dimensions()?;
        let asym = (&self.h - self.h.transpose()).amax();
        if asym > 1e-10 {
            return Err(QpError::NotSymmetric(asym));
        }
        let sym = (&self.h + self.h.transpose()) * 0.5;
        let min_eig = sym.symmetric_eigenvalues().min();
        if !(min_eig > 0.0) {
            return Err(QpError::NotPositiveDefinite(min_eig));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    /// Largest signed violation: `max(A_ineq x − b_ineq, |A_eq x − b_eq|)`.
    /// Zero when the problem has no constraints.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let ineq = (&self.a_ineq * x - &self.b_ineq).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let eq = (&self.a_eq * x - &self.b_eq).iter().map(|v| v.abs()).fold(f64::NEG_INFINITY, f64::max);
        let v = ineq.max(eq);
        if v == f64::NEG_INFINITY {
            0.0
        } else {
            v
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().all(|v| v.is_finite())
            && self.g.iter().all(|v| v.is_finite())
            && self.a_eq.iter().all(|v| v.is_finite())
            && self.b_eq.iter().all(|v| v.is_finite())
            && self.a_ineq.iter().all(|v| v.is_finite())
            && self.b_ineq.iter().all(|v| v.is_finite())
    }
}

/// Interior-point parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BarrierConfig {
    pub mu_init: f64,
    pub mu_final: f64,
    pub mu_decrease_factor: f64,
    /// Relaxation boundary at `mu_init`.
    pub delta: f64,
    /// Shrink the relaxation boundary in proportion to `μ` along the path.
    pub scale_delta_with_mu: bool,
    /// Newton iteration budget per barrier stage.
    pub max_newton_iters: usize,
    pub kkt_tolerance: f64,
    pub line_search_backtrack_factor: f64,
    pub armijo_constant: f64,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        Self {
            mu_init: 1e-2,
            mu_final: 1e-7,
            mu_decrease_factor: 0.1,
            delta: 1e-4,
            scale_delta_with_mu: true,
            max_newton_iters: 50,
            kkt_tolerance: 1e-6,
            line_search_backtrack_factor: 0.5,
            armijo_constant: 1e-4,
        }
    }
}

impl BarrierConfig {
    pub fn validate(&self) -> Result<(), QpError> {
        let bad = |m: &str| Err(QpError::Config(m.to_string()));
        if !(self.mu_init > 0.0 && self.mu_final > 0.0) {
            return bad("barrier weights must be positive");
        }
        if self.mu_final > self.mu_init {
            return bad("mu_final must not exceed mu_init");
        }
        if !(self.mu_decrease_factor > 0.0 && self.mu_decrease_factor < 1.0) {
            return bad("mu_decrease_factor must lie in (0, 1)");
        }
        if !(self.delta > 0.0) {
            return bad("delta must be positive");
        }
        if !(self.line_search_backtrack_factor > 0.0 && self.line_search_backtrack_factor < 1.0) {
            return bad("line_search_backtrack_factor must lie in (0, 1)");
        }
        if !(self.armijo_constant > 0.0 && self.armijo_constant < 0.5) {
            return bad("armijo_constant must lie in (0, 0.5)");
        }
        if !(self.kkt_tolerance > 0.0) {
            return bad("kkt_tolerance must be positive");
        }
        if self.max_newton_iters == 0 {
            return bad("max_newton_iters must be at least 1");
        }
        Ok(())
    }

    /// Relaxation boundary used at barrier weight `mu`.
    pub fn delta_at(&self, mu: f64) -> f64 {
        if self.scale_delta_with_mu {
            self.delta * (mu / self.mu_init)
        } else {
            self.delta
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Converged,
    MaxIters,
    NumericalFailure,
}

/// One barrier stage of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub mu: f64,
    /// QP objective (without barrier) at the end of the stage.
    pub objective: f64,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    /// `max(‖Hx + g + A_eqᵀν + A_ineqᵀλ‖₂, ‖A_eq x − b_eq‖₂)`.
    pub kkt_residual: f64,
    pub newton_iterations: usize,
    /// Positive means violated.
    pub max_constraint_violation: f64,
    pub objective: f64,
    /// Barrier-implied inequality multipliers `λ_j = −Φ′(h_j)`.
    pub ineq_multipliers: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub stages: Vec<StageRecord>,
}

impl QpSolution {
    pub fn converged(&self) -> bool {
        self.status == QpStatus::Converged
    }
}
