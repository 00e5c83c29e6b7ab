use nalgebra::DVector;
use rayon::prelude::*;

use super::{solve, BarrierConfig, QpError, QpProblem, QpSolution};

fn check_batch(problems: &[QpProblem], warm: Option<&[DVector<f64>]>) -> Result<(), QpError> {
    if let Some(first) = problems.first() {
        let dims = first.dims();
        if let Some(i) = problems.iter().position(|p| p.dims() != dims) {
            return Err(QpError::HeterogeneousBatch(i));
        }
    }
    if let Some(w) = warm {
        if w.len() != problems.len() {
            return Err(QpError::Dimension {
                what: "warm start batch",
                expected: problems.len(),
                got: w.len(),
            });
        }
    }
    Ok(())
}

/// Solves every problem of a homogeneous batch on the global rayon pool.
///
/// Each element runs the same sequential code path as [`solve`], so results
/// are bitwise identical to independent calls.
pub fn solve_batch(
    problems: &[QpProblem],
    config: &BarrierConfig,
    warm: Option<&[DVector<f64>]>,
) -> Result<Vec<QpSolution>, QpError> {
    check_batch(problems, warm)?;
    problems
        .par_iter()
        .enumerate()
        .map(|(i, p)| solve(p, config, warm.map(|w| &w[i])))
        .collect()
}

/// [`solve_batch`] on a caller-owned pool, e.g. one sized by a worker count.
pub fn solve_batch_in_pool(
    pool: &rayon::ThreadPool,
    problems: &[QpProblem],
    config: &BarrierConfig,
    warm: Option<&[DVector<f64>]>,
) -> Result<Vec<QpSolution>, QpError> {
    pool.install(|| solve_batch(problems, config, warm))
}
