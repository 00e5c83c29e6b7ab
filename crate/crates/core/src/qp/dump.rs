use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{QpError, QpProblem};

/// JSON form of a [`QpProblem`]; matrices are lists of rows.
///
/// Empty constraint blocks may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpDump {
    pub h: Vec<Vec<f64>>,
    pub g: Vec<f64>,
    #[serde(default)]
    pub a_eq: Vec<Vec<f64>>,
    #[serde(default)]
    pub b_eq: Vec<f64>,
    #[serde(default)]
    pub a_ineq: Vec<Vec<f64>>,
    #[serde(default)]
    pub b_ineq: Vec<f64>,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize, what: &'static str) -> Result<DMatrix<f64>, QpError> {
    for r in rows {
        if r.len() != ncols {
            return Err(QpError::Dimension {
                what,
                expected: ncols,
                got: r.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl QpDump {
    pub fn from_problem(p: &QpProblem) -> Self {
        Self {
            h: to_rows(&p.h),
            g: p.g.iter().copied().collect(),
            a_eq: to_rows(&p.a_eq),
            b_eq: p.b_eq.iter().copied().collect(),
            a_ineq: to_rows(&p.a_ineq),
            b_ineq: p.b_ineq.iter().copied().collect(),
        }
    }

    pub fn to_problem(&self) -> Result<QpProblem, QpError> {
        let n = self.g.len();
        QpProblem::new(
            from_rows(&self.h, n, "H cols")?,
            DVector::from_column_slice(&self.g),
            from_rows(&self.a_eq, n, "A_eq cols")?,
            DVector::from_column_slice(&self.b_eq),
            from_rows(&self.a_ineq, n, "A_ineq cols")?,
            DVector::from_column_slice(&self.b_ineq),
        )
    }

    pub fn from_json(text: &str) -> Result<Self, QpError> {
        serde_json::from_str(text).map_err(|e| QpError::Dump(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain numeric data serializes")
    }

    pub fn load(path: &Path) -> Result<QpProblem, QpError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| QpError::Dump(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)?.to_problem()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let p = QpProblem::with_inequalities(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            DVector::from_vec(vec![1.0, -1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 3.0]),
            DVector::from_vec(vec![0.25]),
        )
        .unwrap();
        let d = QpDump::from_json(&QpDump::from_problem(&p).to_json()).unwrap();
        assert_eq!(d.to_problem().unwrap(), p);
    }

    #[test]
    fn omitted_blocks_default_to_empty() {
        let d = QpDump::from_json(r#"{"h": [[1, 0], [0, 1]], "g": [-1, -1]}"#).unwrap();
        let p = d.to_problem().unwrap();
        assert_eq!(p.dims(), (2, 0, 0));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let d = QpDump::from_json(r#"{"h": [[1, 0], [0]], "g": [0, 0]}"#).unwrap();
        assert!(d.to_problem().is_err());
    }
}
