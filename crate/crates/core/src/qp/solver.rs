use nalgebra::DVector;

use super::barrier::relaxed_barrier;
use super::ldl::{dot, Ldl, LdlFailure};
use super::{BarrierConfig, QpError, QpProblem, QpSolution, QpStatus, StageRecord};

const PIVOT_FLOOR: f64 = 1e-12;
const KKT_REGULARIZATION: f64 = 1e-10;
const MIN_STEP: f64 = 1e-10;

/// Solves a convex QP along a decreasing barrier path.
///
/// `warm_start` seeds the first Newton iterate (zero otherwise). Dimension and
/// configuration problems are returned as errors; numerical trouble is
/// reported through [`QpSolution::status`].
pub fn solve(
    problem: &QpProblem,
    config: &BarrierConfig,
    warm_start: Option<&DVector<f64>>,
) -> Result<QpSolution, QpError> {
    problem.check_dimensions()?;
    config.validate()?;
    let (n, m, _p) = problem.dims();
    if let Some(w) = warm_start {
        if w.len() != n {
            return Err(QpError::Dimension {
                what: "warm start",
                expected: n,
                got: w.len(),
            });
        }
    }
    if !problem.is_finite() {
        return Ok(failure(problem));
    }

    let mut ws = Workspace::new(problem);
    if let Some(w) = warm_start.filter(|w| w.iter().all(|v| v.is_finite())) {
        ws.x.copy_from_slice(w.as_slice());
    }
    if m > 0 && ws.project_onto_equalities().is_err() {
        return Ok(failure(problem));
    }

    let mut stages = Vec::new();
    let mut total_iters = 0usize;
    let mut mu = config.mu_init;
    loop {
        let is_final = mu <= config.mu_final * (1.0 + 1e-12);
        let delta = config.delta_at(mu);
        let tol = if is_final {
            0.1 * config.kkt_tolerance
        } else {
            config.kkt_tolerance.max(mu)
        };
        let mut iters = 0usize;
        while iters < config.max_newton_iters {
            if ws.newton_system(mu, delta).is_err() {
                return Ok(failure(problem));
            }
            if ws.stationarity.max(ws.eq_residual) <= tol {
                break;
            }
            let decrement = -dot(&ws.grad, &ws.step);
            if !decrement.is_finite() {
                return Ok(failure(problem));
            }
            if decrement <= 1e-15 * (1.0 + ws.quad_value().abs()) {
                ws.take_step(1.0);
                iters += 1;
                break;
            }
            match ws.line_search(mu, delta, decrement, config) {
                Some(alpha) => {
                    ws.take_step(alpha);
                    iters += 1;
                }
                None => {
                    // no sufficient decrease representable; accept current iterate
                        break;
                }
            }
        }
        total_iters += iters;
        stages.push(StageRecord {
            mu,
            objective: ws.quad_value(),
            newton_iterations: iters,
        });
        if is_final {
            break;
        }
        mu = (mu * config.mu_decrease_factor).max(config.mu_final);
    }

    let mu_final = stages.last().map(|s| s.mu).unwrap_or(config.mu_final);
    let delta_final = config.delta_at(mu_final);
    if ws.newton_system(mu_final, delta_final).is_err() {
        return Ok(failure(problem));
    }
    let x = DVector::from_column_slice(&ws.x);
    if x.iter().any(|v| !v.is_finite()) {
        return Ok(failure(problem));
    }
    let kkt_residual = ws.stationarity.max(ws.eq_residual);
    let ineq_multipliers = DVector::from_iterator(
        ws.p,
        ws.slack
            .iter()
            .map(|&h| -relaxed_barrier(h, mu_final, delta_final).first),
    );
    let eq_multipliers = DVector::from_column_slice(&ws.nu);
    // a stalled line search above tolerance is reported like an exhausted budget
    let status = if kkt_residual <= config.kkt_tolerance {
        QpStatus::Converged
    } else {
        QpStatus::MaxIters
    };
    Ok(QpSolution {
        objective: problem.objective(&x),
        max_constraint_violation: problem.max_violation(&x),
        x,
        status,
        kkt_residual,
        newton_iterations: total_iters,
        ineq_multipliers,
        eq_multipliers,
        stages,
    })
}

fn failure(problem: &QpProblem) -> QpSolution {
    let (n, m, p) = problem.dims();
    let x = DVector::zeros(n);
    QpSolution {
        objective: if problem.is_finite() {
            problem.objective(&x)
        } else {
            f64::NAN
        },
        max_constraint_violation: problem.max_violation(&x),
        x,
        status: QpStatus::NumericalFailure,
        kkt_residual: f64::INFINITY,
        newton_iterations: 0,
        ineq_multipliers: DVector::zeros(p),
        eq_multipliers: DVector::zeros(m),
        stages: Vec::new(),
    }
}


struct Workspace {
    n: usize,
    m: usize,
    p: usize,
    h: Vec<f64>,
    g: Vec<f64>,
    a_eq: Vec<f64>,
    b_eq: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    b: Vec<f64>,

    x: Vec<f64>,
    hx: Vec<f64>,
    slack: Vec<f64>,
    d2: Vec<f64>,
    grad: Vec<f64>,
    kkt: Vec<f64>,
    rhs: Vec<f64>,
    step: Vec<f64>,
    a_step: Vec<f64>,
    nu: Vec<f64>,
    stationarity: f64,
    eq_residual: f64,
    ldl: Ldl,
}

impl Workspace {
    fn new(problem: &QpProblem) -> Self {
        let (n, m, p) = problem.dims();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] = problem.h[(i, j)];
            }
        }
        let mut a_eq = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                a_eq[i * n + j] = problem.a_eq[(i, j)];
            }
        }
        let mut row_ptr = Vec::with_capacity(p + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..p {
            for j in 0..n {
                let v = problem.a_ineq[(i, j)];
                if v != 0.0 {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        let k = n + m;
        Self {
            n,
            m,
            p,
            h,
            g: problem.g.as_slice().to_vec(),
            a_eq,
            b_eq: problem.b_eq.as_slice().to_vec(),
            row_ptr,
            cols,
            vals,
            b: problem.b_ineq.as_slice().to_vec(),
            x: vec![0.0; n],
            hx: vec![0.0; n],
            slack: vec![0.0; p],
            d2: vec![0.0; p],
            grad: vec![0.0; n],
            kkt: vec![0.0; k * k],
            rhs: vec![0.0; k],
            step: vec![0.0; n],
            a_step: vec![0.0; p],
            nu: vec![0.0; m],
            stationarity: f64::INFINITY,
            eq_residual: 0.0,
            ldl: Ldl::with_capacity(k),
        }
    }

    fn row(&self, j: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_ptr[j], self.row_ptr[j + 1]);
        (&self.cols[s..e], &self.vals[s..e])
    }

    fn update_slacks(&mut self) {
        for j in 0..self.p {
            let (s, e) = (self.row_ptr[j], self.row_ptr[j + 1]);
            let mut ax = 0.0;
            for k in s..e {
                ax += self.vals[k] * self.x[self.cols[k]];
            }
            self.slack[j] = self.b[j] - ax;
        }
    }

    fn update_hx(&mut self) {
        let n = self.n;
        for i in 0..n {
            self.hx[i] = dot(&self.h[i * n..(i + 1) * n], &self.x);
        }
    }

    /// `½ xᵀHx + gᵀx` using the cached `Hx`.
    fn quad_value(&self) -> f64 {
        0.5 * dot(&self.x, &self.hx) + dot(&self.g, &self.x)
    }

    /// Factors and solves the KKT system at `x` with the given kernel,
    /// with `rhs = [given top; given bottom]` and identity/zero blocks
    /// prepared by the caller.
    fn factor_and_solve(&mut self) -> Result<(), LdlFailure> {
        let k = self.n + self.m;
        let mut reg = KKT_REGULARIZATION;
        let mut attempts = 0;
        loop {
            match self.ldl.factor(&self.kkt, k, PIVOT_FLOOR) {
                Ok(()) => break,
                Err(LdlFailure::NonFinite(i)) => return Err(LdlFailure::NonFinite(i)),
                Err(LdlFailure::Small(i)) => {
                    attempts += 1;
                    if attempts > 6 {
                        return Err(LdlFailure::Small(i));
                    }
                    for d in 0..self.n {
                        self.kkt[d * k + d] += reg;
                    }
                    for d in self.n..k {
                        self.kkt[d * k + d] -= reg;
                    }
                    reg *= 100.0;
                }
            }
        }
        self.ldl.solve_in_place(&mut self.rhs);
        if self.rhs.iter().any(|v| !v.is_finite()) {
            return Err(LdlFailure::NonFinite(0));
        }
        Ok(())
    }

    fn fill_eq_blocks(&mut self) {
        let (n, m) = (self.n, self.m);
        let k = n + m;
        for r in 0..m {
            for c in 0..n {
                let v = self.a_eq[r * n + c];
                self.kkt[(n + r) * k + c] = v;
                self.kkt[c * k + n + r] = v;
            }
            for c in 0..m {
                self.kkt[(n + r) * k + n + c] = 0.0;
            }
        }
    }

    /// Minimum-distance projection of `x` onto `{A_eq x = b_eq}`.
    fn project_onto_equalities(&mut self) -> Result<(), LdlFailure> {
        let (n, m) = (self.n, self.m);
        let k = n + m;
        self.kkt.iter_mut().for_each(|v| *v = 0.0);
        for d in 0..n {
            self.kkt[d * k + d] = 1.0;
        }
        self.fill_eq_blocks();
        self.rhs[..n].copy_from_slice(&self.x);
        self.rhs[n..].copy_from_slice(&self.b_eq);
        self.factor_and_solve()?;
        self.x.copy_from_slice(&self.rhs[..n]);
        Ok(())
    }

    /// Builds gradient, barrier Hessian and KKT system at the current `x`,
    /// solves for the Newton step and records optimality residuals.
    fn newton_system(&mut self, mu: f64, delta: f64) -> Result<(), LdlFailure> {
        let (n, m, p) = (self.n, self.m, self.p);
        let k = n + m;
        self.update_hx();
        self.update_slacks();
        for i in 0..n {
            self.grad[i] = self.hx[i] + self.g[i];
        }
        for i in 0..n {
            self.kkt[i * k..i * k + n].copy_from_slice(&self.h[i * n..(i + 1) * n]);
        }
        for j in 0..p {
            let bv = relaxed_barrier(self.slack[j], mu, delta);
            self.d2[j] = bv.second;
            let (s, e) = (self.row_ptr[j], self.row_ptr[j + 1]);
            let (cols, vals) = (&self.cols[s..e], &self.vals[s..e]);
            for (&ca, &va) in cols.iter().zip(vals) {
                // d/dx Φ(b − a·x) = −Φ′ a
                self.grad[ca] -= bv.first * va;
                let w = bv.second * va;
                let row = &mut self.kkt[ca * k..(ca + 1) * k];
                for (&cb, &vb) in cols.iter().zip(vals) {
                    row[cb] += w * vb;
                }
            }
        }
        self.fill_eq_blocks();
        for i in 0..n {
            self.rhs[i] = -self.grad[i];
        }
        let mut eq_sq = 0.0;
        for r in 0..m {
            let ax = dot(&self.a_eq[r * n..(r + 1) * n], &self.x);
            let res = self.b_eq[r] - ax;
            eq_sq += res * res;
            self.rhs[n + r] = res;
        }
        self.eq_residual = eq_sq.sqrt();
        self.factor_and_solve()?;
        self.step.copy_from_slice(&self.rhs[..n]);
        self.nu.copy_from_slice(&self.rhs[n..]);

        let mut stat_sq = 0.0;
        for c in 0..n {
            let mut r = self.grad[c];
            for e in 0..m {
                r += self.a_eq[e * n + c] * self.nu[e];
            }
            stat_sq += r * r;
        }
        self.stationarity = stat_sq.sqrt();

        for j in 0..p {
            let (cols, vals) = self.row(j);
            let mut v = 0.0;
            for (c, a) in cols.iter().zip(vals) {
                v += a * self.step[*c];
            }
            self.a_step[j] = v;
        }
        Ok(())
    }

    /// Barrier-augmented merit along the current step direction.
    fn merit_along(&self, alpha: f64, mu: f64, delta: f64, quad0: f64, slope_q: f64, curv_q: f64) -> f64 {
        let mut f = quad0 + alpha * slope_q + 0.5 * alpha * alpha * curv_q;
        for j in 0..self.p {
            f += relaxed_barrier(self.slack[j] - alpha * self.a_step[j], mu, delta).value;
        }
        f
    }

    /// Armijo backtracking; returns the accepted step length.
    fn line_search(&self, mu: f64, delta: f64, decrement: f64, config: &BarrierConfig) -> Option<f64> {
        let n = self.n;
        let quad0 = self.quad_value();
        let slope_q: f64 = (0..n).map(|i| (self.hx[i] + self.g[i]) * self.step[i]).sum();
        let mut curv_q = 0.0;
        for i in 0..n {
            curv_q += self.step[i] * dot(&self.h[i * n..(i + 1) * n], &self.step);
        }
        let f0 = self.merit_along(0.0, mu, delta, quad0, slope_q, curv_q);
        let mut alpha = 1.0;
        while alpha >= MIN_STEP {
            let f = self.merit_along(alpha, mu, delta, quad0, slope_q, curv_q);
            if f <= f0 - config.armijo_constant * alpha * decrement {
                return Some(alpha);
            }
            alpha *= config.line_search_backtrack_factor;
        }
        None
    }

    fn take_step(&mut self, alpha: f64) {
        for i in 0..self.n {
            self.x[i] += alpha * self.step[i];
        }
        self.update_hx();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn unconstrained_minimum() {
        let p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::from_vec(vec![-1.0, -1.0]))
            .unwrap();
        let s = solve(&p, &BarrierConfig::default(), None).unwrap();
        assert!(s.converged());
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
        assert!((s.objective + 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_active_bound() {
        let cfg = BarrierConfig::default();
        let p = QpProblem::with_inequalities(
            DMatrix::identity(1, 1),
            DVector::from_vec(vec![-10.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_vec(vec![2.0]),
        )
        .unwrap();
        let s = solve(&p, &cfg, None).unwrap();
        assert!(s.converged());
        // 1-D grid oracle over [1.9, 2.1] of the exact constrained objective
        let best = (0..=20000)
            .map(|i| 1.9 + 0.2 * i as f64 / 20000.0)
            .filter(|x| *x <= 2.0)
            .min_by(|a, b| (0.5 * a * a - 10.0 * a).total_cmp(&(0.5 * b * b - 10.0 * b)))
            .unwrap();
        assert!((best - 2.0).abs() < 1e-12);
        assert!((s.x[0] - best).abs() <= 10.0 * cfg.mu_final);
        assert!((s.ineq_multipliers[0] - 8.0).abs() < 1e-4);
    }

    #[test]
    fn equality_constrained() {
        // min ½‖x‖² s.t. x0 + x1 = 1 → (½, ½)
        let p = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_vec(vec![1.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
        )
        .unwrap();
        let s = solve(&p, &BarrierConfig::default(), None).unwrap();
        assert!(s.converged());
        assert!((s.x[0] - 0.5).abs() < 1e-12 && (s.x[1] - 0.5).abs() < 1e-12);
        assert!((s.eq_multipliers[0] + 0.5).abs() < 1e-9);
    }

    #[test]
    fn infeasible_warm_start_recovers() {
        let p = QpProblem::with_inequalities(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-3.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        let warm = DVector::from_vec(vec![50.0, -20.0]);
        let s = solve(&p, &BarrierConfig::default(), Some(&warm)).unwrap();
        assert!(s.converged());
        assert!((s.x[0] - 1.0).abs() < 1e-6);
        assert!(s.x[1].abs() < 1e-9);
    }

    #[test]
    fn non_finite_data_is_a_numerical_failure() {
        let p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::from_vec(vec![f64::NAN, 0.0]))
            .unwrap();
        let s = solve(&p, &BarrierConfig::default(), None).unwrap();
        assert_eq!(s.status, QpStatus::NumericalFailure);
        assert_eq!(s.x, DVector::zeros(2));
    }

    #[test]
    fn budget_exhaustion_reports_max_iters() {
        let cfg = BarrierConfig {
            max_newton_iters: 1,
            kkt_tolerance: 1e-14,
            ..Default::default()
        };
        let p = QpProblem::with_inequalities(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-4.0, 3.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 2.0]),
            DVector::from_vec(vec![1.0, 0.5]),
        )
        .unwrap();
        let s = solve(&p, &cfg, None).unwrap();
        assert_eq!(s.status, QpStatus::MaxIters);
    }

    #[test]
    fn rejects_bad_warm_start_length() {
        let p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        assert!(solve(&p, &BarrierConfig::default(), Some(&DVector::zeros(3))).is_err());
    }
}
