/// Value and analytic derivatives of the relaxed log barrier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierValue {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// Relaxed log barrier on a slack `h` (feasible when `h ≥ 0`).
///
/// `−μ ln h` for `h ≥ δ`; below `δ` the log is replaced by the quadratic
/// `(μ/2)(((h − 2δ)/δ)² − 1) − μ ln δ`, which matches value, slope and
/// curvature at `h = δ` and is finite for every real `h`.
#[inline]
pub fn relaxed_barrier(h: f64, mu: f64, delta: f64) -> BarrierValue {
    if h >= delta {
        BarrierValue {
            value: -mu * h.ln(),
            first: -mu / h,
            second: mu / (h * h),
        }
    } else {
        let s = (h - 2.0 * delta) / delta;
        BarrierValue {
            value: 0.5 * mu * (s * s - 1.0) - mu * delta.ln(),
            first: mu * s / delta,
            second: mu / (delta * delta),
        }
    }
}
