//! Fixed-step classical Runge–Kutta integration.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{FilterError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    /// RK4 steps taken across each inter-observation interval.
    pub substeps_per_interval: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self { substeps_per_interval: 20 }
    }
}

impl IntegratorSettings {
    pub fn new(substeps_per_interval: usize) -> Result<Self> {
        if substeps_per_interval == 0 {
            return Err(FilterError::Config("substeps_per_interval must be at least 1".into()));
        }
        Ok(Self { substeps_per_interval })
    }
}

/// Splits `[t0, t1]` at the breakpoints strictly inside it and assigns each
/// piece a share of `steps` proportional to its length (at least one).
pub fn segments<T: Scalar>(t0: T, t1: T, steps: usize, breakpoints: &[T]) -> Vec<(T, T, usize)> {
    let mut cuts: Vec<T> = breakpoints.iter().copied().filter(|&b| b > t0 && b < t1).collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
    cuts.dedup();
    if cuts.is_empty() {
        return vec![(t0, t1, steps.max(1))];
    }
    let total = t1 - t0;
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut start = t0;
    for end in cuts.into_iter().chain(std::iter::once(t1)) {
        let share = ((end - start) / total).as_f64() * steps as f64;
        out.push((start, end, (share.round() as usize).max(1)));
        start = end;
    }
    out
}

/// Integrates `dy/dt = rhs(t, y)` from `t0` to `t1` with classical RK4,
/// aligning steps with `breakpoints`. Non-finite state aborts with the time
/// of failure.
pub fn rk4<T, F>(t0: T, t1: T, y0: DVector<T>, steps: usize, breakpoints: &[T], mut rhs: F) -> Result<DVector<T>>
where
    T: Scalar,
    F: FnMut(T, &DVector<T>) -> DVector<T>,
{
    if t1 == t0 {
        return Ok(y0);
    }
    let two = T::lit(2.0);
    let six = T::lit(6.0);
    let mut y = y0;
    for (a, b, n) in segments(t0, t1, steps, breakpoints) {
        let h = (b - a) / T::lit(n as f64);
        for i in 0..n {
            let t = a + h * T::lit(i as f64);
            let k1 = rhs(t, &y);
            let k2 = rhs(t + h / two, &(&y + &k1 * (h / two)));
            let k3 = rhs(t + h / two, &(&y + &k2 * (h / two)));
            let k4 = rhs(t + h, &(&y + &k3 * h));
            y += (k1 + (k2 + k3) * two + k4) * (h / six);
            if !y.iter().all(|v| v.is_finite_value()) {
                return Err(FilterError::IntegrationDiverged { time: (t + h).as_f64() });
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let y = rk4(0.0, 1.0, DVector::from_element(1, 1.0), 50, &[], |_, y| -y).unwrap();
        assert!((y[0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn breakpoints_split_proportionally() {
        let s = segments(0.0, 10.0, 20, &[2.5, 20.0, -1.0]);
        assert_eq!(s, vec![(0.0, 2.5, 5), (2.5, 10.0, 15)]);
    }

    #[test]
    fn divergence_reports_time() {
        let err = rk4(0.0, 1.0, DVector::from_element(1, 1.0), 10, &[], |_, y| y.map(|v| v * v * 1e200))
            .unwrap_err();
        assert!(matches!(err, FilterError::IntegrationDiverged { .. }));
    }
}
