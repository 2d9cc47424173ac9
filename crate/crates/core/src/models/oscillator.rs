use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::VectorField;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OscillatorParams {
    pub alpha: f64,
}

impl Default for OscillatorParams {
    fn default() -> Self {
        Self { alpha: 1.0 }
    }
}

impl OscillatorParams {
    pub const NAMES: [&'static str; 1] = ["alpha"];

    pub fn values(&self) -> Vec<f64> {
        vec![self.alpha]
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.alpha.is_finite() {
            Ok(())
        } else {
            Err(format!("oscillator alpha must be finite, got {}", self.alpha))
        }
    }
}

/// From `time` on, α is replaced by `alpha` regardless of the parameter value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSwitch {
    pub time: f64,
    pub alpha: f64,
}

/// `ẋ₁ = α x₂`, `ẋ₂ = 4 − 4 x₁`.
#[derive(Debug, Clone, Default)]
pub struct Oscillator {
    /// Piecewise-constant overrides of α, used to simulate a drifting truth.
    pub switches: Vec<AlphaSwitch>,
}

impl Oscillator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_switches(mut switches: Vec<AlphaSwitch>) -> Self {
        switches.sort_by(|a, b| a.time.total_cmp(&b.time));
        Self { switches }
    }

    fn alpha<T: Scalar>(&self, t: T, p: &[T]) -> (T, bool) {
        match self.switches.iter().rev().find(|s| t.as_f64() >= s.time) {
            Some(s) => (T::lit(s.alpha), true),
            None => (p[0], false),
        }
    }
}

impl<T: Scalar> VectorField<T> for Oscillator {
    fn state_names(&self) -> &'static [&'static str] {
        &["x1", "x2"]
    }

    fn parameter_names(&self) -> &'static [&'static str] {
        &["alpha"]
    }

    fn rhs(&self, t: T, x: &DVector<T>, p: &[T]) -> DVector<T> {
        let (alpha, _) = self.alpha(t, p);
        let four = T::lit(4.0);
        DVector::from_vec(vec![alpha * x[1], four - four * x[0]])
    }

    fn state_jacobian(&self, t: T, _x: &DVector<T>, p: &[T]) -> DMatrix<T> {
        let (alpha, _) = self.alpha(t, p);
        DMatrix::from_row_slice(2, 2, &[T::zero(), alpha, -T::lit(4.0), T::zero()])
    }

    fn parameter_derivative(&self, t: T, x: &DVector<T>, p: &[T], idx: usize) -> Option<DVector<T>> {
        debug_assert_eq!(idx, 0);
        let (_, switched) = self.alpha(t, p);
        let d = if switched { T::zero() } else { x[1] };
        Some(DVector::from_vec(vec![d, T::zero()]))
    }

    fn effective_parameters(&self, t: T, p: &[T]) -> Vec<T> {
        vec![self.alpha(t, p).0]
    }

    fn breakpoints(&self, _p: &[T]) -> Vec<T> {
        self.switches.iter().map(|s| T::lit(s.time)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn drift_values() {
        let m = Oscillator::new();
        assert_eq!(m.rhs(0.0, &dvector![1.0, 0.0], &[1.0]), dvector![0.0, 0.0]);
        assert_eq!(m.rhs(0.0, &dvector![0.0, 0.0], &[1.0]), dvector![0.0, 4.0]);
        assert_eq!(m.rhs(0.0, &dvector![0.0, 2.0], &[0.5]), dvector![1.0, 4.0]);
    }

    #[test]
    fn switch_overrides_alpha() {
        let m = Oscillator::with_switches(vec![AlphaSwitch { time: 15.0, alpha: 0.5 }]);
        assert_eq!(m.rhs(14.9, &dvector![0.0, 2.0], &[1.0])[0], 2.0);
        assert_eq!(m.rhs(15.0, &dvector![0.0, 2.0], &[1.0])[0], 1.0);
        assert_eq!(VectorField::<f64>::breakpoints(&m, &[1.0]), vec![15.0]);
    }
}
