//! Benchmark ODE systems, coordinate transforms and the dual-estimation
//! wrapper that turns a vector field into a [`DynamicsModel`].
//!
//! [`DynamicsModel`]: crate::filter::DynamicsModel

mod hcv;
mod hiv;
mod observation;
mod ode;
mod oscillator;
mod transform;

pub use hcv::{Hcv, HcvParams};
pub use hiv::{Hiv, HivParams, TreatmentWindow};
pub use observation::{ChannelMap, ChannelObservationModel, ObservationChannel};
pub use ode::{augment_for_dual_estimation, EstimatedParameter, OdeModel};
pub use oscillator::{AlphaSwitch, Oscillator, OscillatorParams};
pub use transform::Transform;

use nalgebra::{DMatrix, DVector};

use crate::scalar::Scalar;

/// Right-hand side `dx/dt = f(t, x; p)` of an ODE in natural coordinates.
pub trait VectorField<T: Scalar>: Send + Sync {
    fn state_names(&self) -> &'static [&'static str];
    fn parameter_names(&self) -> &'static [&'static str];

    fn dim(&self) -> usize {
        self.state_names().len()
    }

    fn rhs(&self, t: T, x: &DVector<T>, p: &[T]) -> DVector<T>;

    /// `∂f/∂x`.
    fn state_jacobian(&self, t: T, x: &DVector<T>, p: &[T]) -> DMatrix<T>;

    /// `∂f/∂p_idx` when known analytically; `None` selects a finite-difference
    /// fallback.
    fn parameter_derivative(&self, _t: T, _x: &DVector<T>, _p: &[T], _idx: usize) -> Option<DVector<T>> {
        None
    }

    /// Parameter values actually in force at `t` (differs from `p` when the
    /// field overrides parameters on a schedule).
    fn effective_parameters(&self, _t: T, p: &[T]) -> Vec<T> {
        p.to_vec()
    }

    /// Times where `f` is not smooth in `t`.
    fn breakpoints(&self, _p: &[T]) -> Vec<T> {
        Vec::new()
    }

    fn parameter_index(&self, name: &str) -> Option<usize> {
        self.parameter_names().iter().position(|n| *n == name)
    }

    fn state_index(&self, name: &str) -> Option<usize> {
        self.state_names().iter().position(|n| *n == name)
    }
}
