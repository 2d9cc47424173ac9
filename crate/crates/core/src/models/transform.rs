use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Reparametrization `x̃ = g(x)` applied to a state or parameter component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    Identity,
    /// `x̃ = log₁₀ x` for positive quantities.
    Log10,
    /// `x̃ = tan(πx − π/2)`, mapping `(0, 1)` onto the real line.
    Tan,
}

impl Transform {
    /// `g(x)`.
    pub fn forward<T: Scalar>(self, x: T) -> T {
        match self {
            Transform::Identity => x,
            Transform::Log10 => x.log10(),
            Transform::Tan => (T::pi() * x - T::frac_pi_2()).tan(),
        }
    }

    /// `g⁻¹(x̃)`.
    pub fn inverse<T: Scalar>(self, y: T) -> T {
        match self {
            Transform::Identity => y,
            Transform::Log10 => T::lit(10.0).powf(y),
            Transform::Tan => (y.atan() + T::frac_pi_2()) / T::pi(),
        }
    }

    /// `g'(x)`.
    pub fn d_forward<T: Scalar>(self, x: T) -> T {
        match self {
            Transform::Identity => T::one(),
            Transform::Log10 => T::one() / (T::ln_10() * x),
            Transform::Tan => {
                let y = self.forward(x);
                T::pi() * (T::one() + y * y)
            }
        }
    }

    /// `g''(x)`.
    pub fn d2_forward<T: Scalar>(self, x: T) -> T {
        match self {
            Transform::Identity => T::zero(),
            Transform::Log10 => -T::one() / (T::ln_10() * x * x),
            Transform::Tan => {
                let y = self.forward(x);
                T::lit(2.0) * T::pi() * T::pi() * y * (T::one() + y * y)
            }
        }
    }

    /// `dx/dx̃` at the transformed value `y`.
    pub fn d_inverse<T: Scalar>(self, y: T) -> T {
        match self {
            Transform::Identity => T::one(),
            Transform::Log10 => T::ln_10() * self.inverse(y),
            Transform::Tan => T::one() / (T::pi() * (T::one() + y * y)),
        }
    }

    /// Whether `x` lies in the domain of `g`.
    pub fn admits(self, x: f64) -> bool {
        match self {
            Transform::Identity => x.is_finite(),
            Transform::Log10 => x > 0.0 && x.is_finite(),
            Transform::Tan => x > 0.0 && x < 1.0,
        }
    }
}
