use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::VectorField;
use crate::scalar::Scalar;

/// Hepatitis C parameters. Rates are per day, concentrations per mL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HcvParams {
    pub s: f64,
    pub r: f64,
    pub t_max: f64,
    pub d: f64,
    pub beta: f64,
    pub delta: f64,
    pub p: f64,
    pub c: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub k: f64,
    pub t_end: f64,
}

impl Default for HcvParams {
    /// Fixed values of the relapse-patient fit; `delta`, `c`, `epsilon` and
    /// `t_end` are not tabulated there and default to typical values.
    fn default() -> Self {
        Self {
            s: 6.17e4,
            r: 5.620e-3,
            t_max: 1.85e7,
            d: 0.003,
            beta: 8.7e-9,
            delta: 0.14,
            p: 25.1,
            c: 5.0,
            rho: 0.5,
            epsilon: 0.95,
            k: 0.0238,
            t_end: 168.0,
        }
    }
}

impl HcvParams {
    pub const NAMES: [&'static str; 12] =
        ["s", "r", "t_max", "d", "beta", "delta", "p", "c", "rho", "epsilon", "k", "t_end"];

    pub fn values(&self) -> Vec<f64> {
        vec![
            self.s, self.r, self.t_max, self.d, self.beta, self.delta, self.p, self.c, self.rho, self.epsilon,
            self.k, self.t_end,
        ]
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in Self::NAMES.iter().zip(self.values()) {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("HCV parameter {name} must be finite and nonnegative, got {v}"));
            }
        }
        for (name, v) in [("rho", self.rho), ("epsilon", self.epsilon)] {
            if v > 1.0 {
                return Err(format!("HCV parameter {name} must lie in [0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

/// Hepatocyte/virion model with ribavirin and interferon efficacies that
/// decay exponentially after the end of treatment.
///
/// States `(T, I, V_I, V_NI)`: healthy and infected hepatocytes, infectious
/// and noninfectious virions.
#[derive(Debug, Clone, Copy, Default)]
pub struct Hcv;

const S: usize = 0;
const R: usize = 1;
const TMAX: usize = 2;
const D: usize = 3;
const BETA: usize = 4;
const DELTA: usize = 5;
const P: usize = 6;
const C: usize = 7;
const RHO: usize = 8;
const EPS: usize = 9;
const K: usize = 10;
const TEND: usize = 11;

impl Hcv {
    /// `exp(−k (t − t_end)₊)`.
    fn decay<T: Scalar>(t: T, p: &[T]) -> T {
        let lag = (t - p[TEND]).max(T::zero());
        (-p[K] * lag).exp()
    }
}

impl<T: Scalar> VectorField<T> for Hcv {
    fn state_names(&self) -> &'static [&'static str] {
        &["T", "I", "VI", "VNI"]
    }

    fn parameter_names(&self) -> &'static [&'static str] {
        &HcvParams::NAMES
    }

    fn rhs(&self, t: T, x: &DVector<T>, p: &[T]) -> DVector<T> {
        let (tc, ic, v, w) = (x[0], x[1], x[2], x[3]);
        let e = Self::decay(t, p);
        let rho = p[RHO] * e;
        let eps = p[EPS] * e;
        let one = T::one();
        let logistic = one - (tc + ic) / p[TMAX];
        DVector::from_vec(vec![
            p[S] + p[R] * tc * logistic - p[D] * tc - p[BETA] * v * tc,
            p[BETA] * v * tc + p[R] * ic * logistic - p[DELTA] * ic,
            (one - rho) * (one - eps) * p[P] * ic - p[C] * v,
            rho * (one - eps) * p[P] * ic - p[C] * w,
        ])
    }

    fn state_jacobian(&self, t: T, x: &DVector<T>, p: &[T]) -> DMatrix<T> {
        let (tc, ic, v) = (x[0], x[1], x[2]);
        let e = Self::decay(t, p);
        let rho = p[RHO] * e;
        let eps = p[EPS] * e;
        let one = T::one();
        let logistic = one - (tc + ic) / p[TMAX];
        let z = T::zero();
        #[rustfmt::skip]
        let j = DMatrix::from_row_slice(4, 4, &[
            p[R] * logistic - p[R] * tc / p[TMAX] - p[D] - p[BETA] * v, -p[R] * tc / p[TMAX], -p[BETA] * tc, z,
            p[BETA] * v - p[R] * ic / p[TMAX], p[R] * logistic - p[R] * ic / p[TMAX] - p[DELTA], p[BETA] * tc, z,
            z, (one - rho) * (one - eps) * p[P], -p[C], z,
            z, rho * (one - eps) * p[P], z, -p[C],
        ]);
        j
    }

    fn parameter_derivative(&self, t: T, x: &DVector<T>, p: &[T], idx: usize) -> Option<DVector<T>> {
        let (tc, ic, v, w) = (x[0], x[1], x[2], x[3]);
        let e = Self::decay(t, p);
        let rho = p[RHO] * e;
        let eps = p[EPS] * e;
        let one = T::one();
        let z = T::zero();
        let logistic = one - (tc + ic) / p[TMAX];
        let col = match idx {
            S => [one, z, z, z],
            R => [tc * logistic, ic * logistic, z, z],
            TMAX => {
                let s = (tc + ic) / (p[TMAX] * p[TMAX]);
                [p[R] * tc * s, p[R] * ic * s, z, z]
            }
            D => [-tc, z, z, z],
            BETA => [-v * tc, v * tc, z, z],
            DELTA => [z, -ic, z, z],
            P => [z, z, (one - rho) * (one - eps) * ic, rho * (one - eps) * ic],
            C => [z, z, -v, -w],
            RHO => [z, z, -e * (one - eps) * p[P] * ic, e * (one - eps) * p[P] * ic],
            EPS => [z, z, -(one - rho) * e * p[P] * ic, -rho * e * p[P] * ic],
            _ => return None,
        };
        Some(DVector::from_row_slice(&col))
    }

    fn breakpoints(&self, p: &[T]) -> Vec<T> {
        vec![p[TEND]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn decay_only_reduction() {
        let p = HcvParams { s: 0.0, r: 0.0, beta: 0.0, ..HcvParams::default() };
        let x = dvector![2.0e6, 0.0, 1e3, 1e3];
        let f = Hcv.rhs(0.0, &x, &p.values());
        assert!((f[0] + p.d * 2.0e6).abs() < 1e-9);
    }

    #[test]
    fn efficacy_vanishes_long_after_treatment() {
        let p = HcvParams::default().values();
        let x = dvector![1e7, 1e6, 1e5, 1e4];
        let f = Hcv.rhs(1e5, &x, &p);
        let expected = p[P] * 1e6 * 0.0 - p[C] * 1e4;
        assert!((f[3] - expected).abs() < 1e-9 * expected.abs());
    }
}
