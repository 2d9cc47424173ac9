use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::VectorField;
use crate::scalar::Scalar;

/// HIV parameters; concentrations per µL, rates per day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HivParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub d1: f64,
    pub d2: f64,
    pub k1: f64,
    pub k2: f64,
    pub m1: f64,
    pub m2: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub delta: f64,
    pub c: f64,
    pub f: f64,
    pub n_t: f64,
    pub lambda_e: f64,
    pub delta_e: f64,
    pub b_e: f64,
    pub d_e: f64,
    pub k_b: f64,
    pub k_d: f64,
    pub epsilon1: f64,
    pub epsilon2: f64,
}

impl Default for HivParams {
    /// Fixed values of the patient fit; the infection rates `k1`, `k2` are
    /// what gets estimated and default to values giving a typical chronic
    /// set point.
    fn default() -> Self {
        Self {
            lambda1: 4.4111,
            lambda2: 0.0342,
            d1: 9.91029e-3,
            d2: 2.6601e-3,
            k1: 3e-4,
            k2: 3e-2,
            m1: 2.8674e-6,
            m2: 2.9136e-6,
            rho1: 0.99052,
            rho2: 0.99622,
            delta: 0.0952,
            c: 11.4004,
            f: 0.0980,
            n_t: 102.5980,
            lambda_e: 9.4159e-4,
            delta_e: 0.1201,
            b_e: 0.0826,
            d_e: 0.0939,
            k_b: 0.1082,
            k_d: 0.1009,
            epsilon1: 0.5140,
            epsilon2: 0.5770,
        }
    }
}

impl HivParams {
    pub const NAMES: [&'static str; 22] = [
        "lambda1", "lambda2", "d1", "d2", "k1", "k2", "m1", "m2", "rho1", "rho2", "delta", "c", "f", "n_t",
        "lambda_e", "delta_e", "b_e", "d_e", "k_b", "k_d", "epsilon1", "epsilon2",
    ];

    pub fn values(&self) -> Vec<f64> {
        vec![
            self.lambda1, self.lambda2, self.d1, self.d2, self.k1, self.k2, self.m1, self.m2, self.rho1, self.rho2,
            self.delta, self.c, self.f, self.n_t, self.lambda_e, self.delta_e, self.b_e, self.d_e, self.k_b,
            self.k_d, self.epsilon1, self.epsilon2,
        ]
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in Self::NAMES.iter().zip(self.values()) {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("HIV parameter {name} must be finite and nonnegative, got {v}"));
            }
        }
        for (name, v) in [("f", self.f), ("epsilon1", self.epsilon1), ("epsilon2", self.epsilon2)] {
            if v > 1.0 {
                return Err(format!("HIV parameter {name} must lie in [0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

/// Treatment intensity `u` on `[start, end)`; `u = 0` outside all windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreatmentWindow {
    pub start: f64,
    pub end: f64,
    #[serde(default = "full_adherence")]
    pub u: f64,
}

fn full_adherence() -> f64 {
    1.0
}

/// Two target-cell populations, infectious and noninfectious virus and an
/// immune effector, under reverse-transcriptase and protease inhibitors.
///
/// States `(T1, T2, T1*, T2*, V_I, V_NI, E)`.
#[derive(Debug, Clone, Default)]
pub struct Hiv {
    pub treatment: Vec<TreatmentWindow>,
}

const LAMBDA1: usize = 0;
const LAMBDA2: usize = 1;
const D1: usize = 2;
const D2: usize = 3;
const K1: usize = 4;
const K2: usize = 5;
const M1: usize = 6;
const M2: usize = 7;
const RHO1: usize = 8;
const RHO2: usize = 9;
const DELTA: usize = 10;
const C: usize = 11;
const F: usize = 12;
const NT: usize = 13;
const LAMBDA_E: usize = 14;
const DELTA_E: usize = 15;
const B_E: usize = 16;
const D_E: usize = 17;
const K_B: usize = 18;
const K_D: usize = 19;
const EPS1: usize = 20;
const EPS2: usize = 21;

impl Hiv {
    pub fn new(treatment: Vec<TreatmentWindow>) -> Self {
        Self { treatment }
    }

    pub fn validate(&self) -> Result<(), String> {
        for w in &self.treatment {
            if !(w.start < w.end) || !(0.0..=1.0).contains(&w.u) {
                return Err(format!("invalid treatment window [{}, {}) with u = {}", w.start, w.end, w.u));
            }
        }
        Ok(())
    }

    /// `u(t)`; the first window containing `t` wins.
    pub fn treatment_at(&self, t: f64) -> f64 {
        self.treatment.iter().find(|w| t >= w.start && t < w.end).map_or(0.0, |w| w.u)
    }

    /// `(1 − ε₁u, 1 − fε₁u, ε₂u)`.
    fn efficacies<T: Scalar>(&self, t: T, p: &[T]) -> (T, T, T) {
        let u = T::lit(self.treatment_at(t.as_f64()));
        let e1 = p[EPS1] * u;
        (T::one() - e1, T::one() - p[F] * e1, p[EPS2] * u)
    }
}

impl<T: Scalar> VectorField<T> for Hiv {
    fn state_names(&self) -> &'static [&'static str] {
        &["T1", "T2", "T1s", "T2s", "VI", "VNI", "E"]
    }

    fn parameter_names(&self) -> &'static [&'static str] {
        &HivParams::NAMES
    }

    fn rhs(&self, t: T, x: &DVector<T>, p: &[T]) -> DVector<T> {
        let (t1, t2, s1, s2, v, w, e) = (x[0], x[1], x[2], x[3], x[4], x[5], x[6]);
        let (a1, a2, e2) = self.efficacies(t, p);
        let inf = s1 + s2;
        let prod = p[NT] * p[DELTA] * inf;
        DVector::from_vec(vec![
            p[LAMBDA1] - p[D1] * t1 - a1 * p[K1] * v * t1,
            p[LAMBDA2] - p[D2] * t2 - a2 * p[K2] * v * t2,
            a1 * p[K1] * v * t1 - p[DELTA] * s1 - p[M1] * s1 * e,
            a2 * p[K2] * v * t2 - p[DELTA] * s2 - p[M2] * s2 * e,
            (T::one() - e2) * prod - (p[C] + a1 * p[RHO1] * p[K1] * t1 + a2 * p[RHO2] * p[K2] * t2) * v,
            e2 * prod - p[C] * w,
            p[LAMBDA_E] + p[B_E] * inf / (inf + p[K_B]) * e - p[D_E] * inf / (inf + p[K_D]) * e - p[DELTA_E] * e,
        ])
    }

    fn state_jacobian(&self, t: T, x: &DVector<T>, p: &[T]) -> DMatrix<T> {
        let (t1, t2, s1, s2, v, e) = (x[0], x[1], x[2], x[3], x[4], x[6]);
        let (a1, a2, e2) = self.efficacies(t, p);
        let inf = s1 + s2;
        let (kb, kd) = (inf + p[K_B], inf + p[K_D]);
        let d_e_inf = p[B_E] * p[K_B] / (kb * kb) * e - p[D_E] * p[K_D] / (kd * kd) * e;
        let d_v_inf = (T::one() - e2) * p[NT] * p[DELTA];
        let d_w_inf = e2 * p[NT] * p[DELTA];
        let z = T::zero();
        #[rustfmt::skip]
        let j = DMatrix::from_row_slice(7, 7, &[
            -p[D1] - a1 * p[K1] * v, z, z, z, -a1 * p[K1] * t1, z, z,
            z, -p[D2] - a2 * p[K2] * v, z, z, -a2 * p[K2] * t2, z, z,
            a1 * p[K1] * v, z, -p[DELTA] - p[M1] * e, z, a1 * p[K1] * t1, z, -p[M1] * s1,
            z, a2 * p[K2] * v, z, -p[DELTA] - p[M2] * e, a2 * p[K2] * t2, z, -p[M2] * s2,
            -a1 * p[RHO1] * p[K1] * v, -a2 * p[RHO2] * p[K2] * v, d_v_inf, d_v_inf,
                -(p[C] + a1 * p[RHO1] * p[K1] * t1 + a2 * p[RHO2] * p[K2] * t2), z, z,
            z, z, d_w_inf, d_w_inf, z, -p[C], z,
            z, z, d_e_inf, d_e_inf, z, z,
                p[B_E] * inf / kb - p[D_E] * inf / kd - p[DELTA_E],
        ]);
        j
    }

    fn parameter_derivative(&self, t: T, x: &DVector<T>, p: &[T], idx: usize) -> Option<DVector<T>> {
        let (t1, t2, s1, s2, v, w) = (x[0], x[1], x[2], x[3], x[4], x[5]);
        let (a1, a2, e2) = self.efficacies(t, p);
        let z = T::zero();
        let col = match idx {
            K1 => [-a1 * v * t1, z, a1 * v * t1, z, -a1 * p[RHO1] * t1 * v, z, z],
            K2 => [z, -a2 * v * t2, z, a2 * v * t2, -a2 * p[RHO2] * t2 * v, z, z],
            DELTA => {
                let inf = s1 + s2;
                [z, z, -s1, -s2, (T::one() - e2) * p[NT] * inf, e2 * p[NT] * inf, z]
            }
            C => [z, z, z, z, -v, -w, z],
            _ => return None,
        };
        Some(DVector::from_row_slice(&col))
    }

    fn breakpoints(&self, _p: &[T]) -> Vec<T> {
        self.treatment.iter().flat_map(|w| [T::lit(w.start), T::lit(w.end)]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn decoupled_reduction() {
        let p = HivParams { k1: 0.0, k2: 0.0, ..HivParams::default() };
        let x = dvector![300.0, 1.0, 0.1, 0.1, 10.0, 1.0, 0.01];
        let f = Hiv::default().rhs(0.0, &x, &p.values());
        assert!((f[0] - (p.lambda1 - p.d1 * 300.0)).abs() < 1e-12);
    }

    #[test]
    fn no_protease_inhibition_means_pure_clearance() {
        let p = HivParams { epsilon2: 0.0, ..HivParams::default() };
        let hiv = Hiv::new(vec![TreatmentWindow { start: 0.0, end: 100.0, u: 1.0 }]);
        let x = dvector![300.0, 1.0, 0.1, 0.1, 10.0, 3.5, 0.01];
        let f = hiv.rhs(5.0, &x, &p.values());
        assert_eq!(f[5], -p.c * 3.5);
    }

    #[test]
    fn treatment_schedule() {
        let hiv = Hiv::new(vec![
            TreatmentWindow { start: 0.0, end: 300.0, u: 1.0 },
            TreatmentWindow { start: 300.0, end: 450.0, u: 0.25 },
        ]);
        assert_eq!(hiv.treatment_at(-1.0), 0.0);
        assert_eq!(hiv.treatment_at(299.9), 1.0);
        assert_eq!(hiv.treatment_at(300.0), 0.25);
        assert_eq!(hiv.treatment_at(450.0), 0.0);
    }
}
