//! Continuous-discrete extended Kalman filter machinery: Gaussian beliefs,
//! model traits, ODE-based prediction and the standard measurement update.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, FilterError, Result};
use crate::integrate::{rk4, IntegratorSettings};
use crate::linalg::{self, cholesky_condition, repair_covariance};
use crate::scalar::Scalar;

/// Mean and covariance of the state at a point in time.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief<T: Scalar> {
    pub time: T,
    pub mean: DVector<T>,
    pub cov: DMatrix<T>,
}

impl<T: Scalar> GaussianBelief<T> {
    pub fn new(time: T, mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(dim_err(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        Ok(Self { time, mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Marginal standard deviations.
    pub fn std_devs(&self) -> DVector<T> {
        self.cov.diagonal().map(|v| v.max(T::zero()).sqrt())
    }

    /// Checks the symmetry and PSD invariants.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let asym = linalg::max_abs(&(&self.cov - self.cov.transpose())).as_f64();
        if asym > linalg::SYMMETRY_TOL {
            return Err(format!("covariance asymmetry {asym:e}"));
        }
        if !linalg::is_psd(&self.cov) {
            let (lo, hi) = linalg::eigen_range(&self.cov);
            return Err(format!("covariance not PSD: eigenvalues in [{lo:e}, {hi:e}]"));
        }
        Ok(())
    }
}

/// Continuous-time dynamics `dx/dt = f(t, x) + w(t)` with `cov(w) = Q`.
pub trait DynamicsModel<T: Scalar>: Send + Sync {
    fn state_dim(&self) -> usize;
    fn drift(&self, t: T, x: &DVector<T>) -> DVector<T>;
    fn jacobian(&self, t: T, x: &DVector<T>) -> DMatrix<T>;
    fn process_noise(&self) -> &DMatrix<T>;
    /// Times at which the drift is non-smooth; integration steps land on them.
    fn breakpoints(&self) -> Vec<T> {
        Vec::new()
    }
}

/// Discrete observation `z = h(x) + v` with `cov(v) = R`.
pub trait ObservationModel<T: Scalar>: Send + Sync {
    fn obs_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn observe(&self, x: &DVector<T>) -> DVector<T>;
    fn jacobian(&self, x: &DVector<T>) -> DMatrix<T>;
    fn noise(&self) -> &DMatrix<T>;
}

/// `h`, `H` and `R` restricted to a subset of observation rows, evaluated at
/// one linearization point.
#[derive(Debug, Clone)]
pub struct Linearization<T: Scalar> {
    pub rows: Vec<usize>,
    pub predicted: DVector<T>,
    pub jacobian: DMatrix<T>,
    pub noise: DMatrix<T>,
}

impl<T: Scalar> Linearization<T> {
    pub fn at(obs: &dyn ObservationModel<T>, x: &DVector<T>, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= obs.obs_dim()) {
            return Err(dim_err(format!("observation row {bad} out of range ({})", obs.obs_dim())));
        }
        Ok(Self {
            rows: rows.to_vec(),
            predicted: linalg::select(&obs.observe(x), rows),
            jacobian: linalg::select_rows(&obs.jacobian(x), rows),
            noise: linalg::principal(obs.noise(), rows),
        })
    }

    pub fn full(obs: &dyn ObservationModel<T>, x: &DVector<T>) -> Result<Self> {
        let rows: Vec<usize> = (0..obs.obs_dim()).collect();
        Self::at(obs, x, &rows)
    }
}

/// Quantities produced by a standard Kalman update that the censored
/// history needs to follow along.
#[derive(Debug, Clone)]
pub struct UpdateTerms<T: Scalar> {
    pub jacobian: DMatrix<T>,
    pub gain: DMatrix<T>,
    pub innovation: DVector<T>,
    pub innovation_cov: DMatrix<T>,
}

/// Propagates the belief to `t_target` by integrating `dx/dt = f(t, x)` and
/// `dP/dt = P Fᵀ + F P + Q` jointly with RK4, `F` taken at each stage mean.
pub fn predict<T: Scalar>(
    belief: &GaussianBelief<T>,
    model: &dyn DynamicsModel<T>,
    t_target: T,
    integ: &IntegratorSettings,
) -> Result<GaussianBelief<T>> {
    let n = model.state_dim();
    if belief.dim() != n {
        return Err(dim_err(format!("belief has dimension {} but model has {n}", belief.dim())));
    }
    if t_target < belief.time {
        return Err(FilterError::TimeOrder { current: belief.time.as_f64(), target: t_target.as_f64() });
    }
    if t_target == belief.time {
        return Ok(belief.clone());
    }
    let mut y0 = DVector::zeros(n + n * n);
    y0.rows_mut(0, n).copy_from(&belief.mean);
    y0.rows_mut(n, n * n).copy_from_slice(belief.cov.as_slice());
    let q = model.process_noise();
    let y = rk4(belief.time, t_target, y0, integ.substeps_per_interval, &model.breakpoints(), |t, y| {
        let x = y.rows(0, n).into_owned();
        let p = DMatrix::from_column_slice(n, n, &y.as_slice()[n..]);
        let f = model.jacobian(t, &x);
        let fp = &f * &p;
        let dp = &fp + fp.transpose() + q;
        let mut dy = DVector::zeros(n + n * n);
        dy.rows_mut(0, n).copy_from(&model.drift(t, &x));
        dy.rows_mut(n, n * n).copy_from_slice(dp.as_slice());
        dy
    })?;
    let mean = y.rows(0, n).into_owned();
    let cov = DMatrix::from_column_slice(n, n, &y.as_slice()[n..]);
    Ok(GaussianBelief { time: t_target, mean, cov: repair_covariance(&cov)? })
}

/// Standard EKF correction against an already-linearized observation.
pub fn kalman_update<T: Scalar>(
    prior: &GaussianBelief<T>,
    lin: &Linearization<T>,
    z: &DVector<T>,
) -> Result<(GaussianBelief<T>, UpdateTerms<T>)> {
    let n = prior.dim();
    if z.len() != lin.predicted.len() || lin.jacobian.ncols() != n {
        return Err(dim_err(format!(
            "measurement of length {} against {} predicted rows over {} states",
            z.len(),
            lin.predicted.len(),
            lin.jacobian.ncols()
        )));
    }
    let h = &lin.jacobian;
    let ph_t = &prior.cov * h.transpose();
    let s = linalg::symmetrize(&(h * &ph_t + &lin.noise));
    let chol = s.clone().cholesky().ok_or(FilterError::SingularInnovation { condition: f64::INFINITY })?;
    let condition = cholesky_condition(&chol).as_f64();
    if condition > linalg::MAX_CONDITION {
        return Err(FilterError::SingularInnovation { condition });
    }
    // K = P Hᵀ S⁻¹, via S Kᵀ = H P.
    let gain = chol.solve(&ph_t.transpose()).transpose();
    let innovation = z - &lin.predicted;
    let mean = &prior.mean + &gain * &innovation;
    let cov = (DMatrix::identity(n, n) - &gain * h) * &prior.cov;
    let post = GaussianBelief { time: prior.time, mean, cov: repair_covariance(&cov)? };
    Ok((post, UpdateTerms { jacobian: h.clone(), gain, innovation, innovation_cov: s }))
}

/// EKF measurement update using every row of `obs`.
pub fn update_uncensored<T: Scalar>(
    prior: &GaussianBelief<T>,
    obs: &dyn ObservationModel<T>,
    z: &DVector<T>,
) -> Result<GaussianBelief<T>> {
    if z.len() != obs.obs_dim() {
        return Err(dim_err(format!("measurement length {} != obs_dim {}", z.len(), obs.obs_dim())));
    }
    let lin = Linearization::full(obs, &prior.mean)?;
    Ok(kalman_update(prior, &lin, z)?.0)
}

/// Linear time-invariant dynamics `dx/dt = A x`.
#[derive(Debug, Clone)]
pub struct LinearDynamics<T: Scalar> {
    pub a: DMatrix<T>,
    pub q: DMatrix<T>,
}

impl<T: Scalar> DynamicsModel<T> for LinearDynamics<T> {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn drift(&self, _t: T, x: &DVector<T>) -> DVector<T> {
        &self.a * x
    }
    fn jacobian(&self, _t: T, _x: &DVector<T>) -> DMatrix<T> {
        self.a.clone()
    }
    fn process_noise(&self) -> &DMatrix<T> {
        &self.q
    }
}

/// Linear observation `z = H x + v`.
#[derive(Debug, Clone)]
pub struct LinearObservation<T: Scalar> {
    pub h: DMatrix<T>,
    pub r: DMatrix<T>,
}

impl<T: Scalar> ObservationModel<T> for LinearObservation<T> {
    fn obs_dim(&self) -> usize {
        self.h.nrows()
    }
    fn state_dim(&self) -> usize {
        self.h.ncols()
    }
    fn observe(&self, x: &DVector<T>) -> DVector<T> {
        &self.h * x
    }
    fn jacobian(&self, _x: &DVector<T>) -> DMatrix<T> {
        self.h.clone()
    }
    fn noise(&self) -> &DMatrix<T> {
        &self.r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn scalar_obs(r: f64) -> LinearObservation<f64> {
        LinearObservation { h: dmatrix![1.0], r: dmatrix![r] }
    }

    #[test]
    fn zero_dynamics_leave_belief_unchanged() {
        let model = LinearDynamics { a: DMatrix::zeros(2, 2), q: DMatrix::zeros(2, 2) };
        let b = GaussianBelief::new(0.0, dvector![1.0, -2.0], dmatrix![2.0, 0.5; 0.5, 1.0]).unwrap();
        let p = predict(&b, &model, 3.7, &IntegratorSettings::default()).unwrap();
        assert!((p.mean - b.mean).amax() < 1e-15);
        assert!((p.cov - b.cov).amax() < 1e-15);
        assert_eq!(p.time, 3.7);
    }

    #[test]
    fn predict_rejects_backwards_time() {
        let model = LinearDynamics { a: DMatrix::zeros(1, 1), q: DMatrix::zeros(1, 1) };
        let b = GaussianBelief::new(1.0, dvector![0.0], dmatrix![1.0]).unwrap();
        assert!(matches!(
            predict(&b, &model, 0.5, &IntegratorSettings::default()),
            Err(FilterError::TimeOrder { .. })
        ));
    }

    #[test]
    fn scalar_update_by_hand() {
        let b = GaussianBelief::new(0.0, dvector![0.0], dmatrix![1.0]).unwrap();
        let post = update_uncensored(&b, &scalar_obs(1.0), &dvector![2.0]).unwrap();
        assert!((post.mean[0] - 1.0).abs() < 1e-15);
        assert!((post.cov[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn uninformative_measurement_keeps_prior() {
        let b = GaussianBelief::new(0.0, dvector![0.4, -1.0], dmatrix![2.0, 0.3; 0.3, 1.5]).unwrap();
        let obs = LinearObservation { h: DMatrix::identity(2, 2), r: DMatrix::identity(2, 2) * 1e12 };
        let post = update_uncensored(&b, &obs, &dvector![10.0, 10.0]).unwrap();
        for i in 0..2 {
            assert!(f64::abs(post.mean[i] - b.mean[i]) <= 1e-4 * f64::abs(b.mean[i]).max(1.0));
            for j in 0..2 {
                assert!(f64::abs(post.cov[(i, j)] - b.cov[(i, j)]) <= 1e-4 * f64::abs(b.cov[(i, j)]).max(1e-3));
            }
        }
    }

    #[test]
    fn exact_measurement_pins_mean() {
        let b = GaussianBelief::new(0.0, dvector![0.4, -1.0], dmatrix![2.0, 0.3; 0.3, 1.5]).unwrap();
        let obs = LinearObservation { h: DMatrix::identity(2, 2), r: DMatrix::identity(2, 2) * 1e-10 };
        let z = dvector![3.0, 4.0];
        let post = update_uncensored(&b, &obs, &z).unwrap();
        assert!((post.mean - z).amax() < 1e-6);
    }

    #[test]
    fn singular_innovation_is_reported() {
        let b = GaussianBelief::new(0.0, dvector![0.0, 0.0], DMatrix::zeros(2, 2)).unwrap();
        let obs = LinearObservation { h: DMatrix::identity(2, 2), r: dmatrix![1.0, 0.0; 0.0, 1e-14] };
        assert!(matches!(
            update_uncensored(&b, &obs, &dvector![1.0, 1.0]),
            Err(FilterError::SingularInnovation { .. })
        ));
    }

    #[test]
    fn wrong_measurement_length_is_rejected() {
        let b = GaussianBelief::new(0.0, dvector![0.0], dmatrix![1.0]).unwrap();
        assert!(matches!(
            update_uncensored(&b, &scalar_obs(1.0), &dvector![1.0, 2.0]),
            Err(FilterError::Dimension(_))
        ));
    }
}
