use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{ChannelObservationModel, Transform, VectorField};
use crate::error::{dim_err, FilterError, Result};
use crate::filter::DynamicsModel;
use crate::linalg;
use crate::scalar::Scalar;

/// A model parameter carried in the filter state.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedParameter {
    pub index: usize,
    pub name: String,
    pub transform: Transform,
}

/// A vector field expressed in transformed coordinates, optionally with
/// parameters appended to the state under persistent dynamics (`q̃̇ = 0`).
///
/// Filter state is `(x̃, q̃)` with `x̃_j = g_j(x_j)` and `q̃_k = g_k(p_k)`.
#[derive(Clone)]
pub struct OdeModel<T: Scalar> {
    field: Arc<dyn VectorField<T>>,
    params: Vec<T>,
    state_transforms: Vec<Transform>,
    estimated: Vec<EstimatedParameter>,
    process_noise: DMatrix<T>,
    breakpoints: Vec<T>,
}

impl<T: Scalar> std::fmt::Debug for OdeModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OdeModel")
            .field("states", &self.field.state_names())
            .field("params", &self.params)
            .field("state_transforms", &self.state_transforms)
            .field("estimated", &self.estimated)
            .finish()
    }
}

impl<T: Scalar> OdeModel<T> {
    pub fn new(
        field: Arc<dyn VectorField<T>>,
        params: Vec<T>,
        state_transforms: Vec<Transform>,
        state_noise: DMatrix<T>,
    ) -> Result<Self> {
        let n = field.dim();
        if params.len() != field.parameter_names().len() {
            return Err(dim_err(format!("{} parameter values for {} names", params.len(), field.parameter_names().len())));
        }
        if state_transforms.len() != n {
            return Err(dim_err(format!("{} state transforms for {n} states", state_transforms.len())));
        }
        if state_noise.shape() != (n, n) {
            return Err(dim_err(format!("state noise is {:?}, expected ({n}, {n})", state_noise.shape())));
        }
        check_noise(&state_noise)?;
        let breakpoints = field.breakpoints(&params);
        Ok(Self { field, params, state_transforms, estimated: Vec::new(), process_noise: state_noise, breakpoints })
    }

    /// Appends the named parameters to the state. `param_noise` defaults to
    /// `1e-6·I` in transformed units.
    pub fn augment(mut self, targets: &[(String, Transform)], param_noise: Option<DMatrix<T>>) -> Result<Self> {
        let m = targets.len();
        for (name, transform) in targets {
            let index = self
                .field
                .parameter_index(name)
                .ok_or_else(|| FilterError::Config(format!("unknown parameter {name:?}")))?;
            if self.estimated.iter().any(|e| e.index == index) {
                return Err(FilterError::Config(format!("parameter {name:?} estimated twice")));
            }
            if !transform.admits(self.params[index].as_f64()) {
                return Err(FilterError::Config(format!(
                    "parameter {name} = {} is outside the domain of the {transform:?} transform",
                    self.params[index]
                )));
            }
            self.estimated.push(EstimatedParameter { index, name: name.clone(), transform: *transform });
        }
        let noise = param_noise.unwrap_or_else(|| DMatrix::identity(m, m) * T::lit(1e-6));
        if noise.shape() != (m, m) {
            return Err(dim_err(format!("parameter noise is {:?}, expected ({m}, {m})", noise.shape())));
        }
        check_noise(&noise)?;
        self.process_noise = linalg::block_diag(&self.process_noise, &noise);
        Ok(self)
    }

    pub fn field(&self) -> &Arc<dyn VectorField<T>> {
        &self.field
    }

    /// Natural parameter values used for everything not estimated.
    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn base_dim(&self) -> usize {
        self.field.dim()
    }

    pub fn estimated(&self) -> &[EstimatedParameter] {
        &self.estimated
    }

    pub fn state_transforms(&self) -> &[Transform] {
        &self.state_transforms
    }

    /// Transforms of every filter-state component.
    pub fn transforms(&self) -> Vec<Transform> {
        self.state_transforms.iter().copied().chain(self.estimated.iter().map(|e| e.transform)).collect()
    }

    /// Names of every filter-state component.
    pub fn variable_names(&self) -> Vec<String> {
        self.field
            .state_names()
            .iter()
            .map(|s| s.to_string())
            .chain(self.estimated.iter().map(|e| e.name.clone()))
            .collect()
    }

    /// Filter state for natural state `x` and the current parameter values.
    pub fn to_filter_coords(&self, x: &[T]) -> Result<DVector<T>> {
        if x.len() != self.base_dim() {
            return Err(dim_err(format!("natural state of length {} for {} states", x.len(), self.base_dim())));
        }
        let transforms = self.transforms();
        let natural: Vec<T> = x.iter().copied().chain(self.estimated.iter().map(|e| self.params[e.index])).collect();
        for (i, (v, tr)) in natural.iter().zip(&transforms).enumerate() {
            if !tr.admits(v.as_f64()) {
                return Err(FilterError::Config(format!("component {i} = {v} outside the {tr:?} domain")));
            }
        }
        Ok(DVector::from_iterator(natural.len(), natural.iter().zip(&transforms).map(|(v, tr)| tr.forward(*v))))
    }

    /// Natural values of every filter-state component.
    pub fn to_natural(&self, y: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(y.len(), y.iter().zip(self.transforms()).map(|(v, tr)| tr.inverse(*v)))
    }

    fn split(&self, y: &DVector<T>) -> (DVector<T>, Vec<T>) {
        let n = self.base_dim();
        let x = DVector::from_fn(n, |i, _| self.state_transforms[i].inverse(y[i]));
        let mut p = self.params.clone();
        for (k, e) in self.estimated.iter().enumerate() {
            p[e.index] = e.transform.inverse(y[n + k]);
        }
        (x, p)
    }

    fn param_derivative(&self, t: T, x: &DVector<T>, p: &[T], idx: usize) -> DVector<T> {
        if let Some(d) = self.field.parameter_derivative(t, x, p, idx) {
            return d;
        }
        let h = if p[idx] != T::zero() { p[idx].abs() * T::lit(1e-6) } else { T::lit(1e-9) };
        let mut pp = p.to_vec();
        pp[idx] = p[idx] + h;
        let up = self.field.rhs(t, x, &pp);
        pp[idx] = p[idx] - h;
        let down = self.field.rhs(t, x, &pp);
        (up - down) / (h + h)
    }
}

fn check_noise<T: Scalar>(q: &DMatrix<T>) -> Result<()> {
    if !linalg::all_finite(q) {
        return Err(FilterError::InvalidMatrix);
    }
    if linalg::max_abs(&(q - q.transpose())).as_f64() > linalg::SYMMETRY_TOL || !linalg::is_psd(q) {
        return Err(FilterError::InvalidCovariance);
    }
    Ok(())
}

impl<T: Scalar> DynamicsModel<T> for OdeModel<T> {
    fn state_dim(&self) -> usize {
        self.base_dim() + self.estimated.len()
    }

    fn drift(&self, t: T, y: &DVector<T>) -> DVector<T> {
        let n = self.base_dim();
        let (x, p) = self.split(y);
        let f = self.field.rhs(t, &x, &p);
        let mut dy = DVector::zeros(self.state_dim());
        for j in 0..n {
            dy[j] = self.state_transforms[j].d_forward(x[j]) * f[j];
        }
        dy
    }

    fn jacobian(&self, t: T, y: &DVector<T>) -> DMatrix<T> {
        let n = self.base_dim();
        let (x, p) = self.split(y);
        let f = self.field.rhs(t, &x, &p);
        let fx = self.field.state_jacobian(t, &x, &p);
        let mut jac = DMatrix::zeros(self.state_dim(), self.state_dim());
        let g1: Vec<T> = (0..n).map(|j| self.state_transforms[j].d_forward(x[j])).collect();
        let dx: Vec<T> = (0..n).map(|i| self.state_transforms[i].d_inverse(y[i])).collect();
        for j in 0..n {
            for i in 0..n {
                jac[(j, i)] = g1[j] * fx[(j, i)] * dx[i];
            }
            jac[(j, j)] += self.state_transforms[j].d2_forward(x[j]) * f[j] * dx[j];
        }
        for (k, e) in self.estimated.iter().enumerate() {
            let dp = self.param_derivative(t, &x, &p, e.index);
            let dq = e.transform.d_inverse(y[n + k]);
            for j in 0..n {
                jac[(j, n + k)] = g1[j] * dp[j] * dq;
            }
        }
        jac
    }

    fn process_noise(&self) -> &DMatrix<T> {
        &self.process_noise
    }

    fn breakpoints(&self) -> Vec<T> {
        self.breakpoints.clone()
    }
}

/// Appends `targets` to the state of `base` and widens `obs` to match.
pub fn augment_for_dual_estimation<T: Scalar>(
    base: OdeModel<T>,
    obs: &ChannelObservationModel<T>,
    targets: &[(String, Transform)],
    param_noise: Option<DMatrix<T>>,
) -> Result<(OdeModel<T>, ChannelObservationModel<T>)> {
    let model = base.augment(targets, param_noise)?;
    let obs = obs.widened(model.state_dim())?;
    Ok((model, obs))
}
