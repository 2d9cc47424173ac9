//! The censored-observation history: naive moments of every retained
//! censored measurement given the uncensored data, and their covariance with
//! the current state.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, FilterError, Result};
use crate::filter::{DynamicsModel, GaussianBelief, Linearization, UpdateTerms};
use crate::integrate::{rk4, IntegratorSettings};
use crate::linalg;
use crate::scalar::Scalar;
use crate::truncated::CensorRegion;

/// One censored channel within an observation frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelObservation<T: Scalar> {
    pub channel: usize,
    /// Measured value, or the violated detection limit when censored.
    pub value: T,
    pub censored: bool,
    /// Interval known to contain the measurement (used when censored).
    pub interval: (T, T),
}

impl<T: Scalar> ChannelObservation<T> {
    pub fn uncensored(channel: usize, value: T) -> Self {
        Self { channel, value, censored: false, interval: (-T::infinity(), T::infinity()) }
    }

    pub fn censored(channel: usize, value: T, lower: T, upper: T) -> Self {
        Self { channel, value, censored: true, interval: (lower, upper) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.censored {
            let (lo, hi) = self.interval;
            if !(lo < hi) {
                return Err(FilterError::InvalidRegion(format!("channel {}: [{lo}, {hi}]", self.channel)));
            }
        } else if !self.value.is_finite_value() {
            return Err(FilterError::InvalidMatrix);
        }
        Ok(())
    }
}

/// When retained entries are forgotten.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrunePolicy {
    /// Normalized cross-covariance below which an entry is dropped.
    pub epsilon: f64,
    /// Entries older than this many observation steps are dropped.
    pub max_age: usize,
    /// Fold the truncated moments of dropped entries into the naive belief
    /// and the kept entries instead of discarding their information.
    pub absorb: bool,
}

impl Default for PrunePolicy {
    fn default() -> Self {
        Self { epsilon: 1e-4, max_age: 50, absorb: true }
    }
}

impl PrunePolicy {
    pub fn disabled() -> Self {
        Self { epsilon: 0.0, max_age: usize::MAX, absorb: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CensoredHistory<T: Scalar> {
    /// Naive means `E[C | U]`.
    pub mean_uc: DVector<T>,
    /// Naive covariance `cov(C | U)`.
    pub cov_uc: DMatrix<T>,
    /// `cov(C, x | U)`, one row per entry.
    pub cross_uc: DMatrix<T>,
    pub region: CensorRegion<T>,
    pub entry_times: Vec<T>,
    pub entry_steps: Vec<usize>,
    pub entry_channels: Vec<usize>,
    /// Measurement-noise variance of each entry, independent across entries.
    pub noise: DVector<T>,
}

impl<T: Scalar> CensoredHistory<T> {
    pub fn new(state_dim: usize) -> Self {
        Self {
            mean_uc: DVector::zeros(0),
            cov_uc: DMatrix::zeros(0, 0),
            cross_uc: DMatrix::zeros(0, state_dim),
            region: CensorRegion::empty(),
            entry_times: Vec::new(),
            entry_steps: Vec::new(),
            entry_channels: Vec::new(),
            noise: DVector::zeros(0),
        }
    }

    pub fn count(&self) -> usize {
        self.mean_uc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.cross_uc.ncols()
    }

    /// Checks the mutual consistency of the block shapes.
    pub fn check_shape(&self) -> Result<()> {
        let c = self.count();
        let ok = self.cov_uc.nrows() == c
            && self.cov_uc.ncols() == c
            && self.cross_uc.nrows() == c
            && self.region.dim() == c
            && self.entry_times.len() == c
            && self.entry_steps.len() == c
            && self.entry_channels.len() == c
            && self.noise.len() == c;
        if ok {
            Ok(())
        } else {
            Err(dim_err(format!(
                "history with {c} means has cov {}x{}, cross {}x{}, region {}, {} times",
                self.cov_uc.nrows(),
                self.cov_uc.ncols(),
                self.cross_uc.nrows(),
                self.cross_uc.ncols(),
                self.region.dim(),
                self.entry_times.len()
            )))
        }
    }

    /// Replaces the cross-covariance block (e.g. after propagation).
    pub fn with_cross(mut self, cross: DMatrix<T>) -> Result<Self> {
        if cross.nrows() != self.count() {
            return Err(dim_err(format!("cross block has {} rows for {} entries", cross.nrows(), self.count())));
        }
        self.cross_uc = cross;
        Ok(self)
    }

    /// Appends newly censored channels observed at the naive belief.
    ///
    /// `lin` holds `h`, `H` and `R` for exactly the channels in `entries`,
    /// evaluated at `naive.mean`; `self.cross_uc` must already refer to the
    /// current time.
    pub fn extend_censored(
        &self,
        naive: &GaussianBelief<T>,
        lin: &Linearization<T>,
        entries: &[ChannelObservation<T>],
        step: usize,
    ) -> Result<Self> {
        let n = naive.dim();
        let c = self.count();
        let k = entries.len();
        if self.state_dim() != n || lin.jacobian.ncols() != n || lin.predicted.len() != k || lin.jacobian.nrows() != k {
            return Err(dim_err(format!(
                "extending a history over {} states with {k} entries against a {}x{} Jacobian",
                self.state_dim(),
                lin.jacobian.nrows(),
                lin.jacobian.ncols()
            )));
        }
        let h = &lin.jacobian;
        let hp = h * &naive.cov;
        let p_z = linalg::symmetrize(&(&hp * h.transpose() + &lin.noise));
        let off = &self.cross_uc * h.transpose();

        let mut mean = DVector::zeros(c + k);
        mean.rows_mut(0, c).copy_from(&self.mean_uc);
        mean.rows_mut(c, k).copy_from(&lin.predicted);

        let mut cov = DMatrix::zeros(c + k, c + k);
        cov.view_mut((0, 0), (c, c)).copy_from(&self.cov_uc);
        cov.view_mut((0, c), (c, k)).copy_from(&off);
        cov.view_mut((c, 0), (k, c)).copy_from(&off.transpose());
        cov.view_mut((c, c), (k, k)).copy_from(&p_z);

        let mut cross = DMatrix::zeros(c + k, n);
        cross.view_mut((0, 0), (c, n)).copy_from(&self.cross_uc);
        cross.view_mut((c, 0), (k, n)).copy_from(&hp);

        let mut region = self.region.clone();
        let mut entry_times = self.entry_times.clone();
        let mut entry_steps = self.entry_steps.clone();
        let mut entry_channels = self.entry_channels.clone();
        let mut noise = DVector::zeros(c + k);
        noise.rows_mut(0, c).copy_from(&self.noise);
        noise.rows_mut(c, k).copy_from(&independent_noise(&lin.noise));
        for e in entries {
            e.validate()?;
            region.push(e.interval.0, e.interval.1)?;
            entry_times.push(naive.time);
            entry_steps.push(step);
            entry_channels.push(e.channel);
        }
        Ok(Self { mean_uc: mean, cov_uc: cov, cross_uc: cross, region, entry_times, entry_steps, entry_channels, noise })
    }

    /// Follows an uncensored measurement update of the naive belief.
    /// `self.cross_uc` must hold the propagated prior cross-covariance.
    pub fn update_uncensored(&self, terms: &UpdateTerms<T>) -> Result<Self> {
        if self.is_empty() {
            return Ok(self.clone());
        }
        let h = &terms.jacobian;
        if h.ncols() != self.state_dim() || terms.gain.nrows() != self.state_dim() {
            return Err(dim_err("update terms do not match the history state dimension"));
        }
        let d_minus = &self.cross_uc;
        let dh_t = d_minus * h.transpose();
        let chol = terms
            .innovation_cov
            .clone()
            .cholesky()
            .ok_or(FilterError::SingularInnovation { condition: f64::INFINITY })?;
        // W = D⁻ Hᵀ (P^z)⁻¹
        let w = chol.solve(&dh_t.transpose()).transpose();
        let mean = &self.mean_uc + &w * &terms.innovation;
        let cov = linalg::symmetrize(&(&self.cov_uc - &w * dh_t.transpose()));
        let n = self.state_dim();
        let cross = d_minus * (DMatrix::identity(n, n) - h.transpose() * terms.gain.transpose());
        Ok(Self { mean_uc: mean, cov_uc: linalg::repair_covariance(&cov)?, cross_uc: cross, ..self.clone() })
    }

    /// Normalized coupling of each entry to the state:
    /// `‖cross row‖ / √(cov_uc[i,i]·max diag P)`.
    pub fn coupling(&self, state_cov: &DMatrix<T>) -> Vec<f64> {
        let max_p = state_cov.diagonal().iter().fold(0.0f64, |a, v| a.max(v.as_f64()));
        (0..self.count())
            .map(|i| {
                let row = self.cross_uc.row(i).norm().as_f64();
                let denom = (self.cov_uc[(i, i)].as_f64().max(0.0) * max_p).sqrt();
                if denom > 0.0 {
                    row / denom
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Keeps only the entries at `idx` (principal submatrices of every block).
    pub fn retain(&self, idx: &[usize]) -> Self {
        Self {
            mean_uc: linalg::select(&self.mean_uc, idx),
            cov_uc: linalg::principal(&self.cov_uc, idx),
            cross_uc: linalg::select_rows(&self.cross_uc, idx),
            region: self.region.select(idx),
            entry_times: idx.iter().map(|&i| self.entry_times[i]).collect(),
            entry_steps: idx.iter().map(|&i| self.entry_steps[i]).collect(),
            entry_channels: idx.iter().map(|&i| self.entry_channels[i]).collect(),
            noise: linalg::select(&self.noise, idx),
        }
    }
}

/// Per-entry variances `d` with `R - diag(d)` positive semidefinite: the
/// diagonal when `R` is diagonal, otherwise its smallest eigenvalue.
fn independent_noise<T: Scalar>(r: &DMatrix<T>) -> DVector<T> {
    let k = r.nrows();
    let diagonal = (0..k).all(|i| (0..k).all(|j| i == j || r[(i, j)] == T::zero()));
    if diagonal {
        return r.diagonal().map(|v| if v > T::zero() { v } else { T::zero() });
    }
    let r64 = r.map(|v| v.as_f64());
    let low = r64.symmetric_eigen().eigenvalues.min().max(0.0);
    DVector::from_element(k, T::lit(low))
}

/// Indices of the entries [`prune_history`] keeps.
pub fn retained_entries<T: Scalar>(
    hist: &CensoredHistory<T>,
    policy: &PrunePolicy,
    current_step: usize,
    state_cov: &DMatrix<T>,
) -> Vec<usize> {
    let coupling = hist.coupling(state_cov);
    (0..hist.count())
        .filter(|&i| {
            let step = hist.entry_steps[i];
            step >= current_step || (coupling[i] >= policy.epsilon && current_step - step <= policy.max_age)
        })
        .collect()
}

/// Forgets entries that have decorrelated from the state or aged out.
/// Entries recorded at `current_step` are always kept.
pub fn prune_history<T: Scalar>(
    hist: &CensoredHistory<T>,
    policy: &PrunePolicy,
    current_step: usize,
    state_cov: &DMatrix<T>,
) -> CensoredHistory<T> {
    let keep = retained_entries(hist, policy, current_step, state_cov);
    if keep.len() == hist.count() {
        hist.clone()
    } else {
        hist.retain(&keep)
    }
}

/// Integrates `dD/dt = D F(x̂(t))ᵀ` alongside `dx̂/dt = f(t, x̂)` from
/// `belief.time` to `t_target`.
pub fn propagate_cross_covariance<T: Scalar>(
    d: &DMatrix<T>,
    model: &dyn DynamicsModel<T>,
    belief: &GaussianBelief<T>,
    t_target: T,
    integ: &IntegratorSettings,
) -> Result<DMatrix<T>> {
    let n = model.state_dim();
    if d.ncols() != n || belief.dim() != n {
        return Err(dim_err(format!("cross block has {} columns, model {n}, belief {}", d.ncols(), belief.dim())));
    }
    if t_target < belief.time {
        return Err(FilterError::TimeOrder { current: belief.time.as_f64(), target: t_target.as_f64() });
    }
    let c = d.nrows();
    if c == 0 || t_target == belief.time {
        return Ok(d.clone());
    }
    let mut y0 = DVector::zeros(n + c * n);
    y0.rows_mut(0, n).copy_from(&belief.mean);
    y0.rows_mut(n, c * n).copy_from_slice(d.as_slice());
    let y = rk4(belief.time, t_target, y0, integ.substeps_per_interval, &model.breakpoints(), |t, y| {
        let x = y.rows(0, n).into_owned();
        let dm = DMatrix::from_column_slice(c, n, &y.as_slice()[n..]);
        let dd = dm * model.jacobian(t, &x).transpose();
        let mut dy = DVector::zeros(n + c * n);
        dy.rows_mut(0, n).copy_from(&model.drift(t, &x));
        dy.rows_mut(n, c * n).copy_from_slice(dd.as_slice());
        dy
    })?;
    Ok(DMatrix::from_column_slice(c, n, &y.as_slice()[n..]))
}
