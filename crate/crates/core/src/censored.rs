//! The censored-observation filter loop: zero-gain naive updates, the
//! conditioned correction on the retained censored history, and the
//! per-step orchestration.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, FilterError, Result};
use crate::filter::{kalman_update, predict, DynamicsModel, GaussianBelief, Linearization, ObservationModel, UpdateTerms};
use crate::history::{retained_entries, ChannelObservation, CensoredHistory, PrunePolicy};
use crate::integrate::{rk4, IntegratorSettings};
use crate::linalg;
use crate::scalar::Scalar;
use crate::truncated::{truncated_mvn_moments_split, MomentMethod, TruncationResult, TruncationSettings};

/// All channels measured at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFrame<T: Scalar> {
    pub time: T,
    pub channels: Vec<ChannelObservation<T>>,
}

impl<T: Scalar> ObservationFrame<T> {
    pub fn new(time: T, channels: Vec<ChannelObservation<T>>) -> Self {
        Self { time, channels }
    }

    pub fn censored_count(&self) -> usize {
        self.channels.iter().filter(|c| c.censored).count()
    }

    fn validate(&self, obs_dim: usize) -> Result<()> {
        if self.channels.is_empty() {
            return Err(dim_err("observation frame has no channels"));
        }
        let mut seen = vec![false; obs_dim];
        for c in &self.channels {
            if c.channel >= obs_dim {
                return Err(dim_err(format!("channel {} out of range ({obs_dim})", c.channel)));
            }
            if std::mem::replace(&mut seen[c.channel], true) {
                return Err(dim_err(format!("channel {} appears twice in one frame", c.channel)));
            }
            c.validate()?;
        }
        Ok(())
    }
}

/// Result of the zero-gain update.
#[derive(Debug, Clone)]
pub struct NaiveStep<T: Scalar> {
    pub belief: GaussianBelief<T>,
    /// Update ingredients, present when at least one channel was uncensored.
    pub terms: Option<UpdateTerms<T>>,
    pub censored: Vec<ChannelObservation<T>>,
}

/// Updates the prior with the uncensored channels only; censored channels get
/// zero gain and are returned for the history.
pub fn naive_step<T: Scalar>(
    prior: &GaussianBelief<T>,
    frame: &[ChannelObservation<T>],
    obs: &dyn ObservationModel<T>,
) -> Result<NaiveStep<T>> {
    let (censored, uncensored): (Vec<_>, Vec<_>) = frame.iter().cloned().partition(|c| c.censored);
    if uncensored.is_empty() {
        return Ok(NaiveStep { belief: prior.clone(), terms: None, censored });
    }
    let rows: Vec<usize> = uncensored.iter().map(|c| c.channel).collect();
    let z = DVector::from_iterator(rows.len(), uncensored.iter().map(|c| c.value));
    let lin = Linearization::at(obs, &prior.mean, &rows)?;
    let (belief, terms) = kalman_update(prior, &lin, &z)?;
    Ok(NaiveStep { belief, terms: Some(terms), censored })
}

/// Outcome of conditioning the naive belief on the censored history.
#[derive(Debug, Clone)]
pub struct Correction<T: Scalar> {
    pub belief: GaussianBelief<T>,
    pub truncation: Option<TruncationResult<T>>,
    /// Frobenius norm of `K′ = P^{xC} (P^C)⁻¹`.
    pub gain_norm: f64,
}

/// Conditions the naive belief on every retained censored measurement lying
/// in its interval.
pub fn conditioned_correction<T: Scalar>(
    naive: &GaussianBelief<T>,
    hist: &CensoredHistory<T>,
    rng_seed: u64,
    settings: &TruncationSettings,
) -> Result<Correction<T>> {
    if hist.is_empty() {
        return Ok(Correction { belief: naive.clone(), truncation: None, gain_norm: 0.0 });
    }
    hist.check_shape()?;
    if hist.state_dim() != naive.dim() {
        return Err(dim_err(format!("history over {} states, belief {}", hist.state_dim(), naive.dim())));
    }
    let trunc = truncated_mvn_moments_split(&hist.mean_uc, &hist.cov_uc, &hist.noise, &hist.region, rng_seed, settings)?;
    let chol = linalg::spd_factor(&hist.cov_uc).ok_or(FilterError::DegenerateHistory)?;
    // K′ᵀ = (P^C)⁻¹ P^{Cx}
    let gain_t = chol.solve(&hist.cross_uc);
    if !linalg::all_finite(&gain_t) {
        return Err(FilterError::DegenerateHistory);
    }
    let gain_norm = gain_t.norm().as_f64();
    if trunc.method == MomentMethod::Untruncated {
        return Ok(Correction { belief: naive.clone(), truncation: Some(trunc), gain_norm });
    }
    let gain = gain_t.transpose();
    let mean = &naive.mean + &gain * (&trunc.mean - &hist.mean_uc);
    let shrink: DMatrix<T> = &hist.cov_uc - &trunc.cov;
    let cov = &naive.cov - &gain * shrink * &gain_t;
    let belief = GaussianBelief { time: naive.time, mean, cov: linalg::repair_covariance(&cov)? };
    Ok(Correction { belief, truncation: Some(trunc), gain_norm })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterMode {
    /// Censored channels enter through the conditioned correction.
    #[default]
    Conditioned,
    /// Censored values are treated as exact measurements at their reported value.
    PlainEkf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub integrator: IntegratorSettings,
    pub prune: PrunePolicy,
    pub truncation: TruncationSettings,
    pub seed: u64,
    pub mode: FilterMode,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            integrator: IntegratorSettings::default(),
            prune: PrunePolicy::default(),
            truncation: TruncationSettings::default(),
            seed: 0,
            mode: FilterMode::Conditioned,
        }
    }
}

/// Per-step output of [`filter_run`].
#[derive(Debug, Clone)]
pub struct StepRecord<T: Scalar> {
    pub step: usize,
    pub time: T,
    pub naive: GaussianBelief<T>,
    pub posterior: GaussianBelief<T>,
    /// Frobenius norm of the standard Kalman gain (0 without uncensored channels).
    pub kalman_gain_norm: f64,
    /// Frobenius norm of the censored correction gain.
    pub correction_gain_norm: f64,
    /// History size after pruning.
    pub history_size: usize,
    pub censored_count: usize,
    pub estimator_error: f64,
    pub moment_method: Option<MomentMethod>,
}

/// Per-step Monte-Carlo seed derived from the run seed.
pub fn step_seed(seed: u64, step: usize) -> u64 {
    let mut z = seed ^ (step as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs the filter over `frames`, starting from `initial`.
pub fn filter_run<T: Scalar>(
    model: &dyn DynamicsModel<T>,
    obs: &dyn ObservationModel<T>,
    initial: &GaussianBelief<T>,
    frames: &[ObservationFrame<T>],
    config: &FilterConfig,
) -> Result<Vec<StepRecord<T>>> {
    if initial.dim() != model.state_dim() || obs.state_dim() != model.state_dim() {
        return Err(dim_err(format!(
            "initial belief {}, dynamics {}, observation {}",
            initial.dim(),
            model.state_dim(),
            obs.state_dim()
        )));
    }
    let mut naive = initial.clone();
    let mut reference = initial.mean.clone();
    let mut hist = CensoredHistory::new(model.state_dim());
    let mut out = Vec::with_capacity(frames.len());
    for (step, frame) in frames.iter().enumerate() {
        let at = |e: FilterError| FilterError::AtStep { step, time: frame.time.as_f64(), source: Box::new(e) };
        if step > 0 && !(frame.time > frames[step - 1].time) {
            return Err(at(FilterError::Config("observation times must be strictly increasing".into())));
        }
        frame.validate(obs.obs_dim()).map_err(at)?;
        let (rec, carry) = match config.mode {
            FilterMode::PlainEkf => plain_step(model, obs, &naive, frame, config, step).map(|r| {
                let carry = r.naive.clone();
                (r, carry)
            }),
            FilterMode::Conditioned => censored_step(model, obs, &naive, &reference, &mut hist, frame, config, step),
        }
        .map_err(at)?;
        naive = carry;
        reference = rec.posterior.mean.clone();
        out.push(rec);
    }
    Ok(out)
}

/// Propagates the naive belief and the history cross-covariance with every
/// Jacobian taken along the trajectory started at `reference`. The naive
/// mean moves as the reference plus a deviation `δ` with `dδ/dt = F δ`, so
/// for linear dynamics this is ordinary prediction; when `reference` equals
/// the naive mean it is exactly [`predict`].
pub fn predict_about<T: Scalar>(
    model: &dyn DynamicsModel<T>,
    reference: &DVector<T>,
    naive: &GaussianBelief<T>,
    cross: &DMatrix<T>,
    t_target: T,
    integ: &IntegratorSettings,
) -> Result<(DVector<T>, GaussianBelief<T>, DMatrix<T>)> {
    let n = model.state_dim();
    let c = cross.nrows();
    if naive.dim() != n || reference.len() != n || cross.ncols() != n {
        return Err(dim_err(format!(
            "model {n}, naive {}, reference {}, cross {}x{}",
            naive.dim(),
            reference.len(),
            cross.nrows(),
            cross.ncols()
        )));
    }
    if t_target < naive.time {
        return Err(FilterError::TimeOrder { current: naive.time.as_f64(), target: t_target.as_f64() });
    }
    if t_target == naive.time {
        return Ok((reference.clone(), naive.clone(), cross.clone()));
    }
    let delta0 = &naive.mean - reference;
    let moving = delta0.iter().any(|v| *v != T::zero());
    let len = 2 * n + n * n + c * n;
    let mut y0 = DVector::zeros(len);
    y0.rows_mut(0, n).copy_from(reference);
    y0.rows_mut(n, n).copy_from(&delta0);
    y0.rows_mut(2 * n, n * n).copy_from_slice(naive.cov.as_slice());
    y0.rows_mut(2 * n + n * n, c * n).copy_from_slice(cross.as_slice());
    let q = model.process_noise();
    let y = rk4(naive.time, t_target, y0, integ.substeps_per_interval, &model.breakpoints(), |t, y| {
        let x = y.rows(0, n).into_owned();
        let p = DMatrix::from_column_slice(n, n, &y.as_slice()[2 * n..2 * n + n * n]);
        let f = model.jacobian(t, &x);
        let fp = &f * &p;
        let dp = &fp + fp.transpose() + q;
        let mut dy = DVector::zeros(len);
        dy.rows_mut(0, n).copy_from(&model.drift(t, &x));
        if moving {
            dy.rows_mut(n, n).copy_from(&(&f * y.rows(n, n)));
        }
        dy.rows_mut(2 * n, n * n).copy_from_slice(dp.as_slice());
        if c > 0 {
            let d = DMatrix::from_column_slice(c, n, &y.as_slice()[2 * n + n * n..]);
            dy.rows_mut(2 * n + n * n, c * n).copy_from_slice((d * f.transpose()).as_slice());
        }
        dy
    })?;
    let r = y.rows(0, n).into_owned();
    let mean = if moving { &r + y.rows(n, n) } else { r.clone() };
    let cov = DMatrix::from_column_slice(n, n, &y.as_slice()[2 * n..2 * n + n * n]);
    let d = DMatrix::from_column_slice(c, n, &y.as_slice()[2 * n + n * n..]);
    Ok((r, GaussianBelief { time: t_target, mean, cov: linalg::repair_covariance(&cov)? }, d))
}

/// Linearization of `rows` at `reference`, with the prediction shifted to
/// the naive mean to first order.
fn linearize_about<T: Scalar>(
    obs: &dyn ObservationModel<T>,
    reference: &DVector<T>,
    naive_mean: &DVector<T>,
    rows: &[usize],
) -> Result<Linearization<T>> {
    let mut lin = Linearization::at(obs, reference, rows)?;
    let delta = naive_mean - reference;
    if delta.iter().any(|v| *v != T::zero()) {
        lin.predicted += &lin.jacobian * delta;
    }
    Ok(lin)
}

fn plain_step<T: Scalar>(
    model: &dyn DynamicsModel<T>,
    obs: &dyn ObservationModel<T>,
    prev: &GaussianBelief<T>,
    frame: &ObservationFrame<T>,
    config: &FilterConfig,
    step: usize,
) -> Result<StepRecord<T>> {
    let prior = predict(prev, model, frame.time, &config.integrator)?;
    let rows: Vec<usize> = frame.channels.iter().map(|c| c.channel).collect();
    let z = DVector::from_iterator(rows.len(), frame.channels.iter().map(|c| c.value));
    let lin = Linearization::at(obs, &prior.mean, &rows)?;
    let (post, terms) = kalman_update(&prior, &lin, &z)?;
    Ok(StepRecord {
        step,
        time: frame.time,
        naive: post.clone(),
        posterior: post,
        kalman_gain_norm: terms.gain.norm().as_f64(),
        correction_gain_norm: 0.0,
        history_size: 0,
        censored_count: frame.censored_count(),
        estimator_error: 0.0,
        moment_method: None,
    })
}

#[allow(clippy::too_many_arguments)]
fn censored_step<T: Scalar>(
    model: &dyn DynamicsModel<T>,
    obs: &dyn ObservationModel<T>,
    prev: &GaussianBelief<T>,
    reference: &DVector<T>,
    hist: &mut CensoredHistory<T>,
    frame: &ObservationFrame<T>,
    config: &FilterConfig,
    step: usize,
) -> Result<(StepRecord<T>, GaussianBelief<T>)> {
    let (mut reference, prior, cross) =
        predict_about(model, reference, prev, &hist.cross_uc, frame.time, &config.integrator)?;
    let mut h = std::mem::replace(hist, CensoredHistory::new(model.state_dim())).with_cross(cross)?;
    let (censored, uncensored): (Vec<_>, Vec<_>) = frame.channels.iter().cloned().partition(|c| c.censored);
    let mut naive = prior;
    let mut kalman_gain_norm = 0.0;
    if !uncensored.is_empty() {
        let rows: Vec<usize> = uncensored.iter().map(|c| c.channel).collect();
        let z = DVector::from_iterator(rows.len(), uncensored.iter().map(|c| c.value));
        let lin = linearize_about(obs, &reference, &naive.mean, &rows)?;
        let (post, terms) = kalman_update(&naive, &lin, &z)?;
        if naive.mean == reference {
            reference = post.mean.clone();
        } else {
            let own = &z - obs.observe(&reference).select_rows(&rows);
            reference += &terms.gain * own;
        }
        kalman_gain_norm = terms.gain.norm().as_f64();
        h = h.update_uncensored(&terms)?;
        naive = post;
    }
    if !censored.is_empty() {
        let rows: Vec<usize> = censored.iter().map(|c| c.channel).collect();
        let lin = linearize_about(obs, &reference, &naive.mean, &rows)?;
        h = h.extend_censored(&naive, &lin, &censored, step)?;
    }
    let corr = conditioned_correction(&naive, &h, step_seed(config.seed, step), &config.truncation)?;
    let (carry, kept) = forget(&naive, &h, config, step)?;
    *hist = kept;
    let rec = StepRecord {
        step,
        time: frame.time,
        naive,
        posterior: corr.belief,
        kalman_gain_norm,
        correction_gain_norm: corr.gain_norm,
        history_size: hist.count(),
        censored_count: censored.len(),
        estimator_error: corr.truncation.as_ref().map_or(0.0, |t| t.estimator_error.as_f64()),
        moment_method: corr.truncation.map(|t| t.method),
    };
    Ok((rec, carry))
}

/// Prunes the history. With `absorb` set, the naive belief and the kept
/// entries are first conditioned on the dropped entries alone, through
/// their truncated moments and Gaussian regression, so that their
/// information stays in the naive chain.
fn forget<T: Scalar>(
    naive: &GaussianBelief<T>,
    hist: &CensoredHistory<T>,
    config: &FilterConfig,
    step: usize,
) -> Result<(GaussianBelief<T>, CensoredHistory<T>)> {
    let keep = retained_entries(hist, &config.prune, step, &naive.cov);
    if keep.len() == hist.count() {
        return Ok((naive.clone(), hist.clone()));
    }
    let kept = hist.retain(&keep);
    if !config.prune.absorb {
        return Ok((naive.clone(), kept));
    }
    let dropped: Vec<usize> = (0..hist.count()).filter(|i| !keep.contains(i)).collect();
    let gone = hist.retain(&dropped);
    let seed = step_seed(!config.seed, step);
    let trunc = truncated_mvn_moments_split(&gone.mean_uc, &gone.cov_uc, &gone.noise, &gone.region, seed, &config.truncation)?;
    if trunc.method == MomentMethod::Untruncated {
        return Ok((naive.clone(), kept));
    }
    let chol = linalg::spd_factor(&gone.cov_uc).ok_or(FilterError::DegenerateHistory)?;
    let gx_t = chol.solve(&gone.cross_uc);
    let gk_t = chol.solve(&hist.cov_uc.select_rows(dropped.iter()).select_columns(keep.iter()));
    let dm = &trunc.mean - &gone.mean_uc;
    let shrink: DMatrix<T> = &gone.cov_uc - &trunc.cov;
    let belief = GaussianBelief {
        time: naive.time,
        mean: &naive.mean + gx_t.tr_mul(&dm),
        cov: linalg::repair_covariance(&(&naive.cov - gx_t.tr_mul(&shrink) * &gx_t))?,
    };
    let kept = CensoredHistory {
        mean_uc: &kept.mean_uc + gk_t.tr_mul(&dm),
        cov_uc: linalg::repair_covariance(&(&kept.cov_uc - gk_t.tr_mul(&shrink) * &gk_t))?,
        cross_uc: &kept.cross_uc - gk_t.tr_mul(&shrink) * &gx_t,
        ..kept
    };
    Ok((belief, kept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{update_uncensored, LinearDynamics, LinearObservation};
    use crate::truncated::CensorRegion;
    use nalgebra::{dmatrix, dvector};

    fn two_channel() -> LinearObservation<f64> {
        LinearObservation { h: dmatrix![1.0, 0.0; 1.0, 1.0], r: dmatrix![0.2, 0.0; 0.0, 0.5] }
    }

    fn prior() -> GaussianBelief<f64> {
        GaussianBelief::new(0.0, dvector![0.3, -0.4], dmatrix![1.0, 0.3; 0.3, 2.0]).unwrap()
    }

    #[test]
    fn fully_censored_frame_keeps_prior() {
        let frame = vec![
            ChannelObservation::censored(0, 0.8, f64::NEG_INFINITY, 0.8),
            ChannelObservation::censored(1, 0.0, 0.0, f64::INFINITY),
        ];
        let out = naive_step(&prior(), &frame, &two_channel()).unwrap();
        assert_eq!(out.belief, prior());
        assert_eq!(out.censored.len(), 2);
        assert!(out.terms.is_none());
    }

    #[test]
    fn uncensored_frame_is_a_plain_update() {
        let frame = vec![ChannelObservation::uncensored(0, 1.1), ChannelObservation::uncensored(1, 0.4)];
        let out = naive_step(&prior(), &frame, &two_channel()).unwrap();
        let plain = update_uncensored(&prior(), &two_channel(), &dvector![1.1, 0.4]).unwrap();
        assert!((out.belief.mean - plain.mean).amax() < 1e-12);
        assert!((out.belief.cov - plain.cov).amax() < 1e-12);
    }

    #[test]
    fn mixed_frame_uses_only_uncensored_rows() {
        let frame = vec![
            ChannelObservation::censored(0, 0.8, f64::NEG_INFINITY, 0.8),
            ChannelObservation::uncensored(1, 0.4),
        ];
        let out = naive_step(&prior(), &frame, &two_channel()).unwrap();
        let single = LinearObservation { h: dmatrix![1.0, 1.0], r: dmatrix![0.5] };
        let manual = update_uncensored(&prior(), &single, &dvector![0.4]).unwrap();
        assert!((out.belief.mean - manual.mean).amax() < 1e-14);
        assert_eq!(out.censored.iter().map(|c| c.channel).collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn empty_history_returns_naive_exactly() {
        let b = prior();
        let corr = conditioned_correction(&b, &CensoredHistory::new(2), 1, &TruncationSettings::default()).unwrap();
        assert_eq!(corr.belief, b);
    }

    #[test]
    fn unbounded_region_changes_nothing() {
        let b = prior();
        let lin = Linearization::full(&two_channel(), &b.mean).unwrap();
        let entries = vec![
            ChannelObservation::censored(0, 0.0, f64::NEG_INFINITY, f64::INFINITY),
            ChannelObservation::censored(1, 0.0, f64::NEG_INFINITY, f64::INFINITY),
        ];
        let h = CensoredHistory::new(2).extend_censored(&b, &lin, &entries, 0).unwrap();
        assert_eq!(h.region, CensorRegion::unbounded(2));
        let corr = conditioned_correction(&b, &h, 1, &TruncationSettings::default()).unwrap();
        assert_eq!(corr.belief, b);
    }

    #[test]
    fn correction_shrinks_covariance() {
        let b = prior();
        let lin = Linearization::full(&two_channel(), &b.mean).unwrap();
        let entries = vec![ChannelObservation::censored(0, 0.0, f64::NEG_INFINITY, 0.0)];
        let lin = Linearization { rows: vec![0], predicted: lin.predicted.rows(0, 1).into(), jacobian: lin.jacobian.rows(0, 1).into(), noise: lin.noise.view((0, 0), (1, 1)).into() };
        let h = CensoredHistory::new(2).extend_censored(&b, &lin, &entries, 0).unwrap();
        let corr = conditioned_correction(&b, &h, 1, &TruncationSettings::default()).unwrap();
        assert!(corr.belief.cov.trace() < b.cov.trace());
        assert!(corr.belief.mean[0] < b.mean[0]);
        corr.belief.check_invariants().unwrap();
    }

    fn scalar_frames(values: &[(f64, bool)]) -> Vec<ObservationFrame<f64>> {
        values
            .iter()
            .enumerate()
            .map(|(i, &(v, cens))| {
                let ch = if cens {
                    ChannelObservation::censored(0, 0.0, f64::NEG_INFINITY, 0.0)
                } else {
                    ChannelObservation::uncensored(0, v)
                };
                ObservationFrame::new(0.5 * (i + 1) as f64, vec![ch])
            })
            .collect()
    }

    #[test]
    fn uncensored_run_matches_plain_ekf_exactly() {
        let model = LinearDynamics { a: dmatrix![-0.3, 1.0; -1.0, -0.1], q: DMatrix::identity(2, 2) * 0.01 };
        let obs = LinearObservation { h: dmatrix![1.0, 0.0], r: dmatrix![0.3] };
        let frames = scalar_frames(&[(0.1, false), (0.7, false), (-0.3, false), (0.2, false)]);
        let b = prior();
        let a = filter_run(&model, &obs, &b, &frames, &FilterConfig::default()).unwrap();
        let config = FilterConfig { mode: FilterMode::PlainEkf, ..FilterConfig::default() };
        let p = filter_run(&model, &obs, &b, &frames, &config).unwrap();
        for (x, y) in a.iter().zip(&p) {
            assert_eq!(x.posterior, y.posterior);
        }
    }

    #[test]
    fn run_is_deterministic_and_reports_history() {
        let model = LinearDynamics { a: dmatrix![0.0, 1.0; -1.0, 0.0], q: DMatrix::identity(2, 2) * 0.01 };
        let obs = LinearObservation { h: dmatrix![1.0, 0.0; 0.0, 1.0], r: DMatrix::identity(2, 2) * 0.1 };
        let frames: Vec<_> = (0..6)
            .map(|i| {
                let t = 0.4 * (i + 1) as f64;
                ObservationFrame::new(
                    t,
                    vec![
                        ChannelObservation::censored(0, 0.0, f64::NEG_INFINITY, 0.0),
                        ChannelObservation::censored(1, 0.0, f64::NEG_INFINITY, 0.0),
                    ],
                )
            })
            .collect();
        let config = FilterConfig { seed: 7, truncation: TruncationSettings { rel_tolerance: 1e-2, ..Default::default() }, ..Default::default() };
        let a = filter_run(&model, &obs, &prior(), &frames, &config).unwrap();
        let b = filter_run(&model, &obs, &prior(), &frames, &config).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.posterior, y.posterior);
            x.posterior.check_invariants().unwrap();
        }
        assert!(a.last().unwrap().history_size >= 2);
    }

    #[test]
    fn pruned_entry_is_absorbed_into_the_naive_chain() {
        let model = LinearDynamics { a: dmatrix![-0.3, 1.0; -1.0, -0.1], q: DMatrix::identity(2, 2) * 0.01 };
        let obs = LinearObservation { h: dmatrix![1.0, 0.0], r: dmatrix![0.3] };
        let frames = scalar_frames(&[(0.0, true), (0.4, false), (-0.2, false)]);
        let run = |absorb| {
            let prune = PrunePolicy { epsilon: 0.0, max_age: 0, absorb };
            filter_run(&model, &obs, &prior(), &frames, &FilterConfig { prune, ..Default::default() }).unwrap()
        };
        let (kept, lost) = (run(true), run(false));
        // The only entry leaves after step 1; from then on the absorbing run
        // continues from its conditioned estimate, the other from the naive chain.
        let from = |b: &GaussianBelief<f64>| filter_run(&model, &obs, b, &frames[2..], &FilterConfig::default()).unwrap();
        assert_eq!(kept[1].history_size, 0);
        let a = from(&kept[1].posterior);
        let b = from(&lost[1].naive);
        assert!((&kept[2].posterior.mean - &a[0].posterior.mean).amax() < 1e-12);
        assert!((&kept[2].posterior.cov - &a[0].posterior.cov).amax() < 1e-12);
        assert!((&lost[2].posterior.mean - &b[0].posterior.mean).amax() < 1e-12);
        assert!((&kept[2].posterior.mean - &lost[2].posterior.mean).amax() > 1e-3);
    }

    #[test]
    fn errors_carry_the_step() {
        let model = LinearDynamics { a: DMatrix::zeros(2, 2), q: DMatrix::zeros(2, 2) };
        let obs = LinearObservation { h: dmatrix![1.0, 0.0], r: dmatrix![0.3] };
        let mut frames = scalar_frames(&[(0.1, false), (0.2, false)]);
        frames[1].time = frames[0].time;
        let err = filter_run(&model, &obs, &prior(), &frames, &FilterConfig::default()).unwrap_err();
        assert!(matches!(err, FilterError::AtStep { step: 1, .. }));
    }
}
