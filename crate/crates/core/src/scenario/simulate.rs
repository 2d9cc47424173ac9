//! Synthetic truth trajectories and noisy, censored observations.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::dataset::{apply_limits, Dataset, DatasetRow};
use crate::error::{FilterError, Result};
use crate::integrate::{rk4, segments};
use crate::models::VectorField;

/// Natural-unit states at increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn state_at(&self, t: f64) -> Option<&DVector<f64>> {
        self.times.binary_search_by(|x| x.total_cmp(&t)).ok().map(|i| &self.states[i])
    }
}

/// Integrates `ẋ = f(t, x) + w` from `(t0, x0)` and records the state at
/// `times`. With a zero (or absent) `q` this is plain RK4; otherwise
/// Euler–Maruyama with `substeps` steps per interval and `w` of intensity
/// `q`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_truth(
    field: &dyn VectorField<f64>,
    params: &[f64],
    x0: &DVector<f64>,
    t0: f64,
    times: &[f64],
    substeps: usize,
    seed: u64,
    q: Option<&DMatrix<f64>>,
) -> Result<Trajectory> {
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.first().is_some_and(|&t| t < t0) {
        return Err(FilterError::Config("simulation times must increase from t0".into()));
    }
    let noise = match q {
        Some(q) if q.iter().any(|v| *v != 0.0) => {
            Some(q.clone().cholesky().map(|c| c.unpack()).or_else(|| psd_root(q)).ok_or(FilterError::InvalidCovariance)?)
        }
        _ => None,
    };
    let breakpoints = field.breakpoints(params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = t0;
    let mut x = x0.clone();
    let mut states = Vec::with_capacity(times.len());
    for &target in times {
        x = match &noise {
            None => rk4(t, target, x, substeps, &breakpoints, |s, y| field.rhs(s, y, params))?,
            Some(root) => euler_maruyama(field, params, t, target, x, substeps, &breakpoints, root, &mut rng)?,
        };
        t = target;
        states.push(x.clone());
    }
    Ok(Trajectory { times: times.to_vec(), states })
}

#[allow(clippy::too_many_arguments)]
fn euler_maruyama(
    field: &dyn VectorField<f64>,
    params: &[f64],
    t0: f64,
    t1: f64,
    mut x: DVector<f64>,
    substeps: usize,
    breakpoints: &[f64],
    root: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<f64>> {
    if t1 == t0 {
        return Ok(x);
    }
    for (a, b, n) in segments(t0, t1, substeps, breakpoints) {
        let h = (b - a) / n as f64;
        for i in 0..n {
            let s = a + h * i as f64;
            let z = DVector::from_fn(x.len(), |_, _| StandardNormal.sample(rng));
            x += field.rhs(s, &x, params) * h + root * z * h.sqrt();
            if !x.iter().all(|v| v.is_finite()) {
                return Err(FilterError::IntegrationDiverged { time: s + h });
            }
        }
    }
    Ok(x)
}

fn psd_root(q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = q.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * eig.eigenvalues.amax()) {
        return None;
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

/// Noise and detection settings of one synthetic channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    pub name: String,
    pub times: Vec<f64>,
    pub noise: NoiseSpec,
    /// `(from, low, high)` eras; the latest era started at or before `t` applies.
    pub limits: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    /// σ = level × RMS of the noiseless channel signal.
    Relative(f64),
    Absolute(f64),
}

impl ChannelSpec {
    fn limits_at(&self, t: f64) -> (f64, f64) {
        self.limits
            .iter()
            .filter(|(from, _, _)| t >= *from)
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map_or((f64::NEG_INFINITY, f64::INFINITY), |&(_, lo, hi)| (lo, hi))
    }
}

/// Evaluates `h(channel, x)` on the trajectory, adds Gaussian noise and
/// applies the detection limits. Rows are ordered by time, then by channel.
/// Returns the dataset and the noise standard deviation of each channel.
pub fn make_observations<H>(
    trajectory: &Trajectory,
    channels: &[ChannelSpec],
    mut h: H,
    seed: u64,
) -> Result<(Dataset, Vec<f64>)>
where
    H: FnMut(usize, f64, &DVector<f64>) -> f64,
{
    let mut clean: Vec<Vec<f64>> = Vec::with_capacity(channels.len());
    let mut sds = Vec::with_capacity(channels.len());
    for (c, ch) in channels.iter().enumerate() {
        let mut values = Vec::with_capacity(ch.times.len());
        for &t in &ch.times {
            let x = trajectory
                .state_at(t)
                .ok_or_else(|| FilterError::Config(format!("channel {} observes at {t}, outside the trajectory", ch.name)))?;
            values.push(h(c, t, x));
        }
        let sd = match ch.noise {
            NoiseSpec::Absolute(sd) => sd,
            NoiseSpec::Relative(level) => {
                let rms = (values.iter().map(|v| v * v).sum::<f64>() / values.len().max(1) as f64).sqrt();
                level * rms
            }
        };
        if !(sd >= 0.0 && sd.is_finite()) {
            return Err(FilterError::Config(format!("channel {} has noise level {sd}", ch.name)));
        }
        clean.push(values);
        sds.push(sd);
    }
    let mut events: Vec<(f64, usize, usize)> = channels
        .iter()
        .enumerate()
        .flat_map(|(c, ch)| ch.times.iter().enumerate().map(move |(k, &t)| (t, c, k)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(events.len());
    for (t, c, k) in events {
        let e: f64 = StandardNormal.sample(&mut rng);
        let mut row = DatasetRow {
            time: t,
            channel: channels[c].name.clone(),
            value: clean[c][k] + sds[c] * e,
            censored: false,
            limit_low: f64::NEG_INFINITY,
            limit_high: f64::INFINITY,
        };
        let (lo, hi) = channels[c].limits_at(t);
        apply_limits(&mut row, lo, hi);
        rows.push(row);
    }
    let dataset = Dataset::new(rows).map_err(|e| FilterError::Config(e.to_string()))?;
    Ok((dataset, sds))
}
