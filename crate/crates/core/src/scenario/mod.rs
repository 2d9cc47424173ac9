//! Scenario files, synthetic data and result serialization.
//!
//! A [`ScenarioConfig`] fixes the model, the true trajectory, the measured
//! channels with their noise and detection limits, and the filter setup.
//! [`Scenario`] turns it into synthetic data and filter inputs.

mod config;
mod dataset;
mod results;
mod simulate;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use config::{
    config_keys, ChannelConfig, EstimateConfig, FilterSettings, LimitEra, ModelConfig, OutputConfig, PruneConfig,
    ScenarioConfig, TimeBlock, TruncationConfig, TruthConfig, SCHEMA_VERSION,
};
pub use dataset::{apply_limits, Dataset, DatasetRow, DATASET_HEADER};
pub use results::{
    parse_label, report_rows, variable_label, write_report, ReportRow, ResultRow, ResultsTable, RunSummary,
    TruthTable, VariableEstimate, REPORT_HEADER,
};
pub use simulate::{make_observations, simulate_truth, ChannelSpec, NoiseSpec, Trajectory};

use crate::censored::{filter_run, step_seed, FilterConfig, FilterMode, ObservationFrame, StepRecord};
use crate::error::FilterError;
use crate::filter::{DynamicsModel, GaussianBelief, ObservationModel};
use crate::history::{ChannelObservation, PrunePolicy};
use crate::integrate::IntegratorSettings;
use crate::models::{
    ChannelObservationModel, Hcv, Hiv, ObservationChannel, OdeModel, Oscillator, Transform, VectorField,
};
use crate::truncated::TruncationSettings;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}line {line}: {message}", path.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default())]
    Parse { path: Option<PathBuf>, line: usize, message: String },
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

impl ScenarioError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn with_path(self, p: &Path) -> Self {
        match self {
            Self::Parse { path: None, line, message } => Self::Parse { path: Some(p.to_path_buf()), line, message },
            Self::Validation(m) => Self::Validation(format!("{}: {m}", p.display())),
            other => other,
        }
    }

    /// Whether the failure lies in the inputs rather than in the run.
    pub fn is_validation(&self) -> bool {
        match self {
            Self::Io { .. } | Self::Parse { .. } | Self::Validation(_) => true,
            Self::Filter(FilterError::Config(_)) => true,
            Self::Filter(_) => false,
        }
    }
}

/// Independent random streams derived from the scenario seed.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Truth = 1,
    Noise = 2,
    Filter = 3,
}

fn stream_seed(seed: u64, stream: Stream) -> u64 {
    step_seed(seed ^ 0x5CE7_A210_0000_0000, stream as usize)
}

/// Synthetic truth and the data observed from it.
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub trajectory: Trajectory,
    pub dataset: Dataset,
    /// Noise standard deviation of each channel, in config order.
    pub noise_sd: Vec<f64>,
}

/// Everything [`filter_run`] needs.
#[derive(Debug, Clone)]
pub struct FilterSetup {
    pub model: OdeModel<f64>,
    pub obs: ChannelObservationModel<f64>,
    pub initial: GaussianBelief<f64>,
    pub config: FilterConfig,
}

impl FilterSetup {
    /// Result-column labels of the filter variables.
    pub fn labels(&self) -> Vec<String> {
        self.model.variable_names().iter().zip(self.model.transforms()).map(|(n, t)| variable_label(n, t)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self, ScenarioError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::new(ScenarioConfig::load(path)?)
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    /// The same scenario with another seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut config = self.config.clone();
        config.seed = seed;
        Self { config }
    }

    /// Vector field generating the data.
    pub fn truth_field(&self) -> Arc<dyn VectorField<f64>> {
        match &self.config.model {
            ModelConfig::Oscillator { alpha_switches, .. } => Arc::new(Oscillator::with_switches(alpha_switches.clone())),
            ModelConfig::Hcv { .. } => Arc::new(Hcv),
            ModelConfig::Hiv { treatment, .. } => Arc::new(Hiv::new(treatment.clone())),
        }
    }

    /// Vector field assumed by the filter; it does not know about scheduled
    /// parameter changes.
    pub fn filter_field(&self) -> Arc<dyn VectorField<f64>> {
        match &self.config.model {
            ModelConfig::Oscillator { .. } => Arc::new(Oscillator::new()),
            _ => self.truth_field(),
        }
    }

    pub fn true_params(&self) -> Vec<f64> {
        self.config.model.parameter_values()
    }

    /// Union of all channel observation times.
    pub fn observation_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.config.channels.iter().flat_map(|c| c.time_grid()).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    fn channel_models(&self, variances: &[f64]) -> Result<ChannelObservationModel<f64>, ScenarioError> {
        let n = self.config.model.state_names().len();
        let channels = self
            .config
            .channels
            .iter()
            .zip(variances)
            .map(|(c, &v)| ObservationChannel { name: c.name.clone(), map: c.map.clone(), variance: v })
            .collect();
        Ok(ChannelObservationModel::new(n, channels)?)
    }

    /// Simulates the truth and observes it with noise and detection limits.
    pub fn simulate(&self) -> Result<Synthetic, ScenarioError> {
        let cfg = &self.config;
        let field = self.truth_field();
        let params = self.true_params();
        let n = cfg.model.state_names().len();
        let x0 = DVector::from_column_slice(&cfg.truth.initial_state);
        let q = cfg.truth.process_noise.as_ref().map(|d| DMatrix::from_diagonal(&DVector::from_column_slice(d)));
        let trajectory = simulate_truth(
            field.as_ref(),
            &params,
            &x0,
            cfg.truth.t0,
            &self.observation_times(),
            cfg.truth.substeps,
            stream_seed(cfg.seed, Stream::Truth),
            q.as_ref(),
        )?;
        let base = OdeModel::new(field.clone(), params, cfg.state_transforms(), DMatrix::zeros(n, n))?;
        let obs = self.channel_models(&vec![1.0; cfg.channels.len()])?;
        let specs: Vec<ChannelSpec> = cfg
            .channels
            .iter()
            .map(|c| ChannelSpec {
                name: c.name.clone(),
                times: c.time_grid(),
                noise: match (c.noise_level, c.noise_sd) {
                    (Some(level), _) => NoiseSpec::Relative(level),
                    (None, sd) => NoiseSpec::Absolute(sd.unwrap_or(0.0)),
                },
                limits: c
                    .limits
                    .iter()
                    .map(|e| {
                        let (lo, hi) = e.bounds();
                        (e.from.unwrap_or(f64::NEG_INFINITY), lo, hi)
                    })
                    .collect(),
            })
            .collect();
        let mut bad = None;
        let (dataset, noise_sd) = make_observations(
            &trajectory,
            &specs,
            |c, t, x| match base.to_filter_coords(x.as_slice()) {
                Ok(y) => obs.observe(&y)[c],
                Err(e) => {
                    bad.get_or_insert(FilterError::Config(format!("true state at t = {t} is not admissible: {e}")));
                    f64::NAN
                }
            },
            stream_seed(cfg.seed, Stream::Noise),
        )
        .map_err(|e| bad.clone().unwrap_or(e))?;
        if let Some(e) = bad {
            return Err(e.into());
        }
        Ok(Synthetic { trajectory, dataset, noise_sd })
    }

    /// Natural-unit truth at the observation times, with the parameters in
    /// force at each time.
    pub fn truth_table(&self, trajectory: &Trajectory) -> TruthTable {
        let field = self.truth_field();
        let params = self.true_params();
        let columns = self
            .config
            .model
            .state_names()
            .iter()
            .chain(self.config.model.parameter_names())
            .map(|s| s.to_string())
            .collect();
        let values = trajectory
            .times
            .iter()
            .zip(&trajectory.states)
            .map(|(&t, x)| x.iter().copied().chain(field.effective_parameters(t, &params)).collect())
            .collect();
        TruthTable { columns, times: trajectory.times.clone(), values }
    }

    /// Filter inputs; `noise_sd` gives the measurement noise of each channel
    /// unless the config overrides the filter variance.
    pub fn filter_setup(&self, noise_sd: &[f64]) -> Result<FilterSetup, ScenarioError> {
        let cfg = &self.config;
        let f = &cfg.filter;
        let n = cfg.model.state_names().len();
        if noise_sd.len() != cfg.channels.len() {
            return Err(ScenarioError::Validation(format!(
                "{} noise levels for {} channels",
                noise_sd.len(),
                cfg.channels.len()
            )));
        }
        let variances: Vec<f64> = cfg
            .channels
            .iter()
            .zip(noise_sd)
            .map(|(c, sd)| c.filter_variance.unwrap_or(sd * sd))
            .collect();
        if let Some((c, _)) = cfg.channels.iter().zip(&variances).find(|(_, v)| !(**v > 0.0)) {
            return Err(ScenarioError::Validation(format!(
                "channel {:?} has zero noise; set filter_variance",
                c.name
            )));
        }
        let mut params = self.true_params();
        let names = cfg.model.parameter_names();
        for e in &f.estimate {
            let idx = names.iter().position(|n| *n == e.name).expect("validated parameter name");
            params[idx] = e.initial;
        }
        let state_q = DMatrix::from_diagonal(&DVector::from_column_slice(
            &f.state_process_noise.clone().unwrap_or_else(|| vec![0.0; n]),
        ));
        let targets: Vec<(String, Transform)> = f.estimate.iter().map(|e| (e.name.clone(), e.transform)).collect();
        let param_q = f
            .parameter_process_noise
            .as_ref()
            .map(|d| DMatrix::from_diagonal(&DVector::from_column_slice(d)));
        let model = OdeModel::new(self.filter_field(), params, cfg.state_transforms(), state_q)?
            .augment(&targets, param_q)?;
        let obs = self.channel_models(&variances)?.widened(model.state_dim())?;
        let x0 = f.initial_state.clone().unwrap_or_else(|| cfg.truth.initial_state.clone());
        let mean = model.to_filter_coords(&x0)?;
        let cov = DMatrix::from_diagonal(&DVector::from_iterator(f.initial_sd.len(), f.initial_sd.iter().map(|s| s * s)));
        let initial = GaussianBelief::new(cfg.truth.t0, mean, cov)?;
        let config = FilterConfig {
            integrator: IntegratorSettings::new(f.substeps)?,
            prune: PrunePolicy { epsilon: f.prune.epsilon, max_age: f.prune.max_age, absorb: f.prune.absorb },
            truncation: TruncationSettings {
                rel_tolerance: f.truncation.rel_tolerance,
                min_mass: f.truncation.min_mass,
                pilot_samples: f.truncation.pilot_samples,
                max_samples: f.truncation.max_samples,
                ..TruncationSettings::default()
            },
            seed: stream_seed(cfg.seed, Stream::Filter),
            mode: if f.plain_ekf { FilterMode::PlainEkf } else { FilterMode::Conditioned },
        };
        Ok(FilterSetup { model, obs, initial, config })
    }

    /// Groups dataset rows into filter frames.
    pub fn frames(&self, dataset: &Dataset, obs: &ChannelObservationModel<f64>) -> Result<Vec<ObservationFrame<f64>>, ScenarioError> {
        dataset
            .frames()
            .into_iter()
            .map(|(t, rows)| {
                let channels = rows
                    .into_iter()
                    .map(|r| {
                        let c = obs.channel_index(&r.channel).ok_or_else(|| {
                            ScenarioError::Validation(format!("dataset channel {:?} is not in the scenario", r.channel))
                        })?;
                        Ok(if r.censored {
                            ChannelObservation::censored(c, r.value, r.limit_low, r.limit_high)
                        } else {
                            ChannelObservation::uncensored(c, r.value)
                        })
                    })
                    .collect::<Result<Vec<_>, ScenarioError>>()?;
                Ok(ObservationFrame::new(t, channels))
            })
            .collect()
    }

    /// Noise levels implied by the config for the noiseless truth; used
    /// when filtering a dataset without its simulation at hand.
    pub fn noise_levels(&self) -> Result<Vec<f64>, ScenarioError> {
        Ok(self.simulate()?.noise_sd)
    }

    pub fn filter(&self, setup: &FilterSetup, dataset: &Dataset) -> Result<Vec<StepRecord<f64>>, ScenarioError> {
        let frames = self.frames(dataset, &setup.obs)?;
        Ok(filter_run(&setup.model, &setup.obs, &setup.initial, &frames, &setup.config)?)
    }

    /// Simulates and filters in one go.
    pub fn run(&self) -> Result<RunOutput, ScenarioError> {
        let synthetic = self.simulate()?;
        let setup = self.filter_setup(&synthetic.noise_sd)?;
        let records = self.filter(&setup, &synthetic.dataset)?;
        Ok(RunOutput { synthetic, setup, records })
    }

    pub fn summarize(
        &self,
        setup: &FilterSetup,
        records: &[StepRecord<f64>],
        dataset: &Dataset,
        truth: Option<&Trajectory>,
    ) -> RunSummary {
        let n = self.config.model.state_names().len();
        let names = setup.model.variable_names();
        let transforms = setup.model.transforms();
        let true_params = self.true_params();
        let field = self.truth_field();
        let last = records.last();
        let parameters = setup
            .model
            .estimated()
            .iter()
            .enumerate()
            .filter_map(|(k, e)| {
                let r = last?;
                let i = n + k;
                let sd = r.posterior.cov[(i, i)].max(0.0).sqrt();
                let m = r.posterior.mean[i];
                Some(VariableEstimate {
                    name: names[i].clone(),
                    transform: transforms[i],
                    estimate: e.transform.inverse(m),
                    lower: e.transform.inverse(m - 1.959_963_984_540_054 * sd),
                    upper: e.transform.inverse(m + 1.959_963_984_540_054 * sd),
                    truth: truth.map(|_| field.effective_parameters(r.time, &true_params)[e.index]),
                })
            })
            .collect();
        let state_rmse = truth.and_then(|traj| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for r in records {
                let x = traj.state_at(r.time)?;
                for j in 0..n {
                    let y = transforms[j].forward(x[j]);
                    sum += (r.posterior.mean[j] - y).powi(2);
                    count += 1;
                }
            }
            (count > 0).then(|| (sum / count as f64).sqrt())
        });
        RunSummary {
            name: self.config.name.clone(),
            seed: self.config.seed,
            steps: records.len(),
            final_time: last.map_or(self.config.truth.t0, |r| r.time),
            censored_fraction: dataset.censored_fraction(),
            max_history: records.iter().map(|r| r.history_size).max().unwrap_or(0),
            parameters,
            state_rmse,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub synthetic: Synthetic,
    pub setup: FilterSetup,
    pub records: Vec<StepRecord<f64>>,
}
