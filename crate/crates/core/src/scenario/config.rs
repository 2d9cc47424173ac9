//! JSON scenario configuration.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ScenarioError;
use crate::models::{
    AlphaSwitch, ChannelMap, HcvParams, HivParams, OscillatorParams, Transform, TreatmentWindow,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    /// Every random draw (process noise, measurement noise, Monte-Carlo
    /// moments) derives from this seed.
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    pub truth: TruthConfig,
    pub channels: Vec<ChannelConfig>,
    pub filter: FilterSettings,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Oscillator {
        #[serde(default)]
        params: OscillatorParams,
        /// Changes of the true α over time; the filter model never sees them.
        #[serde(default)]
        alpha_switches: Vec<AlphaSwitch>,
    },
    Hcv {
        #[serde(default)]
        params: HcvParams,
    },
    Hiv {
        #[serde(default)]
        params: HivParams,
        #[serde(default)]
        treatment: Vec<TreatmentWindow>,
    },
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Oscillator { .. } => "oscillator",
            Self::Hcv { .. } => "hcv",
            Self::Hiv { .. } => "hiv",
        }
    }

    pub fn state_names(&self) -> &'static [&'static str] {
        match self {
            Self::Oscillator { .. } => &["x1", "x2"],
            Self::Hcv { .. } => &["T", "I", "VI", "VNI"],
            Self::Hiv { .. } => &["T1", "T2", "T1s", "T2s", "VI", "VNI", "E"],
        }
    }

    pub fn parameter_names(&self) -> &'static [&'static str] {
        match self {
            Self::Oscillator { .. } => &OscillatorParams::NAMES,
            Self::Hcv { .. } => &HcvParams::NAMES,
            Self::Hiv { .. } => &HivParams::NAMES,
        }
    }

    pub fn parameter_values(&self) -> Vec<f64> {
        match self {
            Self::Oscillator { params, .. } => params.values(),
            Self::Hcv { params } => params.values(),
            Self::Hiv { params, .. } => params.values(),
        }
    }

    /// Log₁₀ for the viral models, identity for the oscillator.
    pub fn default_state_transform(&self) -> Transform {
        match self {
            Self::Oscillator { .. } => Transform::Identity,
            _ => Transform::Log10,
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            Self::Oscillator { params, alpha_switches } => {
                params.validate()?;
                if alpha_switches.iter().any(|s| !(s.time.is_finite() && s.alpha.is_finite())) {
                    return Err("alpha switches need finite time and alpha".into());
                }
                Ok(())
            }
            Self::Hcv { params } => params.validate(),
            Self::Hiv { params, treatment } => {
                params.validate()?;
                crate::models::Hiv::new(treatment.clone()).validate()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    #[serde(default)]
    pub t0: f64,
    /// True initial state in natural units.
    pub initial_state: Vec<f64>,
    /// Diagonal of the true process-noise intensity in natural units; absent
    /// or all zero means a deterministic trajectory.
    #[serde(default)]
    pub process_noise: Option<Vec<f64>>,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

/// `count` times `start, start + step, …`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeBlock {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

/// Detection limits in force from `from` on (until the next era starts).
/// A missing bound is infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitEra {
    #[serde(default)]
    pub from: Option<f64>,
    #[serde(default)]
    pub low: Option<f64>,
    #[serde(default)]
    pub high: Option<f64>,
}

impl LimitEra {
    pub fn bounds(&self) -> (f64, f64) {
        (self.low.unwrap_or(f64::NEG_INFINITY), self.high.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub name: String,
    /// Observation map over the filter state.
    pub map: ChannelMap,
    pub times: Vec<TimeBlock>,
    /// Noise standard deviation as a fraction of the RMS of the noiseless
    /// channel signal.
    #[serde(default)]
    pub noise_level: Option<f64>,
    /// Absolute noise standard deviation in observation units.
    #[serde(default)]
    pub noise_sd: Option<f64>,
    #[serde(default)]
    pub limits: Vec<LimitEra>,
    /// Measurement variance assumed by the filter; defaults to the true one.
    #[serde(default)]
    pub filter_variance: Option<f64>,
}

impl ChannelConfig {
    /// Observation times in increasing order.
    pub fn time_grid(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self
            .times
            .iter()
            .flat_map(|b| (0..b.count).map(move |k| b.start + b.step * k as f64))
            .collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    /// Detection interval in force at `t`.
    pub fn limits_at(&self, t: f64) -> (f64, f64) {
        self.limits
            .iter()
            .filter(|e| e.from.is_none_or(|f| t >= f))
            .max_by(|a, b| a.from.unwrap_or(f64::NEG_INFINITY).total_cmp(&b.from.unwrap_or(f64::NEG_INFINITY)))
            .map_or((f64::NEG_INFINITY, f64::INFINITY), LimitEra::bounds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub name: String,
    pub transform: Transform,
    /// Initial guess in natural units.
    pub initial: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub epsilon: f64,
    pub max_age: usize,
    pub absorb: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self { epsilon: 1e-4, max_age: 50, absorb: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruncationConfig {
    pub rel_tolerance: f64,
    pub min_mass: f64,
    pub pilot_samples: usize,
    pub max_samples: usize,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        let s = crate::truncated::TruncationSettings::default();
        Self {
            rel_tolerance: s.rel_tolerance,
            min_mass: s.min_mass,
            pilot_samples: s.pilot_samples,
            max_samples: s.max_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSettings {
    /// Initial state guess in natural units; defaults to the true one.
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
    /// Initial standard deviations in filter coordinates, states first and
    /// then estimated parameters.
    pub initial_sd: Vec<f64>,
    #[serde(default)]
    pub estimate: Vec<EstimateConfig>,
    #[serde(default)]
    pub state_transforms: Option<Vec<Transform>>,
    /// Diagonal of Q over the states, filter coordinates.
    #[serde(default)]
    pub state_process_noise: Option<Vec<f64>>,
    /// Diagonal of Q over the estimated parameters, filter coordinates.
    #[serde(default)]
    pub parameter_process_noise: Option<Vec<f64>>,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub prune: PruneConfig,
    #[serde(default)]
    pub truncation: TruncationConfig,
    /// Treat censored values as exact measurements.
    #[serde(default)]
    pub plain_ekf: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub dataset: String,
    pub truth: String,
    pub results: String,
    pub summary: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            dataset: "dataset.csv".into(),
            truth: "truth.csv".into(),
            results: "results.csv".into(),
            summary: "summary.json".into(),
        }
    }
}

fn default_substeps() -> usize {
    20
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            path: None,
            line: e.line(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.with_path(path))
    }

    /// Applies `key=value` overrides addressed by dotted paths into the
    /// fully expanded configuration. Array elements are addressed by index.
    /// Values parse as JSON, falling back to a plain string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ScenarioError> {
        let mut doc = serde_json::to_value(self).expect("configuration serializes");
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| ScenarioError::Validation(format!("override {item:?} is not key=value")))?;
            let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let slot = lookup(&mut doc, key)
                .ok_or_else(|| ScenarioError::Validation(format!("override key {key:?} does not exist")))?;
            *slot = value;
        }
        let cfg: Self = serde_json::from_value(doc)
            .map_err(|e| ScenarioError::Validation(format!("invalid override: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn state_transforms(&self) -> Vec<Transform> {
        self.filter
            .state_transforms
            .clone()
            .unwrap_or_else(|| vec![self.model.default_state_transform(); self.model.state_names().len()])
    }

    /// Filter state dimension: model states plus estimated parameters.
    pub fn filter_dim(&self) -> usize {
        self.model.state_names().len() + self.filter.estimate.len()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |m: String| Err(ScenarioError::Validation(m));
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        self.model.validate().map_err(ScenarioError::Validation)?;
        let n = self.model.state_names().len();
        let t = &self.truth;
        if t.initial_state.len() != n || t.initial_state.iter().any(|v| !v.is_finite()) {
            return fail(format!("truth.initial_state needs {n} finite values"));
        }
        if let Some(q) = &t.process_noise {
            if q.len() != n || q.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return fail(format!("truth.process_noise needs {n} nonnegative values"));
            }
        }
        if t.substeps == 0 || self.filter.substeps == 0 {
            return fail("substeps must be at least 1".into());
        }
        if self.channels.is_empty() {
            return fail("at least one channel is required".into());
        }
        let mut names = HashSet::new();
        for ch in &self.channels {
            if !names.insert(ch.name.as_str()) {
                return fail(format!("channel {:?} is defined twice", ch.name));
            }
            let indices = match &ch.map {
                ChannelMap::Component { index } => vec![*index],
                ChannelMap::LogSum { indices, .. } => indices.clone(),
            };
            if indices.is_empty() || indices.iter().any(|&i| i >= n) {
                return fail(format!("channel {:?} maps states outside 0..{n}", ch.name));
            }
            if ch.times.is_empty() || ch.times.iter().any(|b| b.count == 0 || !(b.step > 0.0) || !b.start.is_finite()) {
                return fail(format!("channel {:?} needs time blocks with positive step and count", ch.name));
            }
            if ch.time_grid().first().is_some_and(|&first| first < t.t0) {
                return fail(format!("channel {:?} observes before truth.t0", ch.name));
            }
            match (ch.noise_level, ch.noise_sd) {
                (Some(v), None) | (None, Some(v)) if v.is_finite() && v >= 0.0 => {}
                (Some(_), Some(_)) => return fail(format!("channel {:?} sets both noise_level and noise_sd", ch.name)),
                (None, None) => return fail(format!("channel {:?} needs noise_level or noise_sd", ch.name)),
                _ => return fail(format!("channel {:?} has a negative or non-finite noise setting", ch.name)),
            }
            for era in &ch.limits {
                let (lo, hi) = era.bounds();
                if !(lo < hi) || lo.is_nan() || hi.is_nan() {
                    return fail(format!("channel {:?} has an empty limit interval [{lo}, {hi}]", ch.name));
                }
            }
            if let Some(v) = ch.filter_variance {
                if !(v > 0.0 && v.is_finite()) {
                    return fail(format!("channel {:?} filter_variance must be positive", ch.name));
                }
            }
        }
        let f = &self.filter;
        let dim = self.filter_dim();
        if let Some(x) = &f.initial_state {
            if x.len() != n || x.iter().any(|v| !v.is_finite()) {
                return fail(format!("filter.initial_state needs {n} finite values"));
            }
        }
        if f.initial_sd.len() != dim || f.initial_sd.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return fail(format!("filter.initial_sd needs {dim} positive values"));
        }
        let params = self.model.parameter_names();
        let mut seen = HashSet::new();
        for e in &f.estimate {
            if !params.contains(&e.name.as_str()) {
                return fail(format!("unknown estimated parameter {:?} (model has {})", e.name, params.join(", ")));
            }
            if !seen.insert(e.name.as_str()) {
                return fail(format!("parameter {:?} estimated twice", e.name));
            }
            if !e.transform.admits(e.initial) {
                return fail(format!("initial {} = {} outside the {:?} domain", e.name, e.initial, e.transform));
            }
        }
        if let Some(tr) = &f.state_transforms {
            if tr.len() != n {
                return fail(format!("filter.state_transforms needs {n} entries"));
            }
        }
        for (key, v, len) in [
            ("state_process_noise", &f.state_process_noise, n),
            ("parameter_process_noise", &f.parameter_process_noise, f.estimate.len()),
        ] {
            if let Some(v) = v {
                if v.len() != len || v.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
                    return fail(format!("filter.{key} needs {len} nonnegative values"));
                }
            }
        }
        if !(f.prune.epsilon >= 0.0) || f.prune.max_age == 0 {
            return fail("filter.prune needs epsilon ≥ 0 and max_age ≥ 1".into());
        }
        let tr = &f.truncation;
        if !(tr.rel_tolerance > 0.0) || !(tr.min_mass > 0.0) || tr.pilot_samples == 0 || tr.max_samples < tr.pilot_samples
        {
            return fail("filter.truncation settings are out of range".into());
        }
        let o = &self.output;
        let files = [&o.dataset, &o.truth, &o.results, &o.summary];
        if files.iter().collect::<HashSet<_>>().len() != files.len() || files.iter().any(|f| f.is_empty()) {
            return fail("output file names must be nonempty and distinct".into());
        }
        Ok(())
    }
}

fn lookup<'a>(doc: &'a mut Value, key: &str) -> Option<&'a mut Value> {
    let mut cur = doc;
    for part in key.split('.') {
        cur = match cur {
            Value::Object(map) => map.get_mut(part)?,
            Value::Array(items) => items.get_mut(part.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    Some(cur)
}

/// Every dotted key of the expanded configuration, with array elements
/// written as `[i]`.
pub fn config_keys(cfg: &ScenarioConfig) -> Vec<String> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<String>) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            Value::Array(items) if items.iter().any(|i| i.is_object()) => {
                for child in items {
                    walk(&format!("{prefix}.[i]"), child, out);
                }
            }
            _ => out.push(prefix.to_string()),
        }
    }
    let mut out = Vec::new();
    walk("", &serde_json::to_value(cfg).expect("configuration serializes"), &mut out);
    out.sort();
    out.dedup();
    out
}
