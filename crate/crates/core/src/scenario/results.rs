//! Per-step results, truth tables, run summaries and the long-format report.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::dataset::{fmt, parse_f64, Dataset};
use super::simulate::Trajectory;
use super::ScenarioError;
use crate::censored::StepRecord;
use crate::models::Transform;

const Z95: f64 = 1.959_963_984_540_054;

const FIXED_COLUMNS: [&str; 8] = [
    "step",
    "time",
    "history_size",
    "censored_count",
    "kalman_gain_norm",
    "correction_gain_norm",
    "estimator_error",
    "moment_method",
];

/// Column label of a filter variable: the name, prefixed by its transform.
pub fn variable_label(name: &str, transform: Transform) -> String {
    match transform {
        Transform::Identity => name.to_string(),
        Transform::Log10 => format!("log10_{name}"),
        Transform::Tan => format!("tan_{name}"),
    }
}

/// Inverse of [`variable_label`].
pub fn parse_label(label: &str) -> (String, Transform) {
    if let Some(name) = label.strip_prefix("log10_") {
        (name.to_string(), Transform::Log10)
    } else if let Some(name) = label.strip_prefix("tan_") {
        (name.to_string(), Transform::Tan)
    } else {
        (label.to_string(), Transform::Identity)
    }
}

/// One filter step in filter coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub step: usize,
    pub time: f64,
    pub history_size: usize,
    pub censored_count: usize,
    pub kalman_gain_norm: f64,
    pub correction_gain_norm: f64,
    pub estimator_error: f64,
    pub moment_method: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub naive_mean: Vec<f64>,
}

impl ResultRow {
    /// 95% interval `mean ± 1.96·sd` of variable `i`.
    pub fn interval(&self, i: usize) -> (f64, f64) {
        let half = Z95 * self.var[i].max(0.0).sqrt();
        (self.mean[i] - half, self.mean[i] + half)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsTable {
    /// Labels from [`variable_label`].
    pub variables: Vec<String>,
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn from_records(variables: Vec<String>, records: &[StepRecord<f64>]) -> Self {
        let rows = records
            .iter()
            .map(|r| ResultRow {
                step: r.step,
                time: r.time,
                history_size: r.history_size,
                censored_count: r.censored_count,
                kalman_gain_norm: r.kalman_gain_norm,
                correction_gain_norm: r.correction_gain_norm,
                estimator_error: r.estimator_error,
                moment_method: r.moment_method.map_or("none".to_string(), |m| format!("{m:?}").to_lowercase()),
                mean: r.posterior.mean.iter().copied().collect(),
                var: r.posterior.cov.diagonal().iter().copied().collect(),
                naive_mean: r.naive.mean.iter().copied().collect(),
            })
            .collect();
        Self { variables, rows }
    }

    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        for v in &self.variables {
            h.extend([v.clone(), format!("{v}_var"), format!("{v}_lo"), format!("{v}_hi"), format!("{v}_naive")]);
        }
        h
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<(), ScenarioError> {
        let err = |e: csv::Error| ScenarioError::Validation(format!("writing results: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header()).map_err(err)?;
        for r in &self.rows {
            let mut rec = vec![
                r.step.to_string(),
                fmt(r.time),
                r.history_size.to_string(),
                r.censored_count.to_string(),
                fmt(r.kalman_gain_norm),
                fmt(r.correction_gain_norm),
                fmt(r.estimator_error),
                r.moment_method.clone(),
            ];
            for i in 0..self.variables.len() {
                let (lo, hi) = r.interval(i);
                rec.extend([fmt(r.mean[i]), fmt(r.var[i]), fmt(lo), fmt(hi), fmt(r.naive_mean[i])]);
            }
            w.write_record(rec).map_err(err)?;
        }
        w.flush().map_err(|e| ScenarioError::Validation(format!("writing results: {e}")))
    }

    /// Reads a results file; the interval columns are recomputed from mean
    /// and variance and only checked for presence.
    pub fn read_from<R: Read>(input: R) -> Result<Self, ScenarioError> {
        let perr = |line: usize, message: String| ScenarioError::Parse { path: None, line, message };
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header: Vec<String> = r.headers().map_err(|e| perr(1, e.to_string()))?.iter().map(String::from).collect();
        if header.len() < FIXED_COLUMNS.len() || header[..FIXED_COLUMNS.len()] != FIXED_COLUMNS
            || !(header.len() - FIXED_COLUMNS.len()).is_multiple_of(5)
        {
            return Err(perr(1, "not a results file header".into()));
        }
        let variables: Vec<String> = header[FIXED_COLUMNS.len()..].iter().step_by(5).cloned().collect();
        let table = Self { variables, rows: Vec::new() };
        if table.header() != header {
            return Err(perr(1, "inconsistent variable columns".into()));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| perr(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let num = |i: usize| parse_f64(&rec[i]).ok_or_else(|| perr(line, format!("{}: cannot parse {:?}", header[i], &rec[i])));
            let int = |i: usize| rec[i].parse::<usize>().map_err(|_| perr(line, format!("{}: cannot parse {:?}", header[i], &rec[i])));
            let mut row = ResultRow {
                step: int(0)?,
                time: num(1)?,
                history_size: int(2)?,
                censored_count: int(3)?,
                kalman_gain_norm: num(4)?,
                correction_gain_norm: num(5)?,
                estimator_error: num(6)?,
                moment_method: rec[7].to_string(),
                mean: Vec::new(),
                var: Vec::new(),
                naive_mean: Vec::new(),
            };
            for k in 0..table.variables.len() {
                let base = FIXED_COLUMNS.len() + 5 * k;
                row.mean.push(num(base)?);
                row.var.push(num(base + 1)?);
                num(base + 2)?;
                num(base + 3)?;
                row.naive_mean.push(num(base + 4)?);
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(ScenarioError::Validation("results file has no rows".into()));
        }
        Ok(Self { rows, ..table })
    }

    pub fn write(&self, path: &Path) -> Result<(), ScenarioError> {
        let f = std::fs::File::create(path).map_err(|e| ScenarioError::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn read(path: &Path) -> Result<Self, ScenarioError> {
        let f = std::fs::File::open(path).map_err(|e| ScenarioError::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f)).map_err(|e| e.with_path(path))
    }
}

/// True states and parameters over time, natural units.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTable {
    pub columns: Vec<String>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl TruthTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// The columns named in `states`, in that order, as a trajectory.
    pub fn trajectory(&self, states: &[&str]) -> Result<Trajectory, ScenarioError> {
        let idx = states
            .iter()
            .map(|s| self.column(s).ok_or_else(|| ScenarioError::Validation(format!("truth file has no {s:?} column"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Trajectory {
            times: self.times.clone(),
            states: self.values.iter().map(|row| DVector::from_iterator(idx.len(), idx.iter().map(|&k| row[k]))).collect(),
        })
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<(), ScenarioError> {
        let err = |e: csv::Error| ScenarioError::Validation(format!("writing truth: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(std::iter::once("time".to_string()).chain(self.columns.iter().cloned())).map_err(err)?;
        for (t, row) in self.times.iter().zip(&self.values) {
            w.write_record(std::iter::once(fmt(*t)).chain(row.iter().map(|v| fmt(*v)))).map_err(err)?;
        }
        w.flush().map_err(|e| ScenarioError::Validation(format!("writing truth: {e}")))
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self, ScenarioError> {
        let perr = |line: usize, message: String| ScenarioError::Parse { path: None, line, message };
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header: Vec<String> = r.headers().map_err(|e| perr(1, e.to_string()))?.iter().map(String::from).collect();
        if header.first().map(String::as_str) != Some("time") {
            return Err(perr(1, "truth file must start with a time column".into()));
        }
        let mut out = Self { columns: header[1..].to_vec(), times: Vec::new(), values: Vec::new() };
        for rec in r.records() {
            let rec = rec.map_err(|e| perr(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let vals = rec
                .iter()
                .map(|s| parse_f64(s).ok_or_else(|| perr(line, format!("cannot parse {s:?}"))))
                .collect::<Result<Vec<f64>, _>>()?;
            out.times.push(vals[0]);
            out.values.push(vals[1..].to_vec());
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<(), ScenarioError> {
        let f = std::fs::File::create(path).map_err(|e| ScenarioError::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn read(path: &Path) -> Result<Self, ScenarioError> {
        let f = std::fs::File::open(path).map_err(|e| ScenarioError::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f)).map_err(|e| e.with_path(path))
    }
}

/// Final estimate of one filter variable, natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableEstimate {
    pub name: String,
    pub transform: Transform,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub truth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub steps: usize,
    pub final_time: f64,
    pub censored_fraction: f64,
    pub max_history: usize,
    pub parameters: Vec<VariableEstimate>,
    /// RMS error of the state in filter coordinates over all steps.
    #[serde(default)]
    pub state_rmse: Option<f64>,
}

impl RunSummary {
    pub fn write(&self, path: &Path) -> Result<(), ScenarioError> {
        let text = serde_json::to_string_pretty(self).expect("summary serializes");
        std::fs::write(path, text + "\n").map_err(|e| ScenarioError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
            path: Some(path.to_path_buf()),
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// One row of the long-format report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub series: &'static str,
    pub variable: String,
    pub time: f64,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub censored: bool,
}

pub const REPORT_HEADER: [&str; 7] = ["series", "variable", "time", "value", "lower", "upper", "censored"];

/// Tidy series for plotting: filter estimates with 95% bounds (natural
/// units), the truth, and the observations on their own time grids.
pub fn report_rows(results: &ResultsTable, truth: Option<&TruthTable>, dataset: Option<&Dataset>) -> Vec<ReportRow> {
    let mut out = Vec::new();
    for (i, label) in results.variables.iter().enumerate() {
        let (name, tr) = parse_label(label);
        for r in &results.rows {
            let (lo, hi) = r.interval(i);
            out.push(ReportRow {
                series: "estimate",
                variable: name.clone(),
                time: r.time,
                value: tr.inverse(r.mean[i]),
                lower: tr.inverse(lo),
                upper: tr.inverse(hi),
                censored: false,
            });
        }
        if let Some((t, k)) = truth.and_then(|t| t.column(&name).map(|k| (t, k))) {
            for (time, row) in t.times.iter().zip(&t.values) {
                out.push(ReportRow {
                    series: "truth",
                    variable: name.clone(),
                    time: *time,
                    value: row[k],
                    lower: row[k],
                    upper: row[k],
                    censored: false,
                });
            }
        }
    }
    if let Some(d) = dataset {
        for r in &d.rows {
            out.push(ReportRow {
                series: "observation",
                variable: r.channel.clone(),
                time: r.time,
                value: r.value,
                lower: if r.censored { r.limit_low } else { r.value },
                upper: if r.censored { r.limit_high } else { r.value },
                censored: r.censored,
            });
        }
    }
    out
}

pub fn write_report<W: Write>(rows: &[ReportRow], out: W) -> Result<(), ScenarioError> {
    let err = |e: csv::Error| ScenarioError::Validation(format!("writing report: {e}"));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.series.to_string(),
            r.variable.clone(),
            fmt(r.time),
            fmt(r.value),
            fmt(r.lower),
            fmt(r.upper),
            u8::from(r.censored).to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| ScenarioError::Validation(format!("writing report: {e}")))
}
