//! Observation datasets: `time,channel,value,censored,limit_low,limit_high`.

use std::io::{Read, Write};
use std::path::Path;

use super::ScenarioError;

pub const DATASET_HEADER: [&str; 6] = ["time", "channel", "value", "censored", "limit_low", "limit_high"];

/// One measurement. For uncensored rows the limits are the detection range
/// in force; for censored rows they bound the unobserved value and `value`
/// is the violated limit.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub time: f64,
    pub channel: String,
    pub value: f64,
    pub censored: bool,
    pub limit_low: f64,
    pub limit_high: f64,
}

impl DatasetRow {
    fn check(&self) -> Result<(), String> {
        if !self.time.is_finite() {
            return Err(format!("non-finite time {}", self.time));
        }
        if self.channel.is_empty() {
            return Err("empty channel name".into());
        }
        if self.limit_low.is_nan() || self.limit_high.is_nan() || !(self.limit_low < self.limit_high) {
            return Err(format!("limits [{}, {}] do not form an interval", self.limit_low, self.limit_high));
        }
        if !self.value.is_finite() {
            return Err(format!("non-finite value {}", self.value));
        }
        if self.censored {
            if !self.limit_low.is_finite() && !self.limit_high.is_finite() {
                return Err("censored row without a finite limit".into());
            }
            if self.value != self.limit_low && self.value != self.limit_high {
                return Err(format!("censored value {} is not one of its limits", self.value));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub rows: Vec<DatasetRow>,
}

impl Dataset {
    pub fn new(rows: Vec<DatasetRow>) -> Result<Self, ScenarioError> {
        let d = Self { rows };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        for (i, row) in self.rows.iter().enumerate() {
            row.check().map_err(|m| ScenarioError::Validation(format!("row {}: {m}", i + 1)))?;
            if i > 0 && row.time < self.rows[i - 1].time {
                return Err(ScenarioError::Validation(format!(
                    "row {}: time {} precedes {}",
                    i + 1,
                    row.time,
                    self.rows[i - 1].time
                )));
            }
        }
        Ok(())
    }

    pub fn censored_fraction(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.censored).count() as f64 / self.rows.len() as f64
    }

    /// Distinct times in order, each with its rows.
    pub fn frames(&self) -> Vec<(f64, Vec<&DatasetRow>)> {
        let mut out: Vec<(f64, Vec<&DatasetRow>)> = Vec::new();
        for row in &self.rows {
            match out.last_mut() {
                Some((t, rows)) if *t == row.time => rows.push(row),
                _ => out.push((row.time, vec![row])),
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<(), ScenarioError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| ScenarioError::Validation(format!("writing dataset: {e}"));
        w.write_record(DATASET_HEADER).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                fmt(r.time),
                r.channel.clone(),
                fmt(r.value),
                u8::from(r.censored).to_string(),
                fmt(r.limit_low),
                fmt(r.limit_high),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| ScenarioError::Validation(format!("writing dataset: {e}")))?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self, ScenarioError> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
        let header = r.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
        if header.iter().collect::<Vec<_>>() != DATASET_HEADER {
            return Err(parse_err(1, format!("expected header {}", DATASET_HEADER.join(","))));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_err(line, e.to_string())
            })?;
            let line = rec.position().map_or(rows.len() + 2, |p| p.line() as usize);
            let num = |i: usize| -> Result<f64, ScenarioError> {
                parse_f64(&rec[i]).ok_or_else(|| parse_err(line, format!("{}: cannot parse {:?}", DATASET_HEADER[i], &rec[i])))
            };
            let censored = match &rec[3] {
                "0" | "false" => false,
                "1" | "true" => true,
                other => return Err(parse_err(line, format!("censored: expected 0 or 1, got {other:?}"))),
            };
            let row = DatasetRow {
                time: num(0)?,
                channel: rec[1].to_string(),
                value: num(2)?,
                censored,
                limit_low: num(4)?,
                limit_high: num(5)?,
            };
            row.check().map_err(|m| parse_err(line, m))?;
            if let Some(prev) = rows.last() {
                let prev: &DatasetRow = prev;
                if row.time < prev.time {
                    return Err(ScenarioError::Validation(format!(
                        "line {line}: time {} precedes {}",
                        row.time, prev.time
                    )));
                }
            }
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn write(&self, path: &Path) -> Result<(), ScenarioError> {
        let file = std::fs::File::create(path).map_err(|e| ScenarioError::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn read(path: &Path) -> Result<Self, ScenarioError> {
        let file = std::fs::File::open(path).map_err(|e| ScenarioError::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file)).map_err(|e| e.with_path(path))
    }
}

/// Flags values outside `[low, high]` as censored and replaces them by the
/// violated limit. Rows already censored are left alone, so applying the
/// same limits twice changes nothing.
pub fn apply_limits(row: &mut DatasetRow, low: f64, high: f64) {
    if row.censored {
        return;
    }
    row.limit_low = low;
    row.limit_high = high;
    if row.value < low {
        row.censored = true;
        row.value = low;
        row.limit_low = f64::NEG_INFINITY;
        row.limit_high = low;
    } else if row.value > high {
        row.censored = true;
        row.value = high;
        row.limit_low = high;
        row.limit_high = f64::INFINITY;
    }
}

fn parse_err(line: usize, message: String) -> ScenarioError {
    ScenarioError::Parse { path: None, line, message }
}

/// Shortest representation that parses back to the same `f64`.
pub(crate) fn fmt(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:?}")
    }
}

pub(crate) fn parse_f64(s: &str) -> Option<f64> {
    match s {
        "inf" | "+inf" | "Inf" => Some(f64::INFINITY),
        "-inf" | "-Inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(time: f64, value: f64) -> DatasetRow {
        DatasetRow {
            time,
            channel: "x1".into(),
            value,
            censored: false,
            limit_low: f64::NEG_INFINITY,
            limit_high: f64::INFINITY,
        }
    }

    #[test]
    fn limits_are_idempotent() {
        let mut a = row(0.0, 0.3);
        apply_limits(&mut a, 0.8, f64::INFINITY);
        assert!(a.censored && a.value == 0.8 && a.limit_high == 0.8);
        let once = a.clone();
        apply_limits(&mut a, 0.8, f64::INFINITY);
        assert_eq!(a, once);
        let mut b = row(0.0, 1.3);
        apply_limits(&mut b, 0.8, f64::INFINITY);
        let once = b.clone();
        apply_limits(&mut b, 0.8, f64::INFINITY);
        assert_eq!(b, once);
        assert!(!b.censored);
    }

    #[test]
    fn frames_group_equal_times() {
        let d = Dataset::new(vec![row(0.0, 1.0), row(0.0, 2.0), row(1.0, 3.0)]).unwrap();
        let f = d.frames();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0].1.len(), 2);
    }

    #[test]
    fn header_mismatch_is_a_parse_error() {
        let err = Dataset::read_from("t,channel,value,censored,limit_low,limit_high\n".as_bytes()).unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: 1, .. }));
    }

    #[test]
    fn float_text_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::INFINITY, f64::NEG_INFINITY] {
            assert_eq!(parse_f64(&fmt(v)), Some(v));
        }
    }
}
