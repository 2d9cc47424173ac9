use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use censored_ekf::scenario::{
    report_rows, write_report, Dataset, ResultsTable, RunSummary, Scenario, ScenarioConfig, ScenarioError, TruthTable,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::{Common, FilterArgs, ReportArgs, SweepArgs};

#[derive(Debug)]
pub enum CliError {
    /// Bad config, overrides or input files.
    Invalid(String),
    /// The run itself failed.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Invalid(m) | Self::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        if e.is_validation() {
            Self::Invalid(e.to_string())
        } else {
            Self::Runtime(e.to_string())
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn scenario(c: &Common) -> Result<Scenario> {
    let mut cfg = ScenarioConfig::load(&c.config)?.with_overrides(&c.overrides)?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if c.plain_ekf {
        cfg.filter.plain_ekf = true;
    }
    Ok(Scenario::new(cfg)?)
}

fn out_dir(c: &Common, sc: &Scenario) -> PathBuf {
    c.out.clone().unwrap_or_else(|| sc.config.output.dir.clone())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn write_config(sc: &Scenario, dir: &Path) -> Result<()> {
    let path = dir.join("config.json");
    std::fs::write(&path, sc.config.to_json() + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Writes dataset, truth and the effective config of one simulated run.
fn write_simulation(sc: &Scenario, dir: &Path) -> Result<censored_ekf::scenario::Synthetic> {
    let syn = sc.simulate()?;
    create_dir(dir)?;
    syn.dataset.write(&dir.join(&sc.config.output.dataset))?;
    sc.truth_table(&syn.trajectory).write(&dir.join(&sc.config.output.truth))?;
    write_config(sc, dir)?;
    Ok(syn)
}

pub fn simulate(c: &Common) -> Result<()> {
    let sc = scenario(c)?;
    let dir = out_dir(c, &sc);
    let syn = write_simulation(&sc, &dir)?;
    println!(
        "{} seed {}: {} observations, {:.1}% censored -> {}",
        sc.config.name,
        sc.config.seed,
        syn.dataset.rows.len(),
        100.0 * syn.dataset.censored_fraction(),
        dir.display()
    );
    Ok(())
}

pub fn filter(f: &FilterArgs) -> Result<()> {
    let sc = scenario(&f.common)?;
    let dir = out_dir(&f.common, &sc);
    let dataset_path = f.dataset.clone().unwrap_or_else(|| dir.join(&sc.config.output.dataset));
    let dataset = Dataset::read(&dataset_path)?;
    let truth = f
        .truth
        .as_ref()
        .map(|p| TruthTable::read(p).and_then(|t| t.trajectory(sc.config.model.state_names())))
        .transpose()?;
    let noise_sd = if sc.config.channels.iter().all(|c| c.filter_variance.is_some()) {
        vec![1.0; sc.config.channels.len()]
    } else {
        log::info!("resolving channel noise levels from the simulated truth");
        sc.noise_levels()?
    };
    let setup = sc.filter_setup(&noise_sd)?;
    let records = sc.filter(&setup, &dataset)?;
    create_dir(&dir)?;
    ResultsTable::from_records(setup.labels(), &records).write(&dir.join(&sc.config.output.results))?;
    let summary = sc.summarize(&setup, &records, &dataset, truth.as_ref());
    summary.write(&dir.join(&sc.config.output.summary))?;
    print_summary(&summary);
    Ok(())
}

fn print_summary(s: &RunSummary) {
    println!(
        "{} seed {}: {} steps to t = {}, {:.1}% censored, max history {}",
        s.name,
        s.seed,
        s.steps,
        s.final_time,
        100.0 * s.censored_fraction,
        s.max_history
    );
    for p in &s.parameters {
        let truth = p.truth.map(|t| format!(" (truth {t})")).unwrap_or_default();
        println!("  {} = {:.6} [{:.6}, {:.6}]{truth}", p.name, p.estimate, p.lower, p.upper);
    }
    if let Some(r) = s.state_rmse {
        println!("  state RMSE {r:.6}");
    }
}

/// `a..b` or `a,b,c`.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || CliError::Invalid(format!("cannot parse seeds {spec:?}; use a..b or a,b,c"));
    let seeds: Vec<u64> = if let Some((a, b)) = spec.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..b).collect()
    } else {
        spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(CliError::Invalid(format!("seed range {spec:?} is empty")));
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = seeds.iter().find(|s| !seen.insert(**s)) {
        return Err(CliError::Invalid(format!("seed {dup} is listed twice; its output directory would be shared")));
    }
    Ok(seeds)
}

#[derive(Debug, Serialize)]
struct SeedFailure {
    seed: u64,
    error: String,
}

#[derive(Debug, Serialize)]
struct Stats {
    mean: f64,
    sd: f64,
}

impl Stats {
    fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Some(Self { mean, sd: var.sqrt() })
    }
}

#[derive(Debug, Serialize)]
struct ParameterAggregate {
    name: String,
    estimate: Stats,
    truth: Option<f64>,
    /// Runs whose 95% interval contains the truth.
    covered: Option<usize>,
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    name: String,
    seeds: Vec<u64>,
    failures: Vec<SeedFailure>,
    parameters: Vec<ParameterAggregate>,
    state_rmse: Option<Stats>,
    runs: Vec<RunSummary>,
}

fn run_seed(sc: &Scenario, dir: &Path) -> Result<RunSummary> {
    let syn = write_simulation(sc, dir)?;
    let setup = sc.filter_setup(&syn.noise_sd)?;
    let records = sc.filter(&setup, &syn.dataset)?;
    ResultsTable::from_records(setup.labels(), &records).write(&dir.join(&sc.config.output.results))?;
    let summary = sc.summarize(&setup, &records, &syn.dataset, Some(&syn.trajectory));
    summary.write(&dir.join(&sc.config.output.summary))?;
    Ok(summary)
}

fn aggregate(name: String, seeds: Vec<u64>, outcomes: Vec<(u64, Result<RunSummary>)>) -> SweepSummary {
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in outcomes {
        match r {
            Ok(s) => runs.push(s),
            Err(e) => failures.push(SeedFailure { seed, error: e.to_string() }),
        }
    }
    let parameters = runs.first().map_or_else(Vec::new, |first| {
        (0..first.parameters.len())
            .map(|k| {
                let ps: Vec<_> = runs.iter().map(|r| &r.parameters[k]).collect();
                let estimates: Vec<f64> = ps.iter().map(|p| p.estimate).collect();
                let truth = ps[0].truth;
                let covered = truth.map(|_| {
                    ps.iter().filter(|p| p.truth.is_some_and(|t| p.lower <= t && t <= p.upper)).count()
                });
                ParameterAggregate {
                    name: ps[0].name.clone(),
                    estimate: Stats::of(&estimates).expect("at least one run"),
                    truth,
                    covered,
                }
            })
            .collect()
    });
    let rmse: Vec<f64> = runs.iter().filter_map(|r| r.state_rmse).collect();
    SweepSummary { name, seeds, failures, parameters, state_rmse: Stats::of(&rmse), runs }
}

pub fn sweep(s: &SweepArgs) -> Result<()> {
    let base = scenario(&s.common)?;
    let seeds = parse_seeds(&s.seeds)?;
    let dir = out_dir(&s.common, &base);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(s.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    let outcomes: Vec<(u64, Result<RunSummary>)> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let sc = base.with_seed(seed);
                let r = run_seed(&sc, &dir.join(format!("seed-{seed}")));
                if let Err(e) = &r {
                    log::warn!("seed {seed} failed: {e}");
                }
                (seed, r)
            })
            .collect()
    });
    let summary = aggregate(base.config.name.clone(), seeds, outcomes);
    create_dir(&dir)?;
    let path = dir.join("sweep.json");
    let text = serde_json::to_string_pretty(&summary).expect("sweep summary serializes");
    std::fs::write(&path, text + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;

    println!("{}: {} of {} seeds succeeded -> {}", summary.name, summary.runs.len(), summary.seeds.len(), path.display());
    for p in &summary.parameters {
        let truth = p.truth.map(|t| format!(", truth {t}")).unwrap_or_default();
        let covered = p.covered.map(|c| format!(", interval covers truth in {c}/{}", summary.runs.len())).unwrap_or_default();
        println!("  {}: mean {:.6}, sd {:.6}{truth}{covered}", p.name, p.estimate.mean, p.estimate.sd);
    }
    if let Some(r) = &summary.state_rmse {
        println!("  state RMSE: mean {:.6}, sd {:.6}", r.mean, r.sd);
    }
    for f in &summary.failures {
        println!("  seed {} failed: {}", f.seed, f.error);
    }
    if summary.runs.is_empty() {
        return Err(CliError::Runtime("every seed failed".into()));
    }
    Ok(())
}

pub fn report(r: &ReportArgs) -> Result<()> {
    let results = ResultsTable::read(&r.results)?;
    let truth = r.truth.as_ref().map(|p| TruthTable::read(p)).transpose()?;
    let dataset = r.dataset.as_ref().map(|p| Dataset::read(p)).transpose()?;
    let rows = report_rows(&results, truth.as_ref(), dataset.as_ref());
    let dir = r.out.clone().unwrap_or_else(|| r.results.parent().map(Path::to_path_buf).unwrap_or_default());
    create_dir(&dir)?;
    let path = dir.join("report.csv");
    let file = std::fs::File::create(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    write_report(&rows, std::io::BufWriter::new(file))?;
    println!("{} rows -> {}", rows.len(), path.display());
    Ok(())
}
