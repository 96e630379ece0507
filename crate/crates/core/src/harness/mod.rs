//! Experiment runner: scenario configs, the three-scheduler comparison and
//! its CSV/JSON artifacts.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub use config::{
    validate_config, FailureSection, LinkSection, NodeSection, RecoverySection, ScenarioConfig,
    ScenarioFile, TopologySection, VServerSection,
};

use crate::scheduling::SchedulerKind;
use crate::simnet::{self, FPoint, RunReport, SimError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read {}: {reason}", path.display())]
    Io { path: PathBuf, reason: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("scenario '{scenario}' failed (scheduler {scheduler}, seed {seed}): {source}")]
    Run {
        scenario: String,
        scheduler: SchedulerKind,
        seed: u64,
        source: SimError,
    },
    #[error("cannot write {}: {source}", path.display())]
    Output { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutageSummary {
    pub seed: u64,
    pub session: u64,
    pub link: String,
    pub mode: crate::controller::RecoveryMode,
    pub outage_s: f64,
}

/// Per-run numbers kept after the full report is dropped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub generated: usize,
    pub served: usize,
    pub lost: usize,
    pub in_flight: usize,
    pub mean_latency_s: f64,
    pub p99_latency_s: f64,
    pub time_avg_f: f64,
    pub final_f: Option<f64>,
    pub f_first_quartile: Option<f64>,
    pub f_last_quartile: Option<f64>,
    pub peak_trough_ratio: f64,
    pub mean_load_per_server: Vec<f64>,
    pub workload_digest: String,
    pub log_digest: String,
    #[serde(skip)]
    pub f_series: Vec<FPoint>,
    #[serde(skip)]
    pub outages: Vec<OutageSummary>,
}

impl RunSummary {
    pub fn from_report(r: &RunReport) -> Self {
        let quart = r.f_quartile_means();
        Self {
            seed: r.seed,
            generated: r.generated(),
            served: r.served(),
            lost: r.lost(),
            in_flight: r.in_flight(),
            mean_latency_s: r.mean_latency_s(),
            p99_latency_s: r.p99_latency_s(),
            time_avg_f: r.time_avg_f(),
            final_f: r.final_f(),
            f_first_quartile: quart.map(|q| q.0),
            f_last_quartile: quart.map(|q| q.1),
            peak_trough_ratio: r.peak_trough_ratio(),
            mean_load_per_server: r.mean_load_per_server().into_iter().map(|p| p.1).collect(),
            workload_digest: r.workload_digest.clone(),
            log_digest: r.log.digest(),
            f_series: r.f_series.clone(),
            outages: r
                .outages
                .iter()
                .map(|o| OutageSummary {
                    seed: r.seed,
                    session: o.session,
                    link: r.link_usage[o.link.0 as usize].name.clone(),
                    mode: o.mode,
                    outage_s: o.duration().as_secs_f64(),
                })
                .collect(),
        }
    }
}

/// Cross-seed aggregate for one scheduler. Averages are means of the
/// per-seed values; counts are sums.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchedulerSummary {
    pub name: SchedulerKind,
    pub served: usize,
    pub lost: usize,
    pub mean_latency_s: f64,
    pub p99_latency_s: f64,
    pub time_avg_f: f64,
    pub terminal_f: f64,
    pub peak_trough_ratio: f64,
    pub outages: Vec<OutageSummary>,
    pub runs: Vec<RunSummary>,
}

impl SchedulerSummary {
    pub fn aggregate(name: SchedulerKind, mut runs: Vec<RunSummary>) -> Self {
        runs.sort_by_key(|r| r.seed);
        let avg = |f: &dyn Fn(&RunSummary) -> f64| {
            if runs.is_empty() {
                0.0
            } else {
                runs.iter().map(f).sum::<f64>() / runs.len() as f64
            }
        };
        Self {
            name,
            served: runs.iter().map(|r| r.served).sum(),
            lost: runs.iter().map(|r| r.lost).sum(),
            mean_latency_s: avg(&|r| r.mean_latency_s),
            p99_latency_s: avg(&|r| r.p99_latency_s),
            time_avg_f: avg(&|r| r.time_avg_f),
            terminal_f: avg(&|r| r.final_f.unwrap_or(0.0)),
            peak_trough_ratio: avg(&|r| r.peak_trough_ratio),
            outages: runs.iter().flat_map(|r| r.outages.clone()).collect(),
            runs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub schedulers: Vec<SchedulerSummary>,
}

impl Comparison {
    pub fn scheduler(&self, kind: SchedulerKind) -> Option<&SchedulerSummary> {
        self.schedulers.iter().find(|s| s.name == kind)
    }
}

/// Runs one seed under one scheduler.
pub fn run_one(
    cfg: &ScenarioConfig,
    seed: u64,
    scheduler: SchedulerKind,
) -> Result<RunReport, HarnessError> {
    simnet::run(&cfg.sim_config(seed, scheduler)).map_err(|source| HarnessError::Run {
        scenario: cfg.name.clone(),
        scheduler,
        seed,
        source,
    })
}

/// Runs the scenario under every scheduler and seed, handing each full
/// report to `inspect` before it is reduced to a summary.
pub fn compare_schedulers_with(
    cfg: &ScenarioConfig,
    mut inspect: impl FnMut(&RunReport),
) -> Result<Comparison, HarnessError> {
    let mut seeds = cfg.seeds.clone();
    seeds.sort_unstable();
    let mut schedulers = Vec::new();
    for kind in SchedulerKind::ALL {
        let mut runs = Vec::new();
        for &seed in &seeds {
            let report = run_one(cfg, seed, kind)?;
            inspect(&report);
            runs.push(RunSummary::from_report(&report));
        }
        schedulers.push(SchedulerSummary::aggregate(kind, runs));
    }
    Ok(Comparison {
        scenario: cfg.name.clone(),
        seeds,
        schedulers,
    })
}

pub fn compare_schedulers(cfg: &ScenarioConfig) -> Result<Comparison, HarnessError> {
    compare_schedulers_with(cfg, |_| {})
}

/// Writes `t_s,scheduler,f_value` rows. Returns a warning for each series
/// with no rows.
pub fn emit_fcurve<W: Write>(
    w: W,
    series: &[(SchedulerKind, &[FPoint])],
) -> io::Result<Vec<String>> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t_s", "scheduler", "f_value"])?;
    let mut warnings = Vec::new();
    for (kind, points) in series {
        if points.is_empty() {
            warnings.push(format!(
                "{kind}: empty F series, monitoring never produced a value"
            ));
        }
        for p in points.iter() {
            out.write_record([
                p.t.as_secs_f64().to_string(),
                kind.name().to_string(),
                p.f_value.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(warnings)
}

/// Point-wise mean of several F series over the times they share.
pub fn mean_fcurve(series: &[&[FPoint]]) -> Vec<FPoint> {
    let mut acc: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for s in series {
        for p in s.iter() {
            let e = acc.entry(p.t.as_nanos()).or_insert((0.0, 0));
            e.0 += p.f_value;
            e.1 += 1;
        }
    }
    acc.into_iter()
        .filter(|(_, (_, n))| *n == series.len())
        .map(|(t, (sum, n))| FPoint {
            t: crate::time::SimTime::from_nanos(t),
            f_value: sum / n as f64,
        })
        .collect()
}

fn create(path: &Path) -> Result<io::BufWriter<fs::File>, HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| HarnessError::Output {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::File::create(path)
        .map(io::BufWriter::new)
        .map_err(|source| HarnessError::Output {
            path: path.to_path_buf(),
            source,
        })
}

fn out_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Output {
        path: path.to_path_buf(),
        source,
    }
}

/// Runs the comparison and writes its artifacts under `out`:
/// `seed-<k>/<scheduler>.csv`, `seed-<k>/fcurve.csv`, the seed-averaged
/// `fcurve.csv` and `summary.json`. Returns the comparison and warnings.
pub fn compare_to_dir(
    cfg: &ScenarioConfig,
    out: &Path,
) -> Result<(Comparison, Vec<String>), HarnessError> {
    let mut write_err = None;
    let comparison = compare_schedulers_with(cfg, |r| {
        if write_err.is_some() {
            return;
        }
        let path = out
            .join(format!("seed-{}", r.seed))
            .join(format!("{}.csv", r.scheduler));
        let res = create(&path).and_then(|f| r.write_timeseries_csv(f).map_err(out_err(&path)));
        if let Err(e) = res {
            write_err = Some(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let mut warnings = Vec::new();
    for &seed in &comparison.seeds {
        let series: Vec<(SchedulerKind, &[FPoint])> = comparison
            .schedulers
            .iter()
            .filter_map(|s| {
                s.runs
                    .iter()
                    .find(|r| r.seed == seed)
                    .map(|r| (s.name, r.f_series.as_slice()))
            })
            .collect();
        let path = out.join(format!("seed-{seed}")).join("fcurve.csv");
        let w = emit_fcurve(create(&path)?, &series).map_err(out_err(&path))?;
        warnings.extend(w.into_iter().map(|m| format!("seed {seed}: {m}")));
    }
    let means: Vec<(SchedulerKind, Vec<FPoint>)> = comparison
        .schedulers
        .iter()
        .map(|s| {
            let series: Vec<&[FPoint]> = s.runs.iter().map(|r| r.f_series.as_slice()).collect();
            (s.name, mean_fcurve(&series))
        })
        .collect();
    let refs: Vec<(SchedulerKind, &[FPoint])> =
        means.iter().map(|(k, v)| (*k, v.as_slice())).collect();
    let path = out.join("fcurve.csv");
    emit_fcurve(create(&path)?, &refs).map_err(out_err(&path))?;

    let path = out.join("summary.json");
    let mut f = create(&path)?;
    serde_json::to_writer_pretty(&mut f, &comparison)
        .map_err(io::Error::from)
        .and_then(|_| f.write_all(b"\n"))
        .and_then(|_| f.flush())
        .map_err(out_err(&path))?;
    Ok((comparison, warnings))
}
