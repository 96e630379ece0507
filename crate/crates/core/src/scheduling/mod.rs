//! Backend selection: round-robin, greedy (least active sessions) and the
//! variance/probability scheduler driven by the per-server traffic ANOVA.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{self, AnovaReport, Group, PairComparison, SampleGroups, StatsError};

/// Additive smoothing (bytes per window) in the inverse-load weights.
pub const LOAD_SMOOTHING: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ServerId(pub u32);

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulingError {
    #[error("no alive server available")]
    NoAliveServer,
    #[error("server {0} has no active session to complete")]
    Underflow(ServerId),
    #[error("unknown scheduler '{0}', expected one of: round-robin, greedy, variance")]
    UnknownKind(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerKind {
    RoundRobin,
    Greedy,
    Variance,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 3] = [Self::RoundRobin, Self::Greedy, Self::Variance];

    pub fn name(self) -> &'static str {
        match self {
            Self::RoundRobin => "round-robin",
            Self::Greedy => "greedy",
            Self::Variance => "variance",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerKind {
    type Err = SchedulingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SchedulingError::UnknownKind(s.to_string()))
    }
}

/// Fixed-capacity ring of recent traffic samples (bytes per monitoring window).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadWindow {
    capacity: usize,
    samples: VecDeque<f64>,
}

impl LoadWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "load window capacity must be positive");
        Self {
            capacity,
            samples: VecDeque::with_capacity(capacity),
        }
    }

    /// Appends a sample, evicting the oldest one when full.
    pub fn push(&mut self, sample: f64) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.samples.iter().sum::<f64>() / self.samples.len() as f64
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServerState {
    pub id: ServerId,
    pub address: Ipv4Addr,
    pub port: u16,
    pub active_sessions: u32,
    pub load_window: LoadWindow,
    pub alive: bool,
}

impl ServerState {
    pub fn new(id: ServerId, address: Ipv4Addr, port: u16, window: usize) -> Self {
        Self {
            id,
            address,
            port,
            active_sessions: 0,
            load_window: LoadWindow::new(window),
            alive: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Default,
    Rebalance,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleDecision {
    pub chosen: ServerId,
    pub weights: Option<Vec<(ServerId, f64)>>,
    pub trigger: Trigger,
}

impl ScheduleDecision {
    fn plain(chosen: ServerId) -> Self {
        Self {
            chosen,
            weights: None,
            trigger: Trigger::Default,
        }
    }
}

/// Next alive server in cyclic order starting at `cursor`. Returns the
/// decision and the cursor just past the chosen index.
pub fn round_robin_next(
    servers: &[ServerState],
    cursor: usize,
) -> Result<(ScheduleDecision, usize), SchedulingError> {
    let n = servers.len();
    (0..n)
        .map(|off| (cursor + off) % n)
        .find(|&i| servers[i].alive)
        .map(|i| (ScheduleDecision::plain(servers[i].id), (i + 1) % n))
        .ok_or(SchedulingError::NoAliveServer)
}

/// Alive server with the fewest active sessions; ties go to the lowest id.
pub fn greedy_next(servers: &[ServerState]) -> Result<ScheduleDecision, SchedulingError> {
    servers
        .iter()
        .filter(|s| s.alive)
        .min_by_key(|s| (s.active_sessions, s.id))
        .map(|s| ScheduleDecision::plain(s.id))
        .ok_or(SchedulingError::NoAliveServer)
}

/// Selection weights for the variance scheduler.
///
/// Without a report, or when the F-test is not significant, the weights are
/// uniform over alive servers. Otherwise they are proportional to
/// `1 / (mean load + 1)`, and a server that the LSD comparisons place
/// significantly above every other alive server gets weight zero.
pub fn variance_weights(
    servers: &[ServerState],
    report: Option<&AnovaReport>,
    comparisons: &[PairComparison],
) -> Result<(Vec<(ServerId, f64)>, Trigger), SchedulingError> {
    let alive: Vec<&ServerState> = servers.iter().filter(|s| s.alive).collect();
    if alive.is_empty() {
        return Err(SchedulingError::NoAliveServer);
    }
    let significant = report.is_some_and(|r| r.significant);
    if !significant {
        let w = 1.0 / alive.len() as f64;
        return Ok((alive.iter().map(|s| (s.id, w)).collect(), Trigger::Default));
    }

    let means: Vec<f64> = alive.iter().map(|s| s.load_window.mean()).collect();
    let mut raw: Vec<f64> = means.iter().map(|m| 1.0 / (m + LOAD_SMOOTHING)).collect();
    if alive.len() >= 2 {
        for (i, s) in alive.iter().enumerate() {
            let above_all = alive.iter().enumerate().all(|(j, o)| {
                j == i
                    || (means[i] > means[j]
                        && stats::find_pair(comparisons, s.id.0, o.id.0)
                            .is_some_and(|c| c.significant))
            });
            if above_all {
                raw[i] = 0.0;
            }
        }
    }
    let total: f64 = raw.iter().sum();
    Ok((
        alive
            .iter()
            .zip(raw)
            .map(|(s, w)| (s.id, w / total))
            .collect(),
        Trigger::Rebalance,
    ))
}

/// Draws an index from a weight vector that sums to one.
pub fn sample_weighted<R: Rng + ?Sized>(weights: &[(ServerId, f64)], rng: &mut R) -> ServerId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(id, w) in weights {
        acc += w;
        if u < acc {
            return id;
        }
    }
    // rounding left u above the cumulative sum
    weights
        .iter()
        .rev()
        .find(|(_, w)| *w > 0.0)
        .map(|(id, _)| *id)
        .expect("weight vector has a positive entry")
}

pub fn variance_probability_next<R: Rng + ?Sized>(
    servers: &[ServerState],
    report: Option<&AnovaReport>,
    comparisons: &[PairComparison],
    rng: &mut R,
) -> Result<ScheduleDecision, SchedulingError> {
    let (weights, trigger) = variance_weights(servers, report, comparisons)?;
    let chosen = sample_weighted(&weights, rng);
    Ok(ScheduleDecision {
        chosen,
        weights: Some(weights),
        trigger,
    })
}

pub fn record_completion(server: &mut ServerState) -> Result<(), SchedulingError> {
    server.active_sessions = server
        .active_sessions
        .checked_sub(1)
        .ok_or(SchedulingError::Underflow(server.id))?;
    Ok(())
}

/// Result of the most recent monitoring analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadAnalysis {
    pub report: AnovaReport,
    pub comparisons: Vec<PairComparison>,
}

/// Runs the F-test and LSD comparisons over the alive servers' load windows.
///
/// Returns `None` during cold start, while any alive window holds fewer than
/// two samples or fewer than two servers are alive.
pub fn analyze_windows(
    servers: &[ServerState],
    alpha: f64,
    cache: &mut CriticalCache,
) -> Result<Option<LoadAnalysis>, SchedulingError> {
    let alive: Vec<&ServerState> = servers.iter().filter(|s| s.alive).collect();
    if alive.len() < 2 || alive.iter().any(|s| s.load_window.len() < 2) {
        return Ok(None);
    }
    let groups = SampleGroups::new(
        alive
            .iter()
            .map(|s| Group::new(s.id.0, s.load_window.samples().collect()))
            .collect(),
    )?;
    let df_b = (groups.k() - 1) as u64;
    let df_w = (groups.total() - groups.k()) as u64;
    let (f_crit, t_crit) = cache.get(alpha, df_b, df_w)?;
    let report = stats::report_with_critical(&groups, alpha, f_crit);
    let comparisons = stats::comparisons_with_critical(&groups, &report, t_crit)?;
    Ok(Some(LoadAnalysis {
        report,
        comparisons,
    }))
}

/// Memoized (F, t) critical values keyed by degrees of freedom.
#[derive(Debug, Default, Clone)]
pub struct CriticalCache {
    values: HashMap<(u64, u64, u64), (f64, f64)>,
}

impl CriticalCache {
    pub fn get(&mut self, alpha: f64, df_b: u64, df_w: u64) -> Result<(f64, f64), StatsError> {
        let key = (alpha.to_bits(), df_b, df_w);
        if let Some(v) = self.values.get(&key) {
            return Ok(*v);
        }
        let v = (
            stats::f_critical(alpha, df_b, df_w)?,
            stats::t_critical(alpha, df_w)?,
        );
        self.values.insert(key, v);
        Ok(v)
    }
}

/// Scheduler state owned by the controller.
///
/// The variance scheduler re-evaluates its analysis once per monitoring tick
/// through [`Scheduler::observe`]; selections between ticks reuse it.
#[derive(Debug, Clone)]
pub struct Scheduler {
    kind: SchedulerKind,
    alpha: f64,
    cursor: usize,
    analysis: Option<LoadAnalysis>,
    cache: CriticalCache,
}

impl Scheduler {
    pub fn new(kind: SchedulerKind, alpha: f64) -> Self {
        Self {
            kind,
            alpha,
            cursor: 0,
            analysis: None,
            cache: CriticalCache::default(),
        }
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    pub fn analysis(&self) -> Option<&LoadAnalysis> {
        self.analysis.as_ref()
    }

    /// Recomputes the load analysis from the servers' current windows.
    pub fn observe(
        &mut self,
        servers: &[ServerState],
    ) -> Result<Option<&LoadAnalysis>, SchedulingError> {
        self.analysis = analyze_windows(servers, self.alpha, &mut self.cache)?;
        Ok(self.analysis.as_ref())
    }

    pub fn select<R: Rng + ?Sized>(
        &mut self,
        servers: &[ServerState],
        rng: &mut R,
    ) -> Result<ScheduleDecision, SchedulingError> {
        match self.kind {
            SchedulerKind::RoundRobin => {
                let (d, cursor) = round_robin_next(servers, self.cursor)?;
                self.cursor = cursor;
                Ok(d)
            }
            SchedulerKind::Greedy => greedy_next(servers),
            SchedulerKind::Variance => {
                let (report, comparisons) = match &self.analysis {
                    Some(a) => (Some(&a.report), a.comparisons.as_slice()),
                    None => (None, &[][..]),
                };
                variance_probability_next(servers, report, comparisons, rng)
            }
        }
    }
}
