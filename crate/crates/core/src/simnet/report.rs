use std::io::{self, Write};
use std::net::Ipv4Addr;

use serde::Serialize;

use super::log::EventLog;
use super::topology::LinkId;
use crate::controller::{Outage, RecoveryMode, SourceStats};
use crate::flowtable::TableDump;
use crate::scheduling::{SchedulerKind, ServerId};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Served { latency: SimTime },
    Lost { reason: String },
    InFlight,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestRecord {
    pub id: usize,
    pub client: Ipv4Addr,
    pub arrival: SimTime,
    pub server: Option<ServerId>,
    pub silent: bool,
    pub outcome: Outcome,
}

/// One server's state at a monitoring tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TickSample {
    pub t: SimTime,
    pub server: ServerId,
    pub active_sessions: u32,
    pub window_bytes: u64,
    /// F statistic of the tick; absent during cold start.
    pub f_value: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FPoint {
    pub t: SimTime,
    pub f_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReapCheck {
    pub t: SimTime,
    pub live_sessions: usize,
    pub active_sum: u64,
    pub forward_nat_rules: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkUsage {
    pub link: LinkId,
    pub name: String,
    pub total_bytes: u64,
    /// Sum of the utilization windows over the run.
    pub window_sum: u64,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub scheduler: SchedulerKind,
    pub recovery: RecoveryMode,
    pub seed: u64,
    pub duration: SimTime,
    pub servers: Vec<ServerId>,
    pub server_addrs: Vec<Ipv4Addr>,
    pub vip: Ipv4Addr,
    pub requests: Vec<RequestRecord>,
    pub samples: Vec<TickSample>,
    pub f_series: Vec<FPoint>,
    pub outages: Vec<Outage>,
    pub reap_checks: Vec<ReapCheck>,
    pub link_usage: Vec<LinkUsage>,
    pub per_source: Vec<(Ipv4Addr, SourceStats)>,
    pub workload_digest: String,
    pub event_order_ok: bool,
    pub tables: Vec<TableDump>,
    pub log: EventLog,
}

impl RunReport {
    pub fn generated(&self) -> usize {
        self.requests.len()
    }

    pub fn served(&self) -> usize {
        self.count(|o| matches!(o, Outcome::Served { .. }))
    }

    pub fn lost(&self) -> usize {
        self.count(|o| matches!(o, Outcome::Lost { .. }))
    }

    pub fn in_flight(&self) -> usize {
        self.count(|o| matches!(o, Outcome::InFlight))
    }

    fn count(&self, f: impl Fn(&Outcome) -> bool) -> usize {
        self.requests.iter().filter(|r| f(&r.outcome)).count()
    }

    /// Latencies of served requests in seconds, ascending.
    pub fn latencies_s(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .requests
            .iter()
            .filter_map(|r| match r.outcome {
                Outcome::Served { latency } => Some(latency.as_secs_f64()),
                _ => None,
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn mean_latency_s(&self) -> f64 {
        mean(&self.latencies_s())
    }

    /// Nearest-rank 99th percentile.
    pub fn p99_latency_s(&self) -> f64 {
        percentile_nearest_rank(&self.latencies_s(), 0.99)
    }

    /// Mean of the F statistic over the ticks where it was computed.
    pub fn time_avg_f(&self) -> f64 {
        mean(&self.f_series.iter().map(|p| p.f_value).collect::<Vec<_>>())
    }

    pub fn final_f(&self) -> Option<f64> {
        self.f_series.last().map(|p| p.f_value)
    }

    /// Mean bytes per monitoring window for each server.
    pub fn mean_load_per_server(&self) -> Vec<(ServerId, f64)> {
        self.servers
            .iter()
            .map(|&id| {
                let v: Vec<f64> = self
                    .samples
                    .iter()
                    .filter(|s| s.server == id)
                    .map(|s| s.window_bytes as f64)
                    .collect();
                (id, mean(&v))
            })
            .collect()
    }

    /// Highest over lowest time-averaged server load. Equal loads (including
    /// all-zero) give 1.
    pub fn peak_trough_ratio(&self) -> f64 {
        peak_trough(
            &self
                .mean_load_per_server()
                .iter()
                .map(|p| p.1)
                .collect::<Vec<_>>(),
        )
    }

    /// Means of the first and last quarter of the F series.
    pub fn f_quartile_means(&self) -> Option<(f64, f64)> {
        let f: Vec<f64> = self.f_series.iter().map(|p| p.f_value).collect();
        let q = f.len() / 4;
        if q == 0 {
            return None;
        }
        Some((mean(&f[..q]), mean(&f[f.len() - q..])))
    }

    /// Writes `t_s,server_id,active_sessions,window_bytes,f_value`.
    pub fn write_timeseries_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "t_s",
            "server_id",
            "active_sessions",
            "window_bytes",
            "f_value",
        ])?;
        for s in &self.samples {
            out.write_record([
                s.t.as_secs_f64().to_string(),
                s.server.0.to_string(),
                s.active_sessions.to_string(),
                s.window_bytes.to_string(),
                s.f_value.map(|f| f.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush()
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub(crate) fn percentile_nearest_rank(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub(crate) fn peak_trough(loads: &[f64]) -> f64 {
    let max = loads.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = loads.iter().copied().fold(f64::INFINITY, f64::min);
    if loads.is_empty() || max == min {
        1.0
    } else if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
