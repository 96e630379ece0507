//! Scenario files: a TOML document describing topology, workload, virtual
//! server, recovery settings and failure schedule.

use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::controller::{ControllerConfig, Member, RecoveryMode, VirtualServerConfig};
use crate::scheduling::{SchedulerKind, ServerId};
use crate::simnet::topology::{LinkParams, NodeKind, Topology};
use crate::simnet::workload::{
    ArrivalProcess, ServiceTime, SizeDistribution, WarmStart, WorkloadSpec,
};
use crate::simnet::{FailureAction, FailureEntry, SimConfig};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub topology: TopologySection,
    pub workload: WorkloadSpec,
    pub vserver: VServerSection,
    #[serde(default)]
    pub recovery: RecoverySection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FailureSection>,
    #[serde(default)]
    pub trace_packets: bool,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySection {
    /// Three switches in a triangle, servers on one edge switch and clients
    /// on the other.
    Testbed {
        clients: usize,
        servers: usize,
        core_capacity: f64,
        access_capacity: f64,
        propagation_us: u64,
    },
    Custom {
        nodes: Vec<NodeSection>,
        links: Vec<LinkSection>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    pub name: String,
    pub kind: NodeKind,
    #[serde(default)]
    pub addr: Option<Ipv4Addr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSection {
    pub name: String,
    pub a: String,
    pub b: String,
    pub capacity: f64,
    #[serde(default)]
    pub propagation_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VServerSection {
    pub vip: Ipv4Addr,
    pub vip_port: u16,
    pub scheduler: String,
    pub session_timeout_s: f64,
    pub monitor_interval_s: f64,
    pub window: usize,
    pub f_alpha: f64,
    #[serde(default = "one")]
    pub reap_interval_s: f64,
    #[serde(default)]
    pub client_affinity: bool,
    /// Server node names; all servers in topology order when omitted.
    #[serde(default)]
    pub members: Option<Vec<String>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverySection {
    pub mode: RecoveryMode,
    pub detection_delay_ms: f64,
    pub install_latency_ms: f64,
    pub path_compute_ms: f64,
    pub drop_rule_timeout_s: f64,
}

impl Default for RecoverySection {
    fn default() -> Self {
        Self {
            mode: RecoveryMode::Restoration,
            detection_delay_ms: 50.0,
            install_latency_ms: 2.0,
            path_compute_ms: 1.0,
            drop_rule_timeout_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureSection {
    pub at_s: f64,
    pub link: String,
    pub action: FailureAction,
}

impl ScenarioFile {
    /// The testbed comparison: 4 servers behind 3 switches, heavy-tailed
    /// service times with a 5 s mean at about 70% of nominal capacity.
    pub fn testbed() -> Self {
        let servers = 4;
        // 70% of a nominal 8 concurrent sessions per server at 5 s each
        let rate = 4.48;
        ScenarioFile {
            name: "testbed".into(),
            seeds: (1..=20).collect(),
            out_dir: default_out_dir(),
            topology: TopologySection::Testbed {
                clients: 8,
                servers,
                core_capacity: 125_000_000.0,
                access_capacity: 125_000_000.0,
                propagation_us: 50,
            },
            workload: WorkloadSpec {
                arrival: ArrivalProcess::Poisson { rate },
                service: ServiceTime::pareto_with_mean(1.5, 5.0),
                request_size: SizeDistribution::Uniform {
                    min: 200,
                    max: 1800,
                },
                duration_s: 600.0,
                seed: 1,
                silent_fraction: 0.0,
                chunk_interval_s: 1.0,
                warm_start: Some(WarmStart {
                    server: 0,
                    sessions: 12,
                    drain_s: 200.0,
                }),
            },
            vserver: VServerSection {
                vip: Ipv4Addr::new(10, 0, 0, 100),
                vip_port: 80,
                scheduler: SchedulerKind::Variance.name().into(),
                session_timeout_s: 60.0,
                monitor_interval_s: 1.0,
                window: 30,
                f_alpha: 0.05,
                reap_interval_s: 1.0,
                client_affinity: false,
                members: None,
            },
            recovery: RecoverySection::default(),
            failures: Vec::new(),
            trace_packets: false,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))
    }

    /// Checks every field and resolves names, reporting all problems found.
    pub fn resolve(&self) -> Result<ScenarioConfig, HarnessError> {
        let mut errs = Vec::new();

        let topology = match &self.topology {
            TopologySection::Testbed {
                clients,
                servers,
                core_capacity,
                access_capacity,
                propagation_us,
            } => {
                if *clients == 0 || *clients > 250 * 250 {
                    errs.push(format!(
                        "topology.clients must be in 1..=62500, got {clients}"
                    ));
                }
                if *servers == 0 || *servers > 99 {
                    errs.push(format!("topology.servers must be in 1..=99, got {servers}"));
                }
                Topology::testbed(
                    (*clients).min(62_500),
                    (*servers).min(99),
                    &LinkParams {
                        core_capacity: *core_capacity,
                        access_capacity: *access_capacity,
                        propagation: SimTime::from_nanos(propagation_us * 1_000),
                    },
                )
            }
            TopologySection::Custom { nodes, links } => {
                let mut t = Topology::new();
                for n in nodes {
                    t.add_node(&n.name, n.kind, n.addr);
                }
                for l in links {
                    match (t.node_by_name(&l.a), t.node_by_name(&l.b)) {
                        (Some(a), Some(b)) => {
                            t.add_link(
                                &l.name,
                                a,
                                b,
                                l.capacity,
                                SimTime::from_nanos(l.propagation_us * 1_000),
                            );
                        }
                        _ => errs.push(format!(
                            "topology.links '{}': endpoints '{}'/'{}' must name nodes",
                            l.name, l.a, l.b
                        )),
                    }
                }
                t
            }
        };
        if let Err(e) = topology.validate() {
            errs.extend(e.into_iter().map(|e| format!("topology: {e}")));
        }

        let vs = &self.vserver;
        let scheduler = match SchedulerKind::from_str(&vs.scheduler) {
            Ok(k) => k,
            Err(e) => {
                errs.push(format!("vserver.scheduler: {e}"));
                SchedulerKind::RoundRobin
            }
        };
        if !(vs.f_alpha > 0.0 && vs.f_alpha < 1.0) {
            errs.push(format!(
                "vserver.f_alpha must be in (0, 1), got {}",
                vs.f_alpha
            ));
        }
        for (name, v) in [
            ("session_timeout_s", vs.session_timeout_s),
            ("monitor_interval_s", vs.monitor_interval_s),
            ("reap_interval_s", vs.reap_interval_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("vserver.{name} must be > 0, got {v}"));
            }
        }

        let server_nodes: Vec<_> = match &vs.members {
            None => topology.nodes_of(NodeKind::Server).collect(),
            Some(names) => names
                .iter()
                .filter_map(|n| {
                    let node = topology
                        .node_by_name(n)
                        .map(|id| topology.node(id))
                        .filter(|node| node.kind == NodeKind::Server);
                    if node.is_none() {
                        errs.push(format!("vserver.members: '{n}' is not a server node"));
                    }
                    node
                })
                .collect(),
        };
        let members: Vec<Member> = server_nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| {
                n.addr.map(|addr| Member {
                    id: ServerId(i as u32 + 1),
                    addr,
                    port: vs.vip_port,
                })
            })
            .collect();
        let vserver = VirtualServerConfig {
            vip: vs.vip,
            vip_port: vs.vip_port,
            members,
            scheduler,
            session_timeout: SimTime::from_secs_f64(vs.session_timeout_s),
            monitor_interval: SimTime::from_secs_f64(vs.monitor_interval_s),
            window: vs.window,
        };
        errs.extend(
            vserver
                .validate()
                .into_iter()
                .map(|e| format!("vserver: {e}")),
        );
        if topology.node_by_addr(vs.vip).is_some() {
            errs.push(format!(
                "vserver.vip {} collides with a node address",
                vs.vip
            ));
        }

        errs.extend(
            self.workload
                .validate(vserver.members.len())
                .into_iter()
                .map(|e| e.to_string()),
        );

        let r = &self.recovery;
        for (name, v) in [
            ("detection_delay_ms", r.detection_delay_ms),
            ("install_latency_ms", r.install_latency_ms),
            ("path_compute_ms", r.path_compute_ms),
            ("drop_rule_timeout_s", r.drop_rule_timeout_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("recovery.{name} must be >= 0, got {v}"));
            }
        }
        let mut controller = ControllerConfig::new(vserver);
        controller.f_alpha = vs.f_alpha;
        controller.recovery = r.mode;
        controller.detection_delay = SimTime::from_secs_f64(r.detection_delay_ms / 1e3);
        controller.install_latency = SimTime::from_secs_f64(r.install_latency_ms / 1e3);
        controller.path_compute = SimTime::from_secs_f64(r.path_compute_ms / 1e3);
        controller.drop_rule_timeout = SimTime::from_secs_f64(r.drop_rule_timeout_s);
        controller.client_affinity = vs.client_affinity;

        let mut failures = Vec::new();
        for (i, f) in self.failures.iter().enumerate() {
            if !(f.at_s >= 0.0 && f.at_s.is_finite()) {
                errs.push(format!("failures[{i}].at_s must be >= 0, got {}", f.at_s));
            }
            match topology.link_by_name(&f.link) {
                Some(link) => failures.push(FailureEntry {
                    at: SimTime::from_secs_f64(f.at_s),
                    link,
                    action: f.action,
                }),
                None => errs.push(format!("failures[{i}].link: unknown link '{}'", f.link)),
            }
        }
        if self.seeds.is_empty() {
            errs.push("seeds must list at least one seed".into());
        }

        if !errs.is_empty() {
            return Err(HarnessError::Validation(errs));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        Ok(ScenarioConfig {
            name: self.name.clone(),
            seeds,
            out_dir: self.out_dir.clone(),
            topology,
            workload: self.workload.clone(),
            controller,
            failures,
            reap_interval: SimTime::from_secs_f64(vs.reap_interval_s),
            trace_packets: self.trace_packets,
        })
    }
}

/// A validated scenario with every name resolved.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub name: String,
    /// Sorted and deduplicated.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub topology: Topology,
    pub workload: WorkloadSpec,
    pub controller: ControllerConfig,
    pub failures: Vec<FailureEntry>,
    pub reap_interval: SimTime,
    pub trace_packets: bool,
}

impl ScenarioConfig {
    pub fn testbed() -> Self {
        ScenarioFile::testbed()
            .resolve()
            .expect("shipped default scenario is valid")
    }

    pub fn scheduler(&self) -> SchedulerKind {
        self.controller.vserver.scheduler
    }

    /// Simulation input for one seed under the given scheduler.
    pub fn sim_config(&self, seed: u64, scheduler: SchedulerKind) -> SimConfig {
        let mut controller = self.controller.clone();
        controller.vserver.scheduler = scheduler;
        let mut workload = self.workload.clone();
        workload.seed = seed;
        SimConfig {
            topology: self.topology.clone(),
            workload,
            controller,
            failures: self.failures.clone(),
            reap_interval: self.reap_interval,
            trace_packets: self.trace_packets,
        }
    }
}

/// Reads, parses and validates a scenario file.
pub fn validate_config(path: &Path) -> Result<ScenarioConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        reason: source.to_string(),
    })?;
    ScenarioFile::from_toml(&text)?.resolve()
}
