//! The load-balancing application: VIP NAT, sessions, least-traffic routing
//! and link-failure recovery.

mod path;

use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use path::{
    compute_least_traffic_path, disjoint_pair, is_loop_free, least_traffic_path_excluding,
    Exclusions,
};

use crate::flowtable::{Action, FlowEntry, FlowTable, MatchKey, Packet, Protocol};
use crate::scheduling::{
    record_completion, Scheduler, SchedulerKind, SchedulingError, ServerId, ServerState,
};
use crate::simnet::log::{EventLog, LogKind};
use crate::simnet::topology::{LinkId, NodeId, NodeKind, Topology};
use crate::stats::{Group, SampleGroups};
use crate::time::SimTime;

pub const SESSION_PRIORITY: u16 = 100;
pub const DROP_PRIORITY: u16 = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("no alive server available")]
    NoAliveServer,
    #[error("packet to {dst}:{port} matches neither the VIP nor a session")]
    UnknownDestination { dst: Ipv4Addr, port: u16 },
    #[error("packet from unknown client {0}")]
    UnknownClient(Ipv4Addr),
    #[error("no path from {from} to {to}")]
    Disconnected { from: String, to: String },
    #[error("no link-disjoint path pair from {from} to {to}")]
    NoDisjointPath { from: String, to: String },
    #[error("invalid controller config: {0}")]
    Config(String),
    #[error(transparent)]
    Scheduling(#[from] SchedulingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMode {
    Restoration,
    DedicatedProtection,
    OnTheFlyProtection,
}

impl RecoveryMode {
    pub fn is_protection(self) -> bool {
        self != RecoveryMode::Restoration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub id: ServerId,
    pub addr: Ipv4Addr,
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualServerConfig {
    pub vip: Ipv4Addr,
    pub vip_port: u16,
    pub members: Vec<Member>,
    pub scheduler: SchedulerKind,
    pub session_timeout: SimTime,
    pub monitor_interval: SimTime,
    pub window: usize,
}

impl VirtualServerConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.members.is_empty() {
            errs.push("virtual server needs at least one member".to_string());
        }
        for m in &self.members {
            if m.addr == self.vip {
                errs.push(format!("member {} uses the VIP address {}", m.id, self.vip));
            }
            if self.members.iter().filter(|o| o.id == m.id).count() > 1 {
                errs.push(format!("duplicate member id {}", m.id));
            }
        }
        if self.window < 2 {
            errs.push(format!(
                "window must hold at least 2 samples, got {}",
                self.window
            ));
        }
        if self.monitor_interval == SimTime::ZERO {
            errs.push("monitor_interval must be > 0".to_string());
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub vserver: VirtualServerConfig,
    pub f_alpha: f64,
    pub recovery: RecoveryMode,
    pub detection_delay: SimTime,
    /// Rule programming time per switch.
    pub install_latency: SimTime,
    /// Path computation time charged to restoration.
    pub path_compute: SimTime,
    pub drop_rule_timeout: SimTime,
    /// Send new flows from a client address to the server already holding
    /// one of its live sessions.
    pub client_affinity: bool,
}

impl ControllerConfig {
    pub fn new(vserver: VirtualServerConfig) -> Self {
        Self {
            vserver,
            f_alpha: 0.05,
            recovery: RecoveryMode::Restoration,
            detection_delay: SimTime::from_millis(50),
            install_latency: SimTime::from_millis(2),
            path_compute: SimTime::from_millis(1),
            drop_rule_timeout: SimTime::from_secs(1),
            client_affinity: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct SessionKey {
    pub client_addr: Ipv4Addr,
    pub client_port: u16,
    pub vip: Ipv4Addr,
    pub vip_port: u16,
    pub protocol: Protocol,
}

impl SessionKey {
    pub fn of(pkt: &Packet) -> Self {
        Self {
            client_addr: pkt.src_addr,
            client_port: pkt.src_port,
            vip: pkt.dst_addr,
            vip_port: pkt.dst_port,
            protocol: pkt.protocol,
        }
    }
}

/// Core route between the client-side and server-side switches.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathPair {
    pub working_path: Vec<LinkId>,
    pub recovery_path: Vec<LinkId>,
    pub mode: RecoveryMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Session {
    pub id: u64,
    pub key: SessionKey,
    pub client_addr: Ipv4Addr,
    pub server_id: ServerId,
    pub vip: Ipv4Addr,
    pub created: SimTime,
    pub last_active: SimTime,
    pub bytes_transferred: u64,
    pub request: usize,
    pub paths: PathPair,
    pub client_node: NodeId,
    pub server_node: NodeId,
    pub ingress: NodeId,
    pub egress: NodeId,
    client_link: LinkId,
    server_link: LinkId,
    server_addr: Ipv4Addr,
    /// Switches currently holding this session's rules.
    switches: Vec<NodeId>,
    pending_batch: Option<usize>,
}

impl Session {
    fn full_route(&self, core: &[LinkId]) -> Vec<LinkId> {
        let mut r = Vec::with_capacity(core.len() + 2);
        r.push(self.client_link);
        r.extend_from_slice(core);
        r.push(self.server_link);
        r
    }

    /// Whether both paths carry traffic (1+1).
    fn duplicated(&self) -> bool {
        self.paths.mode == RecoveryMode::DedicatedProtection && !self.paths.recovery_path.is_empty()
    }

    pub fn switches(&self) -> &[NodeId] {
        &self.switches
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RuleOp {
    Install {
        switch: NodeId,
        entry: FlowEntry,
    },
    RemoveCookie {
        switch: NodeId,
        cookie: u64,
        reason: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    /// Rules are in place; the switch re-runs its lookup on the packet.
    Resubmit,
    Drop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PacketInOutcome {
    pub ops: Vec<RuleOp>,
    pub decision: Decision,
    pub session: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
struct RuleBatch {
    session: u64,
    link: LinkId,
    failed_at: SimTime,
    paths: PathPair,
    switches: Vec<NodeId>,
    ops: Vec<RuleOp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Outage {
    pub session: u64,
    pub link: LinkId,
    pub mode: RecoveryMode,
    pub failed_at: SimTime,
    pub restored_at: SimTime,
}

impl Outage {
    pub fn duration(&self) -> SimTime {
        self.restored_at.saturating_sub(self.failed_at)
    }
}

#[derive(Debug, Default)]
pub struct FailureOutcome {
    /// (time the rules take effect, batch id) pairs to schedule.
    pub scheduled: Vec<(SimTime, usize)>,
    pub destroyed: Vec<Session>,
    pub ops: Vec<RuleOp>,
}

#[derive(Debug, Clone)]
pub struct MonitorOutcome {
    pub window_bytes: Vec<u64>,
    pub groups: Option<SampleGroups>,
    pub f_value: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SourceStats {
    pub requests: u64,
    pub bytes: u64,
}

#[derive(Debug)]
pub struct Controller {
    cfg: ControllerConfig,
    servers: Vec<ServerState>,
    server_nodes: Vec<NodeId>,
    server_links: Vec<LinkId>,
    last_port_bytes: Vec<u64>,
    scheduler: Scheduler,
    sessions: BTreeMap<u64, Session>,
    by_key: HashMap<SessionKey, u64>,
    pinned: HashMap<SessionKey, ServerId>,
    next_session: u64,
    pending: Vec<Option<RuleBatch>>,
    outages: Vec<Outage>,
    per_source: BTreeMap<Ipv4Addr, SourceStats>,
}

impl Controller {
    pub fn new(cfg: ControllerConfig, topo: &Topology) -> Result<Self, ControllerError> {
        let mut errs = cfg.vserver.validate();
        if !(cfg.f_alpha > 0.0 && cfg.f_alpha < 1.0) {
            errs.push(format!("f_alpha must be in (0, 1), got {}", cfg.f_alpha));
        }
        let mut server_nodes = Vec::new();
        let mut server_links = Vec::new();
        for m in &cfg.vserver.members {
            match topo.node_by_addr(m.addr) {
                Some(n) if topo.node(n).kind == NodeKind::Server => match topo.attachment(n) {
                    Some((l, _)) => {
                        server_nodes.push(n);
                        server_links.push(l);
                    }
                    None => errs.push(format!("server {} is not attached to a switch", m.addr)),
                },
                _ => errs.push(format!("member {} has no server node at {}", m.id, m.addr)),
            }
        }
        if topo.node_by_addr(cfg.vserver.vip).is_some() {
            errs.push(format!(
                "VIP {} collides with a node address",
                cfg.vserver.vip
            ));
        }
        if !errs.is_empty() {
            return Err(ControllerError::Config(errs.join("; ")));
        }
        let servers = cfg
            .vserver
            .members
            .iter()
            .map(|m| ServerState::new(m.id, m.addr, m.port, cfg.vserver.window))
            .collect::<Vec<_>>();
        let last_port_bytes = server_links
            .iter()
            .map(|&l| topo.link(l).total_bytes)
            .collect();
        Ok(Self {
            scheduler: Scheduler::new(cfg.vserver.scheduler, cfg.f_alpha),
            cfg,
            servers,
            server_nodes,
            server_links,
            last_port_bytes,
            sessions: BTreeMap::new(),
            by_key: HashMap::new(),
            pinned: HashMap::new(),
            next_session: 1,
            pending: Vec::new(),
            outages: Vec::new(),
            per_source: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn servers(&self) -> &[ServerState] {
        &self.servers
    }

    pub fn server_node(&self, idx: usize) -> NodeId {
        self.server_nodes[idx]
    }

    pub fn server_index(&self, id: ServerId) -> Option<usize> {
        self.servers.iter().position(|s| s.id == id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values()
    }

    pub fn session(&self, id: u64) -> Option<&Session> {
        self.sessions.get(&id)
    }

    pub fn live_sessions(&self) -> usize {
        self.sessions.len()
    }

    pub fn active_sum(&self) -> u64 {
        self.servers
            .iter()
            .map(|s| u64::from(s.active_sessions))
            .sum()
    }

    pub fn outages(&self) -> &[Outage] {
        &self.outages
    }

    pub fn per_source(&self) -> &BTreeMap<Ipv4Addr, SourceStats> {
        &self.per_source
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    /// Binds a future flow to a server ahead of its packet-in.
    pub fn pin(&mut self, key: SessionKey, server: ServerId) {
        self.pinned.insert(key, server);
    }

    pub fn handle_packet_in<R: Rng + ?Sized>(
        &mut self,
        pkt: &Packet,
        switch: NodeId,
        now: SimTime,
        topo: &Topology,
        rng: &mut R,
        log: &mut EventLog,
    ) -> Result<PacketInOutcome, ControllerError> {
        log.push(
            now,
            LogKind::PacketIn {
                switch,
                src: pkt.src_addr,
                src_port: pkt.src_port,
                dst: pkt.dst_addr,
                dst_port: pkt.dst_port,
            },
        );
        let vip = self.cfg.vserver.vip;
        if pkt.dst_addr != vip || pkt.dst_port != self.cfg.vserver.vip_port {
            return Err(ControllerError::UnknownDestination {
                dst: pkt.dst_addr,
                port: pkt.dst_port,
            });
        }
        let key = SessionKey::of(pkt);
        if let Some(&id) = self.by_key.get(&key) {
            let s = self.sessions.get_mut(&id).expect("indexed session exists");
            s.last_active = now;
            return Ok(PacketInOutcome {
                ops: Vec::new(),
                decision: Decision::Resubmit,
                session: Some(id),
            });
        }
        let client_node = topo
            .node_by_addr(pkt.src_addr)
            .filter(|&n| topo.node(n).kind == NodeKind::Host)
            .ok_or(ControllerError::UnknownClient(pkt.src_addr))?;
        let (client_link, ingress) = topo
            .attachment(client_node)
            .ok_or(ControllerError::UnknownClient(pkt.src_addr))?;

        let pinned = self.pinned.remove(&key).filter(|id| {
            self.server_index(*id)
                .is_some_and(|i| self.servers[i].alive)
        });
        let affine = if pinned.is_none() && self.cfg.client_affinity {
            self.sessions
                .values()
                .rev()
                .find(|s| s.client_addr == pkt.src_addr)
                .map(|s| s.server_id)
                .filter(|id| {
                    self.server_index(*id)
                        .is_some_and(|i| self.servers[i].alive)
                })
        } else {
            None
        };
        let decision = match pinned.or(affine) {
            Some(id) => Ok(crate::scheduling::ScheduleDecision {
                chosen: id,
                weights: None,
                trigger: crate::scheduling::Trigger::Default,
            }),
            None => self.scheduler.select(&self.servers, rng),
        };
        let decision = match decision {
            Ok(d) => d,
            Err(SchedulingError::NoAliveServer) => {
                return Ok(self.drop_flow(pkt, switch, now));
            }
            Err(e) => return Err(e.into()),
        };
        let idx = self
            .server_index(decision.chosen)
            .expect("scheduler returns members");
        let server_node = self.server_nodes[idx];
        let server_link = self.server_links[idx];
        let egress = topo.link(server_link).other(server_node);

        let (paths, protected) = match self.provision(topo, ingress, egress) {
            Ok(p) => p,
            Err(ControllerError::Disconnected { .. }) => {
                return Ok(self.drop_flow(pkt, switch, now))
            }
            Err(e) => return Err(e),
        };

        let id = self.next_session;
        self.next_session += 1;
        let mut session = Session {
            id,
            key,
            client_addr: pkt.src_addr,
            server_id: decision.chosen,
            vip,
            created: now,
            last_active: now,
            bytes_transferred: 0,
            request: pkt.flow_id as usize,
            paths,
            client_node,
            server_node,
            ingress,
            egress,
            client_link,
            server_link,
            server_addr: self.servers[idx].address,
            switches: Vec::new(),
            pending_batch: None,
        };
        let (ops, switches) = session_rules(topo, &session, now);
        session.switches = switches;

        log.push(
            now,
            LogKind::Schedule {
                session: id,
                server: decision.chosen,
                trigger: decision.trigger,
                weights: decision.weights,
                pinned: pinned.is_some(),
            },
        );
        log.push(
            now,
            LogKind::SessionCreate {
                session: id,
                request: session.request,
                client: pkt.src_addr,
                client_port: pkt.src_port,
                server: decision.chosen,
                working_path: session.paths.working_path.clone(),
                recovery_path: session.paths.recovery_path.clone(),
                protected,
            },
        );
        self.servers[idx].active_sessions += 1;
        let src = self.per_source.entry(pkt.src_addr).or_default();
        src.requests += 1;
        src.bytes += u64::from(pkt.size);
        self.by_key.insert(key, id);
        self.sessions.insert(id, session);
        Ok(PacketInOutcome {
            ops,
            decision: Decision::Resubmit,
            session: Some(id),
        })
    }

    fn drop_flow(&self, pkt: &Packet, switch: NodeId, now: SimTime) -> PacketInOutcome {
        let m = MatchKey {
            src_addr: Some(pkt.src_addr),
            dst_addr: Some(pkt.dst_addr),
            src_port: Some(pkt.src_port),
            dst_port: Some(pkt.dst_port),
            protocol: pkt.protocol,
        };
        let entry = FlowEntry::new(m, DROP_PRIORITY, vec![Action::Drop], now)
            .with_idle_timeout(self.cfg.drop_rule_timeout);
        PacketInOutcome {
            ops: vec![RuleOp::Install { switch, entry }],
            decision: Decision::Drop,
            session: None,
        }
    }

    /// Paths for a new session. Protection modes fall back to an unprotected
    /// working path when no disjoint pair exists; the flag reports which.
    fn provision(
        &self,
        topo: &Topology,
        ingress: NodeId,
        egress: NodeId,
    ) -> Result<(PathPair, bool), ControllerError> {
        let mode = self.cfg.recovery;
        let window = self.cfg.vserver.monitor_interval;
        if mode.is_protection() && ingress != egress {
            if let Ok(pair) = provision_protection(topo, ingress, egress, mode, window) {
                return Ok((pair, true));
            }
        }
        let wp = compute_least_traffic_path(topo, ingress, egress, window)?;
        Ok((
            PathPair {
                working_path: wp,
                recovery_path: Vec::new(),
                mode,
            },
            false,
        ))
    }

    /// Normal close by the client after its response completed.
    pub fn close_session(&mut self, id: u64, now: SimTime, log: &mut EventLog) -> Vec<RuleOp> {
        match self.remove_session(id) {
            Some(s) => {
                log.push(
                    now,
                    LogKind::SessionClose {
                        session: id,
                        server: s.server_id,
                    },
                );
                removal_ops(&s, "session_close")
            }
            None => Vec::new(),
        }
    }

    fn remove_session(&mut self, id: u64) -> Option<Session> {
        let s = self.sessions.remove(&id)?;
        self.by_key.remove(&s.key);
        if let Some(b) = s.pending_batch {
            self.pending[b] = None;
        }
        let idx = self
            .server_index(s.server_id)
            .expect("session server is a member");
        // active_sessions counts exactly the live sessions bound to the server
        record_completion(&mut self.servers[idx]).expect("live session implies a count");
        Some(s)
    }

    fn destroy(
        &mut self,
        id: u64,
        reason: &'static str,
        now: SimTime,
        log: &mut EventLog,
    ) -> Option<(Session, Vec<RuleOp>)> {
        let s = self.remove_session(id)?;
        log.push(
            now,
            LogKind::SessionDestroy {
                session: id,
                server: s.server_id,
                reason: reason.to_string(),
                idle_ns: now.saturating_sub(s.last_active).as_nanos(),
            },
        );
        let ops = removal_ops(&s, reason);
        Some((s, ops))
    }

    /// Destroys sessions idle for longer than the session timeout. Activity
    /// is refreshed from the last hit of the session's flow entries first.
    pub fn reap_sessions(
        &mut self,
        now: SimTime,
        tables: &[FlowTable],
        log: &mut EventLog,
    ) -> (Vec<Session>, Vec<RuleOp>) {
        let timeout = self.cfg.vserver.session_timeout;
        let mut expired = Vec::new();
        for s in self.sessions.values_mut() {
            let mut bytes = 0;
            for &sw in &s.switches {
                for e in tables[sw.0 as usize]
                    .entries()
                    .iter()
                    .filter(|e| e.cookie == s.id)
                {
                    s.last_active = s.last_active.max(e.last_hit);
                    if e.actions
                        .iter()
                        .any(|a| matches!(a, Action::RewriteDst(_) | Action::RewriteSrc(_)))
                    {
                        bytes += e.bytes;
                    }
                }
            }
            s.bytes_transferred = s.bytes_transferred.max(bytes);
            if now.saturating_sub(s.last_active) > timeout {
                expired.push(s.id);
            }
        }
        let mut destroyed = Vec::new();
        let mut ops = Vec::new();
        for id in expired {
            if let Some((s, o)) = self.destroy(id, "idle", now, log) {
                destroyed.push(s);
                ops.extend(o);
            }
        }
        (destroyed, ops)
    }

    /// Samples every server-facing port, updates the load windows and runs
    /// the scheduler's load analysis.
    pub fn monitor_tick(&mut self, topo: &Topology) -> Result<MonitorOutcome, ControllerError> {
        let mut window_bytes = Vec::with_capacity(self.servers.len());
        for (i, s) in self.servers.iter_mut().enumerate() {
            let total = topo.link(self.server_links[i]).total_bytes;
            let delta = total - self.last_port_bytes[i];
            self.last_port_bytes[i] = total;
            s.load_window.push(delta as f64);
            window_bytes.push(delta);
        }
        let groups = SampleGroups::new(
            self.servers
                .iter()
                .map(|s| Group::new(s.id.0, s.load_window.samples().collect()))
                .collect(),
        )
        .ok();
        let f_value = self
            .scheduler
            .observe(&self.servers)?
            .map(|a| a.report.f_value);
        Ok(MonitorOutcome {
            window_bytes,
            groups,
            f_value,
        })
    }

    /// Marks servers reachable or not from the state of their access links.
    pub fn refresh_server_liveness(&mut self, topo: &Topology) {
        for (s, &l) in self.servers.iter_mut().zip(&self.server_links) {
            s.alive = topo.link(l).alive;
        }
    }

    /// Reacts to a failure notification. Rule changes are returned as
    /// batches that take effect later; sessions with no surviving path are
    /// destroyed immediately.
    pub fn handle_link_failure(
        &mut self,
        link: LinkId,
        failed_at: SimTime,
        now: SimTime,
        topo: &Topology,
        log: &mut EventLog,
    ) -> FailureOutcome {
        self.refresh_server_liveness(topo);
        let window = self.cfg.vserver.monitor_interval;
        let mut out = FailureOutcome::default();
        let affected: Vec<u64> = self
            .sessions
            .values()
            .filter(|s| {
                let mut uses = s.full_route(&s.paths.working_path).contains(&link);
                if s.duplicated() {
                    uses |= s.full_route(&s.paths.recovery_path).contains(&link);
                }
                uses
            })
            .map(|s| s.id)
            .collect();
        log.push(
            now,
            LogKind::FailureDetected {
                link,
                failed_at_ns: failed_at.as_nanos(),
                affected_sessions: affected.len(),
            },
        );
        let route_alive =
            |s: &Session, core: &[LinkId]| s.full_route(core).iter().all(|&l| topo.link(l).alive);

        for id in affected {
            let s = &self.sessions[&id];
            let mode = s.paths.mode;
            let wp_ok = route_alive(s, &s.paths.working_path);
            let rp_ok = !s.paths.recovery_path.is_empty() && route_alive(s, &s.paths.recovery_path);

            if s.duplicated() && (wp_ok || rp_ok) {
                // 1+1: the surviving copy keeps flowing, nothing to program
                if !wp_ok {
                    let s = self.sessions.get_mut(&id).expect("affected session");
                    std::mem::swap(&mut s.paths.working_path, &mut s.paths.recovery_path);
                    let o = Outage {
                        session: id,
                        link,
                        mode,
                        failed_at,
                        restored_at: failed_at,
                    };
                    log_restored(log, now, &o, &s.paths.working_path);
                    self.outages.push(o);
                }
                continue;
            }
            if wp_ok && !s.duplicated() {
                // only the stored recovery path broke
                continue;
            }

            let (core, delay) = if mode == RecoveryMode::OnTheFlyProtection && rp_ok {
                (Ok(s.paths.recovery_path.clone()), SimTime::ZERO)
            } else {
                (
                    compute_least_traffic_path(topo, s.ingress, s.egress, window),
                    self.cfg.path_compute,
                )
            };
            let core = match core {
                Ok(c) if route_alive(s, &c) => c,
                _ => {
                    log.push(now, LogKind::Unrecoverable { session: id, link });
                    if let Some((s, ops)) = self.destroy(id, "unrecoverable", now, log) {
                        out.destroyed.push(s);
                        out.ops.extend(ops);
                    }
                    continue;
                }
            };
            let mut next = s.clone();
            next.paths = PathPair {
                working_path: core,
                recovery_path: Vec::new(),
                mode,
            };
            let (install, switches) = session_rules(topo, &next, now);
            let mut ops = removal_ops(s, "reroute");
            ops.extend(install);
            let effective = now + delay + self.cfg.install_latency * switches.len() as u64;
            let batch = RuleBatch {
                session: id,
                link,
                failed_at,
                paths: next.paths,
                switches,
                ops,
            };
            let b = self.pending.len();
            self.pending.push(Some(batch));
            let s = self.sessions.get_mut(&id).expect("affected session");
            if let Some(old) = s.pending_batch.replace(b) {
                self.pending[old] = None;
            }
            out.scheduled.push((effective, b));
        }
        out
    }

    /// Applies a scheduled reroute if its session is still live. Returns the
    /// rule operations to execute atomically.
    pub fn complete_batch(
        &mut self,
        batch: usize,
        now: SimTime,
        log: &mut EventLog,
    ) -> Option<Vec<RuleOp>> {
        let b = self.pending.get_mut(batch)?.take()?;
        let s = self.sessions.get_mut(&b.session)?;
        if s.pending_batch != Some(batch) {
            return None;
        }
        s.pending_batch = None;
        s.paths = b.paths;
        s.switches = b.switches;
        let o = Outage {
            session: b.session,
            link: b.link,
            mode: s.paths.mode,
            failed_at: b.failed_at,
            restored_at: now,
        };
        log_restored(log, now, &o, &s.paths.working_path);
        self.outages.push(o);
        Some(b.ops)
    }
}

fn log_restored(log: &mut EventLog, now: SimTime, o: &Outage, path: &[LinkId]) {
    log.push(
        now,
        LogKind::PathRestored {
            session: o.session,
            link: o.link,
            mode: o.mode,
            failed_at_ns: o.failed_at.as_nanos(),
            outage_ns: o.duration().as_nanos(),
            new_path: path.to_vec(),
        },
    );
}

fn removal_ops(s: &Session, reason: &'static str) -> Vec<RuleOp> {
    s.switches
        .iter()
        .map(|&switch| RuleOp::RemoveCookie {
            switch,
            cookie: s.id,
            reason,
        })
        .collect()
}

/// Working and recovery paths for a protection mode. Restoration returns
/// the working path with an empty recovery path.
pub fn provision_protection(
    topo: &Topology,
    ingress: NodeId,
    egress: NodeId,
    mode: RecoveryMode,
    window: SimTime,
) -> Result<PathPair, ControllerError> {
    if mode == RecoveryMode::Restoration {
        return Ok(PathPair {
            working_path: compute_least_traffic_path(topo, ingress, egress, window)?,
            recovery_path: Vec::new(),
            mode,
        });
    }
    let (wp, rp) = disjoint_pair(topo, ingress, egress, window)?;
    Ok(PathPair {
        working_path: wp,
        recovery_path: rp,
        mode,
    })
}

/// NAT and forwarding entries for a session, plus the switches touched.
///
/// The client-side switch rewrites the destination to the real server and
/// the server-side switch rewrites the source back to the VIP; switches in
/// between only forward. Under 1+1 the two edge switches send on both
/// paths.
fn session_rules(topo: &Topology, s: &Session, now: SimTime) -> (Vec<RuleOp>, Vec<NodeId>) {
    let fwd_match = MatchKey {
        src_addr: Some(s.client_addr),
        dst_addr: None,
        src_port: Some(s.key.client_port),
        dst_port: None,
        protocol: s.key.protocol,
    };
    let rev_match = MatchKey {
        src_addr: None,
        dst_addr: Some(s.client_addr),
        src_port: None,
        dst_port: Some(s.key.client_port),
        protocol: s.key.protocol,
    };
    let entry = |actions: Vec<Action>, m: MatchKey| {
        FlowEntry::new(m, SESSION_PRIORITY, actions, now).with_cookie(s.id)
    };

    let w = s.full_route(&s.paths.working_path);
    let r = s.duplicated().then(|| s.full_route(&s.paths.recovery_path));
    let mut ops = Vec::new();
    let mut switches = Vec::new();

    let w_nodes = topo.path_nodes(s.client_node, &w);
    let last = w_nodes.len() - 2;
    for i in 1..=last {
        let sw = w_nodes[i];
        let mut fwd = Vec::new();
        if i == 1 {
            fwd.push(Action::RewriteDst(s.server_addr));
        }
        fwd.push(Action::Forward(w[i].port()));
        if let (1, Some(r)) = (i, &r) {
            fwd.push(Action::Forward(r[1].port()));
        }
        let mut rev = Vec::new();
        if i == last {
            rev.push(Action::RewriteSrc(s.vip));
        }
        rev.push(Action::Forward(w[i - 1].port()));
        if let Some(r) = &r {
            if i == last {
                rev.push(Action::Forward(r[r.len() - 2].port()));
            }
        }
        ops.push(RuleOp::Install {
            switch: sw,
            entry: entry(fwd, fwd_match),
        });
        ops.push(RuleOp::Install {
            switch: sw,
            entry: entry(rev, rev_match),
        });
        switches.push(sw);
    }
    if let Some(r) = &r {
        let r_nodes = topo.path_nodes(s.client_node, r);
        for i in 2..r_nodes.len() - 2 {
            let sw = r_nodes[i];
            ops.push(RuleOp::Install {
                switch: sw,
                entry: entry(vec![Action::Forward(r[i].port())], fwd_match),
            });
            ops.push(RuleOp::Install {
                switch: sw,
                entry: entry(vec![Action::Forward(r[i - 1].port())], rev_match),
            });
            switches.push(sw);
        }
    }
    (ops, switches)
}
