use std::collections::HashSet;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::event::{EventKind, EventQueue};
use super::log::{EventLog, LogKind};
use super::report::{FPoint, LinkUsage, Outcome, ReapCheck, RequestRecord, RunReport, TickSample};
use super::topology::{LinkId, NodeId, NodeKind, Topology};
use super::workload::{
    generate_requests, request_digest, stream_rng, Request, Stream, WorkloadSpec,
};
use super::SimError;
use crate::controller::{Controller, ControllerConfig, Decision, RecoveryMode, RuleOp, SessionKey};
use crate::flowtable::{Action, FlowTable, Lookup, Packet, Protocol};
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureAction {
    Fail,
    Repair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureEntry {
    pub at: SimTime,
    pub link: LinkId,
    pub action: FailureAction,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub topology: Topology,
    pub workload: WorkloadSpec,
    pub controller: ControllerConfig,
    pub failures: Vec<FailureEntry>,
    pub reap_interval: SimTime,
    /// Record every link traversal in the event log.
    pub trace_packets: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let mut errs: Vec<String> = Vec::new();
        if let Err(e) = self.topology.validate() {
            errs.extend(e.into_iter().map(|e| e.to_string()));
        }
        let servers = self.controller.vserver.members.len();
        errs.extend(
            self.workload
                .validate(servers)
                .into_iter()
                .map(|e| e.to_string()),
        );
        if self.topology.nodes_of(NodeKind::Host).next().is_none() {
            errs.push("topology has no client hosts".into());
        }
        if self.reap_interval == SimTime::ZERO {
            errs.push("reap_interval must be > 0".into());
        }
        for f in &self.failures {
            if f.link.0 as usize >= self.topology.links().len() {
                errs.push(SimError::UnknownLink(f.link.to_string()).to_string());
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SimError::Invalid(errs))
        }
    }
}

const FIRST_CLIENT_PORT: u16 = 1024;

fn client_port(request: usize) -> u16 {
    FIRST_CLIENT_PORT + (request % usize::from(u16::MAX - FIRST_CLIENT_PORT)) as u16
}

#[derive(Debug, Clone)]
struct RequestState {
    session: Option<u64>,
    server: Option<usize>,
    started: bool,
    service_end: SimTime,
    next_seq: u32,
    outcome: Outcome,
}

struct Sim {
    topo: Topology,
    tables: Vec<FlowTable>,
    queue: EventQueue,
    log: EventLog,
    ctrl: Controller,
    requests: Vec<Request>,
    state: Vec<RequestState>,
    clients: Vec<NodeId>,
    rng: ChaCha8Rng,
    horizon: SimTime,
    reap_interval: SimTime,
    chunk_interval: SimTime,
    detection_delay: SimTime,
    dedup: Option<HashSet<(NodeId, u64, u32, bool)>>,
    samples: Vec<TickSample>,
    f_series: Vec<FPoint>,
    reap_checks: Vec<ReapCheck>,
    window_sums: Vec<u64>,
    order_ok: bool,
}

/// Runs one scenario to completion (queue empty or the workload duration
/// reached) and returns its report.
pub fn run(cfg: &SimConfig) -> Result<RunReport, SimError> {
    cfg.validate()?;
    let ctrl = Controller::new(cfg.controller.clone(), &cfg.topology)?;
    let clients: Vec<NodeId> = cfg
        .topology
        .nodes_of(NodeKind::Host)
        .map(|n| n.id)
        .collect();
    let requests = generate_requests(&cfg.workload, clients.len());
    let digest = request_digest(&requests);
    let horizon = SimTime::from_secs_f64(cfg.workload.duration_s);
    let state = requests
        .iter()
        .map(|_| RequestState {
            session: None,
            server: None,
            started: false,
            service_end: SimTime::ZERO,
            next_seq: 0,
            outcome: Outcome::InFlight,
        })
        .collect();
    let mut sim = Sim {
        tables: vec![FlowTable::new(); cfg.topology.nodes().len()],
        window_sums: vec![0; cfg.topology.links().len()],
        topo: cfg.topology.clone(),
        queue: EventQueue::new(),
        log: EventLog::new(cfg.trace_packets),
        dedup: (cfg.controller.recovery == RecoveryMode::DedicatedProtection).then(HashSet::new),
        detection_delay: cfg.controller.detection_delay,
        ctrl,
        requests,
        state,
        clients,
        rng: stream_rng(cfg.workload.seed, Stream::Scheduler),
        horizon,
        reap_interval: cfg.reap_interval,
        chunk_interval: SimTime::from_secs_f64(cfg.workload.chunk_interval_s),
        samples: Vec::new(),
        f_series: Vec::new(),
        reap_checks: Vec::new(),
        order_ok: true,
    };
    for (i, r) in sim.requests.iter().enumerate() {
        sim.queue
            .push(r.arrival, EventKind::RequestArrival { request: i });
    }
    for f in &cfg.failures {
        inject_failure(&mut sim.queue, f);
    }
    let monitor = cfg.controller.vserver.monitor_interval;
    if monitor <= horizon {
        sim.queue.push(monitor, EventKind::MonitorTick);
    }
    if sim.reap_interval <= horizon {
        sim.queue.push(sim.reap_interval, EventKind::ReapTick);
    }
    sim.run_loop()?;
    Ok(sim.finish(cfg, digest))
}

/// Enqueues the link state change described by a failure schedule entry.
pub fn inject_failure(queue: &mut EventQueue, entry: &FailureEntry) -> u64 {
    let kind = match entry.action {
        FailureAction::Fail => EventKind::LinkFail { link: entry.link },
        FailureAction::Repair => EventKind::LinkRepair { link: entry.link },
    };
    queue.push(entry.at, kind)
}

impl Sim {
    fn run_loop(&mut self) -> Result<(), SimError> {
        let mut last = SimTime::ZERO;
        while let Some(t) = self.queue.peek_time() {
            if t > self.horizon {
                break;
            }
            let ev = self.queue.pop().expect("peeked");
            if ev.t < last {
                self.order_ok = false;
            }
            last = ev.t;
            let now = ev.t;
            match ev.kind {
                EventKind::RequestArrival { request } => self.on_arrival(now, request),
                EventKind::PacketHop {
                    packet,
                    link,
                    to,
                    epoch,
                } => self.on_hop(now, packet, link, to, epoch)?,
                EventKind::ResponseChunk { request, seq } => self.on_chunk(now, request, seq),
                EventKind::ServiceComplete { request } => self.on_complete(now, request),
                EventKind::LinkFail { link } => {
                    let l = self.topo.link_mut(link);
                    if l.alive {
                        l.alive = false;
                        l.epoch += 1;
                        self.log.push(now, LogKind::LinkFail { link });
                        self.queue.push(
                            now + self.detection_delay,
                            EventKind::FailureDetected {
                                link,
                                failed_at: now,
                            },
                        );
                    }
                }
                EventKind::LinkRepair { link } => {
                    let l = self.topo.link_mut(link);
                    if !l.alive {
                        l.alive = true;
                        self.log.push(now, LogKind::LinkRepair { link });
                        self.ctrl.refresh_server_liveness(&self.topo);
                    }
                }
                EventKind::FailureDetected { link, failed_at } => {
                    let out = self.ctrl.handle_link_failure(
                        link,
                        failed_at,
                        now,
                        &self.topo,
                        &mut self.log,
                    );
                    self.apply(now, out.ops);
                    for s in out.destroyed {
                        self.mark_lost(now, s.request, "unrecoverable");
                    }
                    for (at, batch) in out.scheduled {
                        self.queue.push(at, EventKind::RulesInstalled { batch });
                    }
                }
                EventKind::RulesInstalled { batch } => {
                    if let Some(ops) = self.ctrl.complete_batch(batch, now, &mut self.log) {
                        self.apply(now, ops);
                    }
                }
                EventKind::MonitorTick => self.on_monitor(now)?,
                EventKind::ReapTick => self.on_reap(now),
            }
        }
        Ok(())
    }

    fn on_arrival(&mut self, now: SimTime, id: usize) {
        let r = &self.requests[id];
        let client = self.clients[r.client];
        let addr = self.topo.node(client).addr.expect("validated host address");
        let vs = &self.ctrl.config().vserver;
        let pkt = Packet {
            src_addr: addr,
            dst_addr: vs.vip,
            src_port: client_port(id),
            dst_port: vs.vip_port,
            protocol: Protocol::Tcp,
            size: r.size,
            flow_id: id as u64,
            seq: 0,
            fin: false,
            timestamp: now,
        };
        if let Some(server) = r.pinned {
            let sid = self.ctrl.servers()[server].id;
            self.ctrl.pin(SessionKey::of(&pkt), sid);
        }
        self.log.push(
            now,
            LogKind::ClientTx {
                client: addr,
                remote: pkt.dst_addr,
                request: id,
                bytes: pkt.size,
            },
        );
        let (link, _) = self
            .topo
            .attachment(client)
            .expect("validated host attachment");
        self.send(now, client, link, pkt);
    }

    fn send(&mut self, now: SimTime, from: NodeId, link: LinkId, pkt: Packet) {
        let l = self.topo.link_mut(link);
        if !l.alive {
            self.log.push(
                now,
                LogKind::PacketDrop {
                    at: from,
                    request: pkt.flow_id as usize,
                    reason: "link_down".into(),
                },
            );
            return;
        }
        l.window_bytes += u64::from(pkt.size);
        l.total_bytes += u64::from(pkt.size);
        let to = l.other(from);
        let epoch = l.epoch;
        let at = now + l.transit_delay(pkt.size);
        if self.log.traces_packets() {
            self.log.push(
                now,
                LogKind::PacketHop {
                    link,
                    to,
                    request: pkt.flow_id as usize,
                    bytes: pkt.size,
                },
            );
        }
        self.queue.push(
            at,
            EventKind::PacketHop {
                packet: pkt,
                link,
                to,
                epoch,
            },
        );
    }

    fn drop_packet(&mut self, now: SimTime, at: NodeId, pkt: &Packet, reason: &str) {
        self.log.push(
            now,
            LogKind::PacketDrop {
                at,
                request: pkt.flow_id as usize,
                reason: reason.to_string(),
            },
        );
    }

    fn on_hop(
        &mut self,
        now: SimTime,
        pkt: Packet,
        link: LinkId,
        to: NodeId,
        epoch: u32,
    ) -> Result<(), SimError> {
        if self.topo.link(link).epoch != epoch {
            self.drop_packet(now, to, &pkt, "link_failed_in_transit");
            return Ok(());
        }
        match self.topo.node(to).kind {
            NodeKind::Switch => self.on_switch(now, to, pkt)?,
            NodeKind::Host => self.on_client(now, to, pkt),
            NodeKind::Server => self.on_server(now, to, pkt),
            NodeKind::Controller => self.drop_packet(now, to, &pkt, "controller_node"),
        }
        Ok(())
    }

    fn on_switch(&mut self, now: SimTime, sw: NodeId, pkt: Packet) -> Result<(), SimError> {
        let mut actions = match self.tables[sw.0 as usize].lookup(&pkt, now) {
            Lookup::Matched(e) => Some(e.actions.clone()),
            Lookup::Miss => None,
        };
        if actions
            .as_ref()
            .is_some_and(|a| a.contains(&Action::ToController))
        {
            actions = None;
        }
        let actions = match actions {
            Some(a) => a,
            None => match self.packet_in(now, sw, &pkt)? {
                Some(a) => a,
                None => return Ok(()),
            },
        };
        let mut out = pkt;
        out.apply_rewrites(&actions);
        for a in &actions {
            match *a {
                Action::Forward(port) => {
                    let link = LinkId::from_port(port);
                    if link.0 as usize >= self.topo.links().len()
                        || !self.topo.link(link).touches(sw)
                    {
                        self.drop_packet(now, sw, &out, "bad_port");
                        continue;
                    }
                    let far = self.topo.link(link).other(sw);
                    let far_kind = self.topo.node(far).kind;
                    if let Some(seen) = &mut self.dedup {
                        if matches!(far_kind, NodeKind::Host | NodeKind::Server) {
                            let key = (sw, out.flow_id, out.seq, far_kind == NodeKind::Host);
                            if !seen.insert(key) {
                                self.log.push(
                                    now,
                                    LogKind::Dedup {
                                        switch: sw,
                                        request: out.flow_id as usize,
                                        seq: out.seq,
                                    },
                                );
                                continue;
                            }
                        }
                    }
                    self.send(now, sw, link, out.clone());
                }
                Action::Drop => self.drop_packet(now, sw, &out, "rule_drop"),
                _ => {}
            }
        }
        Ok(())
    }

    /// Punts a packet to the controller. Returns the actions of the entry
    /// matching after the controller's rule changes, if any.
    fn packet_in(
        &mut self,
        now: SimTime,
        sw: NodeId,
        pkt: &Packet,
    ) -> Result<Option<Vec<Action>>, SimError> {
        let outcome =
            match self
                .ctrl
                .handle_packet_in(pkt, sw, now, &self.topo, &mut self.rng, &mut self.log)
            {
                Ok(o) => o,
                Err(crate::controller::ControllerError::UnknownDestination { .. }) => {
                    self.drop_packet(now, sw, pkt, "no_session");
                    return Ok(None);
                }
                Err(crate::controller::ControllerError::UnknownClient(_)) => {
                    self.drop_packet(now, sw, pkt, "unknown_client");
                    return Ok(None);
                }
                Err(e) => return Err(e.into()),
            };
        let request = pkt.flow_id as usize;
        if let Some(id) = outcome.session {
            if let Some(st) = self.state.get_mut(request) {
                st.session = Some(id);
            }
        }
        let rejected = outcome.decision == Decision::Drop;
        self.apply(now, outcome.ops);
        if rejected {
            self.mark_lost(now, request, "no_server");
        }
        Ok(match self.tables[sw.0 as usize].lookup(pkt, now) {
            Lookup::Matched(e) => Some(e.actions.clone()),
            Lookup::Miss => {
                self.drop_packet(now, sw, pkt, "no_rule");
                None
            }
        })
    }

    fn on_client(&mut self, now: SimTime, host: NodeId, pkt: Packet) {
        let addr = self.topo.node(host).addr.expect("validated host address");
        let id = pkt.flow_id as usize;
        self.log.push(
            now,
            LogKind::ClientRx {
                client: addr,
                remote: pkt.src_addr,
                request: id,
                bytes: pkt.size,
                seq: pkt.seq,
                fin: pkt.fin,
            },
        );
        if !pkt.fin || pkt.dst_addr != addr {
            return;
        }
        let Some(st) = self.state.get_mut(id) else {
            return;
        };
        if st.outcome != Outcome::InFlight {
            return;
        }
        let latency = now.saturating_sub(self.requests[id].arrival);
        st.outcome = Outcome::Served { latency };
        self.log.push(
            now,
            LogKind::RequestServed {
                request: id,
                latency_ns: latency.as_nanos(),
            },
        );
        if !self.requests[id].silent {
            if let Some(session) = st.session {
                let ops = self.ctrl.close_session(session, now, &mut self.log);
                self.apply(now, ops);
            }
        }
    }

    fn on_server(&mut self, now: SimTime, node: NodeId, pkt: Packet) {
        let id = pkt.flow_id as usize;
        let Some(idx) = (0..self.ctrl.servers().len()).find(|&i| self.ctrl.server_node(i) == node)
        else {
            self.drop_packet(now, node, &pkt, "not_a_member");
            return;
        };
        let server = &self.ctrl.servers()[idx];
        if pkt.dst_addr != server.address || id >= self.requests.len() {
            self.drop_packet(now, node, &pkt, "misaddressed");
            return;
        }
        let sid = server.id;
        let st = &mut self.state[id];
        if st.started {
            return;
        }
        st.started = true;
        st.server = Some(idx);
        st.service_end = now + self.requests[id].service;
        let end = st.service_end;
        self.log.push(
            now,
            LogKind::ServiceStart {
                request: id,
                server: sid,
            },
        );
        let first = now + self.chunk_interval;
        if first < end {
            self.queue.push(
                first,
                EventKind::ResponseChunk {
                    request: id,
                    seq: 0,
                },
            );
        }
        self.queue
            .push(end, EventKind::ServiceComplete { request: id });
    }

    fn respond(&mut self, now: SimTime, id: usize, fin: bool) {
        let Some(idx) = self.state[id].server else {
            return;
        };
        let server = &self.ctrl.servers()[idx];
        let node = self.ctrl.server_node(idx);
        let client = self.topo.node(self.clients[self.requests[id].client]);
        let seq = self.state[id].next_seq;
        self.state[id].next_seq += 1;
        let pkt = Packet {
            src_addr: server.address,
            dst_addr: client.addr.expect("validated host address"),
            src_port: server.port,
            dst_port: client_port(id),
            protocol: Protocol::Tcp,
            size: self.requests[id].size,
            flow_id: id as u64,
            // request packet used 0 in the other direction
            seq: seq + 1,
            fin,
            timestamp: now,
        };
        let (link, _) = self
            .topo
            .attachment(node)
            .expect("validated server attachment");
        self.send(now, node, link, pkt);
    }

    fn on_chunk(&mut self, now: SimTime, id: usize, seq: u32) {
        self.respond(now, id, false);
        let next = now + self.chunk_interval;
        if next < self.state[id].service_end {
            self.queue.push(
                next,
                EventKind::ResponseChunk {
                    request: id,
                    seq: seq + 1,
                },
            );
        }
    }

    fn on_complete(&mut self, now: SimTime, id: usize) {
        if let Some(idx) = self.state[id].server {
            let server = self.ctrl.servers()[idx].id;
            self.log.push(
                now,
                LogKind::ServiceComplete {
                    request: id,
                    server,
                },
            );
        }
        self.respond(now, id, true);
    }

    fn on_monitor(&mut self, now: SimTime) -> Result<(), SimError> {
        let out = self.ctrl.monitor_tick(&self.topo)?;
        for (sum, l) in self.window_sums.iter_mut().zip(self.topo.links()) {
            *sum += l.window_bytes;
        }
        self.topo.rotate_windows();
        for (s, &bytes) in self.ctrl.servers().iter().zip(&out.window_bytes) {
            self.samples.push(TickSample {
                t: now,
                server: s.id,
                active_sessions: s.active_sessions,
                window_bytes: bytes,
                f_value: out.f_value,
            });
        }
        if let Some(f) = out.f_value {
            self.f_series.push(FPoint { t: now, f_value: f });
        }
        self.log.push(
            now,
            LogKind::MonitorTick {
                window_bytes: out.window_bytes,
                f_value: out.f_value,
            },
        );
        let next = now + self.ctrl.config().vserver.monitor_interval;
        if next <= self.horizon {
            self.queue.push(next, EventKind::MonitorTick);
        }
        Ok(())
    }

    fn on_reap(&mut self, now: SimTime) {
        let (destroyed, ops) = self.ctrl.reap_sessions(now, &self.tables, &mut self.log);
        self.apply(now, ops);
        let n_destroyed = destroyed.len();
        for s in destroyed {
            self.mark_lost(now, s.request, "session_reaped");
        }
        for (i, t) in self.tables.iter_mut().enumerate() {
            for e in t.expire_idle(now) {
                self.log.push(
                    now,
                    LogKind::RuleRemove {
                        switch: NodeId(i as u32),
                        cookie: e.cookie,
                        reason: "idle_timeout".into(),
                    },
                );
            }
        }
        let check = ReapCheck {
            t: now,
            live_sessions: self.ctrl.live_sessions(),
            active_sum: self.ctrl.active_sum(),
            forward_nat_rules: self.forward_nat_rules(),
        };
        self.log.push(
            now,
            LogKind::ReapTick {
                live_sessions: check.live_sessions,
                active_sum: check.active_sum,
                forward_nat_rules: check.forward_nat_rules,
                destroyed: n_destroyed,
            },
        );
        self.reap_checks.push(check);
        let next = now + self.reap_interval;
        if next <= self.horizon {
            self.queue.push(next, EventKind::ReapTick);
        }
    }

    fn forward_nat_rules(&self) -> usize {
        self.tables
            .iter()
            .flat_map(|t| t.entries())
            .filter(|e| {
                e.cookie != 0 && e.actions.iter().any(|a| matches!(a, Action::RewriteDst(_)))
            })
            .count()
    }

    fn mark_lost(&mut self, now: SimTime, id: usize, reason: &str) {
        if let Some(st) = self.state.get_mut(id) {
            if st.outcome == Outcome::InFlight {
                st.outcome = Outcome::Lost {
                    reason: reason.to_string(),
                };
                self.log.push(
                    now,
                    LogKind::RequestLost {
                        request: id,
                        reason: reason.to_string(),
                    },
                );
            }
        }
    }

    fn apply(&mut self, now: SimTime, ops: Vec<RuleOp>) {
        for op in ops {
            match op {
                RuleOp::Install { switch, entry } => {
                    self.log.push(
                        now,
                        LogKind::RuleInstall {
                            switch,
                            cookie: entry.cookie,
                            priority: entry.priority,
                            match_key: entry.match_key,
                            actions: entry.actions.clone(),
                        },
                    );
                    self.tables[switch.0 as usize].install(entry);
                }
                RuleOp::RemoveCookie {
                    switch,
                    cookie,
                    reason,
                } => {
                    if !self.tables[switch.0 as usize]
                        .remove_by_cookie(cookie)
                        .is_empty()
                    {
                        self.log.push(
                            now,
                            LogKind::RuleRemove {
                                switch,
                                cookie,
                                reason: reason.to_string(),
                            },
                        );
                    }
                }
            }
        }
    }

    fn finish(mut self, cfg: &SimConfig, digest: String) -> RunReport {
        for (sum, l) in self.window_sums.iter_mut().zip(self.topo.links()) {
            *sum += l.window_bytes;
        }
        let requests: Vec<RequestRecord> = self
            .requests
            .iter()
            .zip(&self.state)
            .map(|(r, st)| RequestRecord {
                id: r.id,
                client: self
                    .topo
                    .node(self.clients[r.client])
                    .addr
                    .expect("host address"),
                arrival: r.arrival,
                server: st.server.map(|i| self.ctrl.servers()[i].id),
                silent: r.silent,
                outcome: st.outcome.clone(),
            })
            .collect();
        let link_usage = self
            .topo
            .links()
            .iter()
            .zip(&self.window_sums)
            .map(|(l, &w)| LinkUsage {
                link: l.id,
                name: l.name.clone(),
                total_bytes: l.total_bytes,
                window_sum: w,
            })
            .collect();
        RunReport {
            scheduler: cfg.controller.vserver.scheduler,
            recovery: cfg.controller.recovery,
            seed: cfg.workload.seed,
            duration: self.horizon,
            servers: self.ctrl.servers().iter().map(|s| s.id).collect(),
            server_addrs: self.ctrl.servers().iter().map(|s| s.address).collect(),
            vip: cfg.controller.vserver.vip,
            requests,
            samples: self.samples,
            f_series: self.f_series,
            outages: self.ctrl.outages().to_vec(),
            reap_checks: self.reap_checks,
            link_usage,
            per_source: self
                .ctrl
                .per_source()
                .iter()
                .map(|(a, s)| (*a, *s))
                .collect(),
            workload_digest: digest,
            event_order_ok: self.order_ok,
            tables: self
                .tables
                .iter()
                .enumerate()
                .filter(|(i, _)| self.topo.nodes()[*i].kind == NodeKind::Switch)
                .map(|(i, t)| t.dump(i as u32))
                .collect(),
            log: std::mem::take(&mut self.log),
        }
    }
}
