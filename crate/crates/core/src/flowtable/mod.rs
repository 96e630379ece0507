//! OpenFlow-style flow table with priority matching, counters and idle expiry.

use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::time::SimTime;

/// Switch port. Ports are numbered by the id of the link they attach to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PortId(pub u32);

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Tcp,
    Udp,
    Icmp,
    Any,
}

impl Protocol {
    fn admits(self, p: Protocol) -> bool {
        self == Protocol::Any || self == p
    }
}

/// Header match. `None` fields are wildcards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchKey {
    pub src_addr: Option<Ipv4Addr>,
    pub dst_addr: Option<Ipv4Addr>,
    pub src_port: Option<u16>,
    pub dst_port: Option<u16>,
    pub protocol: Protocol,
}

impl MatchKey {
    pub const fn wildcard() -> Self {
        Self {
            src_addr: None,
            dst_addr: None,
            src_port: None,
            dst_port: None,
            protocol: Protocol::Any,
        }
    }

    /// Exact match on every header field of `pkt`.
    pub fn exact(pkt: &Packet) -> Self {
        Self {
            src_addr: Some(pkt.src_addr),
            dst_addr: Some(pkt.dst_addr),
            src_port: Some(pkt.src_port),
            dst_port: Some(pkt.dst_port),
            protocol: pkt.protocol,
        }
    }

    pub fn matches(&self, pkt: &Packet) -> bool {
        fn field<T: PartialEq>(want: &Option<T>, got: &T) -> bool {
            want.as_ref().is_none_or(|w| w == got)
        }
        field(&self.src_addr, &pkt.src_addr)
            && field(&self.dst_addr, &pkt.dst_addr)
            && field(&self.src_port, &pkt.src_port)
            && field(&self.dst_port, &pkt.dst_port)
            && self.protocol.admits(pkt.protocol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "arg")]
pub enum Action {
    Forward(PortId),
    RewriteDst(Ipv4Addr),
    RewriteSrc(Ipv4Addr),
    Drop,
    ToController,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub src_addr: Ipv4Addr,
    pub dst_addr: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
    pub size: u32,
    pub flow_id: u64,
    /// Per-flow sequence number, used for 1+1 deduplication.
    pub seq: u32,
    /// Last packet of the flow in its direction.
    pub fin: bool,
    pub timestamp: SimTime,
}

impl Packet {
    /// Applies the header rewrites in `actions`, in order.
    pub fn apply_rewrites(&mut self, actions: &[Action]) {
        for a in actions {
            match *a {
                Action::RewriteDst(addr) => self.dst_addr = addr,
                Action::RewriteSrc(addr) => self.src_addr = addr,
                _ => {}
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowEntry {
    #[serde(rename = "match")]
    pub match_key: MatchKey,
    pub priority: u16,
    pub actions: Vec<Action>,
    pub packets: u64,
    pub bytes: u64,
    /// Zero means permanent.
    pub idle_timeout: SimTime,
    pub installed_at: SimTime,
    pub last_hit: SimTime,
    /// Controller-chosen tag; sessions use it to find their rules.
    pub cookie: u64,
    #[serde(skip)]
    install_seq: u64,
}

impl FlowEntry {
    pub fn new(match_key: MatchKey, priority: u16, actions: Vec<Action>, now: SimTime) -> Self {
        Self {
            match_key,
            priority,
            actions,
            packets: 0,
            bytes: 0,
            idle_timeout: SimTime::ZERO,
            installed_at: now,
            last_hit: now,
            cookie: 0,
            install_seq: 0,
        }
    }

    pub fn with_idle_timeout(mut self, timeout: SimTime) -> Self {
        self.idle_timeout = timeout;
        self
    }

    pub fn with_cookie(mut self, cookie: u64) -> Self {
        self.cookie = cookie;
        self
    }

    fn is_idle(&self, now: SimTime) -> bool {
        self.idle_timeout > SimTime::ZERO && now.saturating_sub(self.last_hit) > self.idle_timeout
    }
}

#[derive(Debug, PartialEq)]
pub enum Lookup<'a> {
    Matched(&'a FlowEntry),
    Miss,
}

#[derive(Debug, Default, Clone)]
pub struct FlowTable {
    entries: Vec<FlowEntry>,
    next_seq: u64,
}

impl FlowTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[FlowEntry] {
        &self.entries
    }

    /// Index of the winning entry: highest priority, then most recently installed.
    fn best_match(&self, pkt: &Packet) -> Option<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.match_key.matches(pkt))
            .max_by_key(|(_, e)| (e.priority, e.install_seq))
            .map(|(i, _)| i)
    }

    /// Finds the winning entry without touching counters.
    pub fn peek(&self, pkt: &Packet) -> Option<&FlowEntry> {
        self.best_match(pkt).map(|i| &self.entries[i])
    }

    /// Matches `pkt`, charging the entry's counters and refreshing `last_hit`.
    pub fn lookup(&mut self, pkt: &Packet, now: SimTime) -> Lookup<'_> {
        match self.best_match(pkt) {
            Some(i) => {
                let e = &mut self.entries[i];
                e.packets += 1;
                e.bytes += u64::from(pkt.size);
                if now > e.last_hit {
                    e.last_hit = now;
                }
                Lookup::Matched(&self.entries[i])
            }
            None => Lookup::Miss,
        }
    }

    /// Adds `entry`, replacing (and returning) one with the same match and priority.
    pub fn install(&mut self, mut entry: FlowEntry) -> Option<FlowEntry> {
        entry.install_seq = self.next_seq;
        self.next_seq += 1;
        if let Some(i) = self
            .entries
            .iter()
            .position(|e| e.match_key == entry.match_key && e.priority == entry.priority)
        {
            return Some(std::mem::replace(&mut self.entries[i], entry));
        }
        self.entries.push(entry);
        None
    }

    /// Deletes all entries with the given match and priority. An empty result
    /// means nothing was installed under that key.
    pub fn remove(&mut self, match_key: &MatchKey, priority: u16) -> Vec<FlowEntry> {
        self.extract(|e| e.match_key == *match_key && e.priority == priority)
    }

    pub fn remove_by_cookie(&mut self, cookie: u64) -> Vec<FlowEntry> {
        self.extract(|e| e.cookie == cookie)
    }

    /// Removes entries whose idle time strictly exceeds their timeout.
    pub fn expire_idle(&mut self, now: SimTime) -> Vec<FlowEntry> {
        self.extract(|e| e.is_idle(now))
    }

    fn extract(&mut self, pred: impl Fn(&FlowEntry) -> bool) -> Vec<FlowEntry> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.entries.len() {
            if pred(&self.entries[i]) {
                out.push(self.entries.remove(i));
            } else {
                i += 1;
            }
        }
        out
    }

    pub fn dump(&self, switch_id: u32) -> TableDump {
        TableDump {
            switch_id,
            entries: self
                .entries
                .iter()
                .map(|e| DumpEntry {
                    match_key: e.match_key,
                    priority: e.priority,
                    actions: e.actions.clone(),
                    packets: e.packets,
                    bytes: e.bytes,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDump {
    pub switch_id: u32,
    pub entries: Vec<DumpEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpEntry {
    #[serde(rename = "match")]
    pub match_key: MatchKey,
    pub priority: u16,
    pub actions: Vec<Action>,
    pub packets: u64,
    pub bytes: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt(size: u32) -> Packet {
        Packet {
            src_addr: Ipv4Addr::new(10, 0, 1, 1),
            dst_addr: Ipv4Addr::new(10, 0, 0, 100),
            src_port: 40000,
            dst_port: 80,
            protocol: Protocol::Tcp,
            size,
            flow_id: 1,
            seq: 0,
            fin: false,
            timestamp: SimTime::ZERO,
        }
    }

    #[test]
    fn empty_table_misses() {
        let mut t = FlowTable::new();
        assert_eq!(t.lookup(&pkt(100), SimTime::ZERO), Lookup::Miss);
    }

    #[test]
    fn wildcard_forward_matches_and_counts() {
        let mut t = FlowTable::new();
        t.install(FlowEntry::new(
            MatchKey::wildcard(),
            1,
            vec![Action::Forward(PortId(1))],
            SimTime::ZERO,
        ));
        let now = SimTime::from_secs(3);
        match t.lookup(&pkt(1500), now) {
            Lookup::Matched(e) => {
                assert_eq!((e.packets, e.bytes), (1, 1500));
                assert_eq!(e.last_hit, now);
                assert_eq!(e.actions, vec![Action::Forward(PortId(1))]);
            }
            Lookup::Miss => panic!("expected match"),
        }
    }

    #[test]
    fn higher_priority_wins() {
        let mut t = FlowTable::new();
        t.install(FlowEntry::new(
            MatchKey::wildcard(),
            10,
            vec![Action::Drop],
            SimTime::ZERO,
        ));
        t.install(FlowEntry::new(
            MatchKey::exact(&pkt(1)),
            5,
            vec![Action::Forward(PortId(2))],
            SimTime::ZERO,
        ));
        let Lookup::Matched(e) = t.lookup(&pkt(10), SimTime::ZERO) else {
            panic!("expected match")
        };
        assert_eq!(e.actions, vec![Action::Drop]);
    }

    #[test]
    fn equal_priority_prefers_latest_install() {
        let mut t = FlowTable::new();
        t.install(FlowEntry::new(
            MatchKey::wildcard(),
            5,
            vec![Action::Drop],
            SimTime::ZERO,
        ));
        t.install(FlowEntry::new(
            MatchKey::exact(&pkt(1)),
            5,
            vec![Action::ToController],
            SimTime::ZERO,
        ));
        assert_eq!(t.peek(&pkt(1)).unwrap().actions, vec![Action::ToController]);
    }

    #[test]
    fn install_replaces_same_key() {
        let mut t = FlowTable::new();
        let m = MatchKey::exact(&pkt(1));
        assert!(t
            .install(FlowEntry::new(m, 3, vec![Action::Drop], SimTime::ZERO))
            .is_none());
        let old = t.install(FlowEntry::new(
            m,
            3,
            vec![Action::Forward(PortId(4))],
            SimTime::ZERO,
        ));
        assert_eq!(old.unwrap().actions, vec![Action::Drop]);
        assert_eq!(t.len(), 1);
        assert!(matches!(
            t.lookup(&pkt(1), SimTime::ZERO),
            Lookup::Matched(_)
        ));
    }

    #[test]
    fn remove_absent_is_noop() {
        let mut t = FlowTable::new();
        assert!(t.remove(&MatchKey::wildcard(), 1).is_empty());
        t.install(FlowEntry::new(
            MatchKey::wildcard(),
            1,
            vec![Action::Drop],
            SimTime::ZERO,
        ));
        assert_eq!(t.remove(&MatchKey::wildcard(), 2).len(), 0);
        assert_eq!(t.remove(&MatchKey::wildcard(), 1).len(), 1);
        assert!(t.is_empty());
    }

    #[test]
    fn idle_expiry_boundaries() {
        let timeout = SimTime::from_secs(60);
        let mut t = FlowTable::new();
        t.install(
            FlowEntry::new(
                MatchKey::exact(&pkt(1)),
                1,
                vec![Action::Drop],
                SimTime::ZERO,
            )
            .with_idle_timeout(timeout),
        );
        t.install(FlowEntry::new(
            MatchKey::wildcard(),
            0,
            vec![Action::Drop],
            SimTime::ZERO,
        ));
        assert!(t.expire_idle(SimTime::from_secs(60)).is_empty());
        let gone = t.expire_idle(SimTime::from_secs(61));
        assert_eq!(gone.len(), 1);
        assert_eq!(gone[0].priority, 1);
        // the permanent entry stays forever
        assert!(t.expire_idle(SimTime::from_secs(1_000_000)).is_empty());
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn rewrites_apply_in_order() {
        let mut p = pkt(1);
        let server = Ipv4Addr::new(10, 0, 0, 2);
        p.apply_rewrites(&[Action::RewriteDst(server), Action::Forward(PortId(0))]);
        assert_eq!(p.dst_addr, server);
    }

    #[test]
    fn dump_serializes() {
        let mut t = FlowTable::new();
        t.install(FlowEntry::new(
            MatchKey::wildcard(),
            7,
            vec![
                Action::RewriteSrc(Ipv4Addr::new(10, 0, 0, 100)),
                Action::Forward(PortId(3)),
            ],
            SimTime::ZERO,
        ));
        let v = serde_json::to_value(t.dump(2)).unwrap();
        assert_eq!(v["switch_id"], 2);
        assert_eq!(v["entries"][0]["priority"], 7);
        assert_eq!(v["entries"][0]["actions"][1]["type"], "forward");
        assert!(v["entries"][0]["match"]["src_addr"].is_null());
    }
}
