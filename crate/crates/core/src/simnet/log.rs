use std::io::{self, Write};
use std::net::Ipv4Addr;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::topology::{LinkId, NodeId};
use crate::controller::RecoveryMode;
use crate::flowtable::{Action, MatchKey};
use crate::scheduling::{ServerId, Trigger};
use crate::time::SimTime;

/// Payload of one log line. The variant name becomes the `kind` field.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogKind {
    /// A packet leaving a client host. `remote` is the destination the
    /// client addressed.
    ClientTx {
        client: Ipv4Addr,
        remote: Ipv4Addr,
        request: usize,
        bytes: u32,
    },
    /// A packet delivered to a client host. `remote` is the source address
    /// the client observes.
    ClientRx {
        client: Ipv4Addr,
        remote: Ipv4Addr,
        request: usize,
        bytes: u32,
        seq: u32,
        fin: bool,
    },
    /// Only recorded when packet tracing is enabled.
    PacketHop {
        link: LinkId,
        to: NodeId,
        request: usize,
        bytes: u32,
    },
    PacketIn {
        switch: NodeId,
        src: Ipv4Addr,
        src_port: u16,
        dst: Ipv4Addr,
        dst_port: u16,
    },
    Schedule {
        session: u64,
        server: ServerId,
        trigger: Trigger,
        #[serde(skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<(ServerId, f64)>>,
        pinned: bool,
    },
    SessionCreate {
        session: u64,
        request: usize,
        client: Ipv4Addr,
        client_port: u16,
        server: ServerId,
        working_path: Vec<LinkId>,
        recovery_path: Vec<LinkId>,
        protected: bool,
    },
    SessionClose {
        session: u64,
        server: ServerId,
    },
    SessionDestroy {
        session: u64,
        server: ServerId,
        reason: String,
        idle_ns: u64,
    },
    RuleInstall {
        switch: NodeId,
        cookie: u64,
        priority: u16,
        #[serde(rename = "match")]
        match_key: MatchKey,
        actions: Vec<Action>,
    },
    RuleRemove {
        switch: NodeId,
        cookie: u64,
        reason: String,
    },
    PacketDrop {
        at: NodeId,
        request: usize,
        reason: String,
    },
    Dedup {
        switch: NodeId,
        request: usize,
        seq: u32,
    },
    ServiceStart {
        request: usize,
        server: ServerId,
    },
    ServiceComplete {
        request: usize,
        server: ServerId,
    },
    LinkFail {
        link: LinkId,
    },
    LinkRepair {
        link: LinkId,
    },
    FailureDetected {
        link: LinkId,
        failed_at_ns: u64,
        affected_sessions: usize,
    },
    PathRestored {
        session: u64,
        link: LinkId,
        mode: RecoveryMode,
        failed_at_ns: u64,
        outage_ns: u64,
        new_path: Vec<LinkId>,
    },
    Unrecoverable {
        session: u64,
        link: LinkId,
    },
    MonitorTick {
        window_bytes: Vec<u64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        f_value: Option<f64>,
    },
    ReapTick {
        live_sessions: usize,
        active_sum: u64,
        forward_nat_rules: usize,
        destroyed: usize,
    },
    RequestServed {
        request: usize,
        latency_ns: u64,
    },
    RequestLost {
        request: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    pub t_ns: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub kind: LogKind,
}

/// In-memory event log; serialized to JSON lines on demand.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    records: Vec<LogRecord>,
    trace_packets: bool,
}

impl EventLog {
    pub fn new(trace_packets: bool) -> Self {
        Self {
            records: Vec::new(),
            trace_packets,
        }
    }

    pub fn traces_packets(&self) -> bool {
        self.trace_packets
    }

    pub fn push(&mut self, t: SimTime, kind: LogKind) {
        let seq = self.records.len() as u64;
        self.records.push(LogRecord {
            t_ns: t.as_nanos(),
            seq,
            kind,
        });
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Hex SHA-256 of the JSON-lines serialization.
    pub fn digest(&self) -> String {
        struct HashWriter(Sha256);
        impl Write for HashWriter {
            fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
                self.0.update(buf);
                Ok(buf.len())
            }
            fn flush(&mut self) -> io::Result<()> {
                Ok(())
            }
        }
        let mut h = HashWriter(Sha256::new());
        self.write_jsonl(&mut h).expect("hashing cannot fail");
        hex::encode(h.0.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_flatten_kind_into_line() {
        let mut log = EventLog::new(false);
        log.push(
            SimTime::from_millis(3),
            LogKind::LinkFail { link: LinkId(2) },
        );
        let line = log.to_jsonl();
        assert_eq!(
            line,
            "{\"t_ns\":3000000,\"seq\":0,\"kind\":\"link_fail\",\"link\":2}\n"
        );
    }

    #[test]
    fn digest_tracks_content() {
        let mut a = EventLog::new(false);
        let mut b = EventLog::new(false);
        for log in [&mut a, &mut b] {
            log.push(SimTime::ZERO, LogKind::LinkRepair { link: LinkId(1) });
        }
        assert_eq!(a.digest(), b.digest());
        b.push(SimTime::ZERO, LogKind::LinkRepair { link: LinkId(1) });
        assert_ne!(a.digest(), b.digest());
    }
}
