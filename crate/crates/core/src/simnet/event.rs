use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::topology::{LinkId, NodeId};
use crate::flowtable::Packet;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    RequestArrival {
        request: usize,
    },
    PacketHop {
        packet: Packet,
        link: LinkId,
        to: NodeId,
        epoch: u32,
    },
    /// A server emits the next chunk of an in-progress response.
    ResponseChunk {
        request: usize,
        seq: u32,
    },
    ServiceComplete {
        request: usize,
    },
    LinkFail {
        link: LinkId,
    },
    LinkRepair {
        link: LinkId,
    },
    /// Failure notification reaching the controller after the detection delay.
    FailureDetected {
        link: LinkId,
        failed_at: SimTime,
    },
    /// A delayed batch of rule changes taking effect.
    RulesInstalled {
        batch: usize,
    },
    MonitorTick,
    ReapTick,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::RequestArrival { .. } => "request_arrival",
            Self::PacketHop { .. } => "packet_hop",
            Self::ResponseChunk { .. } => "response_chunk",
            Self::ServiceComplete { .. } => "service_complete",
            Self::LinkFail { .. } => "link_fail",
            Self::LinkRepair { .. } => "link_repair",
            Self::FailureDetected { .. } => "failure_detected",
            Self::RulesInstalled { .. } => "rules_installed",
            Self::MonitorTick => "monitor_tick",
            Self::ReapTick => "reap_tick",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub t: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (t, seq)
        (other.t, other.seq).cmp(&(self.t, self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Global event queue; dequeues in `(t, seq)` order with `seq` assigned on push.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: SimTime, kind: EventKind) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { t, seq, kind });
        seq
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.t)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_by_time_then_insertion() {
        let mut q = EventQueue::new();
        q.push(SimTime::from_secs(2), EventKind::MonitorTick);
        q.push(SimTime::from_secs(1), EventKind::ReapTick);
        q.push(SimTime::from_secs(1), EventKind::MonitorTick);
        let order: Vec<_> = std::iter::from_fn(|| q.pop())
            .map(|e| (e.t, e.kind.name()))
            .collect();
        assert_eq!(
            order,
            vec![
                (SimTime::from_secs(1), "reap_tick"),
                (SimTime::from_secs(1), "monitor_tick"),
                (SimTime::from_secs(2), "monitor_tick"),
            ]
        );
    }
}
