use std::net::Ipv4Addr;

use proptest::prelude::*;

use sdnlb::flowtable::{Action, FlowEntry, FlowTable, Lookup, MatchKey, Packet, PortId, Protocol};
use sdnlb::SimTime;

fn addr(i: u8) -> Ipv4Addr {
    Ipv4Addr::new(10, 0, 0, i)
}

fn key_strategy() -> impl Strategy<Value = MatchKey> {
    (
        prop::option::of(0u8..3),
        prop::option::of(0u8..3),
        prop::option::of(0u16..3),
        prop::option::of(0u16..3),
        prop::sample::select(vec![Protocol::Tcp, Protocol::Udp, Protocol::Any]),
    )
        .prop_map(|(s, d, sp, dp, protocol)| MatchKey {
            src_addr: s.map(addr),
            dst_addr: d.map(addr),
            src_port: sp,
            dst_port: dp,
            protocol,
        })
}

fn packet_strategy() -> impl Strategy<Value = Packet> {
    (
        0u8..3,
        0u8..3,
        0u16..3,
        0u16..3,
        prop::sample::select(vec![Protocol::Tcp, Protocol::Udp]),
        1u32..1500,
    )
        .prop_map(|(s, d, sp, dp, protocol, size)| Packet {
            src_addr: addr(s),
            dst_addr: addr(d),
            src_port: sp,
            dst_port: dp,
            protocol,
            size,
            flow_id: 0,
            seq: 0,
            fin: false,
            timestamp: SimTime::ZERO,
        })
}

/// Field-by-field match written independently of `MatchKey::matches`.
fn oracle_matches(k: &MatchKey, p: &Packet) -> bool {
    k.src_addr.is_none_or(|a| a == p.src_addr)
        && k.dst_addr.is_none_or(|a| a == p.dst_addr)
        && k.src_port.is_none_or(|a| a == p.src_port)
        && k.dst_port.is_none_or(|a| a == p.dst_port)
        && (k.protocol == Protocol::Any || k.protocol == p.protocol)
}

/// (key, priority, cookie) in installation order; a replace moves the entry
/// to the back since it is now the most recent install.
fn oracle_install(model: &mut Vec<(MatchKey, u16, u64)>, k: MatchKey, prio: u16, cookie: u64) {
    model.retain(|(mk, p, _)| !(*mk == k && *p == prio));
    model.push((k, prio, cookie));
}

fn oracle_winner(model: &[(MatchKey, u16, u64)], p: &Packet) -> Option<u64> {
    let mut best: Option<(u16, usize, u64)> = None;
    for (i, (k, prio, cookie)) in model.iter().enumerate() {
        if oracle_matches(k, p) && best.is_none_or(|(bp, bi, _)| (*prio, i) > (bp, bi)) {
            best = Some((*prio, i, *cookie));
        }
    }
    best.map(|b| b.2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lookup_agrees_with_scan(
        rules in prop::collection::vec((key_strategy(), 0u16..4), 0..=32),
        packets in prop::collection::vec(packet_strategy(), 1..40),
    ) {
        let mut table = FlowTable::new();
        let mut model = Vec::new();
        for (cookie, (k, prio)) in rules.into_iter().enumerate() {
            let e = FlowEntry::new(k, prio, vec![Action::Forward(PortId(1))], SimTime::ZERO)
                .with_cookie(cookie as u64);
            table.install(e);
            oracle_install(&mut model, k, prio, cookie as u64);
        }
        prop_assert_eq!(table.len(), model.len());

        let mut matched_bytes = 0u64;
        let mut matched_packets = 0u64;
        for (i, p) in packets.iter().enumerate() {
            let now = SimTime::from_millis(i as u64);
            let peeked = table.peek(p).map(|e| e.cookie);
            let got = match table.lookup(p, now) {
                Lookup::Matched(e) => {
                    prop_assert_eq!(e.last_hit, now);
                    Some(e.cookie)
                }
                Lookup::Miss => None,
            };
            prop_assert_eq!(got, oracle_winner(&model, p));
            prop_assert_eq!(peeked, got);
            if got.is_some() {
                matched_bytes += u64::from(p.size);
                matched_packets += 1;
            }
        }
        let bytes: u64 = table.entries().iter().map(|e| e.bytes).sum();
        let pkts: u64 = table.entries().iter().map(|e| e.packets).sum();
        prop_assert_eq!(bytes, matched_bytes);
        prop_assert_eq!(pkts, matched_packets);
    }

    #[test]
    fn counters_never_decrease(
        k in key_strategy(),
        packets in prop::collection::vec(packet_strategy(), 1..50),
    ) {
        let mut table = FlowTable::new();
        table.install(FlowEntry::new(k, 1, vec![Action::Drop], SimTime::ZERO));
        let (mut last_p, mut last_b, mut last_hit) = (0, 0, SimTime::ZERO);
        for (i, p) in packets.iter().enumerate() {
            table.lookup(p, SimTime::from_secs(i as u64));
            let e = &table.entries()[0];
            prop_assert!(e.packets >= last_p && e.bytes >= last_b);
            prop_assert!(e.last_hit >= last_hit && e.last_hit >= e.installed_at);
            (last_p, last_b, last_hit) = (e.packets, e.bytes, e.last_hit);
        }
    }

    #[test]
    fn expiry_uses_strict_idle_time(
        timeouts in prop::collection::vec(0u64..120, 1..16),
        now in 0u64..200,
    ) {
        let mut table = FlowTable::new();
        for (i, &t) in timeouts.iter().enumerate() {
            let k = MatchKey { src_port: Some(i as u16), ..MatchKey::wildcard() };
            table.install(
                FlowEntry::new(k, 1, vec![Action::Drop], SimTime::ZERO)
                    .with_idle_timeout(SimTime::from_secs(t))
                    .with_cookie(i as u64),
            );
        }
        let expired = table.expire_idle(SimTime::from_secs(now));
        let mut want: Vec<u64> = timeouts
            .iter()
            .enumerate()
            .filter(|(_, &t)| t > 0 && now > t)
            .map(|(i, _)| i as u64)
            .collect();
        let mut got: Vec<u64> = expired.iter().map(|e| e.cookie).collect();
        want.sort_unstable();
        got.sort_unstable();
        prop_assert_eq!(got, want);
        prop_assert_eq!(table.len() + expired.len(), timeouts.len());
    }
}

#[test]
fn remove_deletes_only_the_exact_key() {
    let mut table = FlowTable::new();
    let k = MatchKey {
        dst_port: Some(80),
        ..MatchKey::wildcard()
    };
    table.install(FlowEntry::new(k, 5, vec![Action::Drop], SimTime::ZERO));
    table.install(FlowEntry::new(k, 6, vec![Action::Drop], SimTime::ZERO));
    assert!(table.remove(&k, 7).is_empty());
    assert_eq!(table.remove(&k, 5).len(), 1);
    assert_eq!(table.len(), 1);
    assert_eq!(table.entries()[0].priority, 6);
}

#[test]
fn dump_serializes_counters() {
    let mut table = FlowTable::new();
    table.install(FlowEntry::new(
        MatchKey::wildcard(),
        3,
        vec![Action::RewriteDst(addr(2)), Action::Forward(PortId(4))],
        SimTime::ZERO,
    ));
    let pkt = Packet {
        src_addr: addr(1),
        dst_addr: addr(9),
        src_port: 1,
        dst_port: 2,
        protocol: Protocol::Udp,
        size: 77,
        flow_id: 0,
        seq: 0,
        fin: false,
        timestamp: SimTime::ZERO,
    };
    table.lookup(&pkt, SimTime::from_secs(1));
    let v = serde_json::to_value(table.dump(4)).unwrap();
    assert_eq!(v["switch_id"], 4);
    let e = &v["entries"][0];
    assert_eq!(e["priority"], 3);
    assert_eq!(e["packets"], 1);
    assert_eq!(e["bytes"], 77);
    assert_eq!(e["match"]["protocol"], serde_json::json!("any"));
}
