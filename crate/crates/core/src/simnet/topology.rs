use std::collections::HashSet;
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::flowtable::PortId;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinkId(pub u32);

impl LinkId {
    /// Switch ports are numbered after the link they attach to.
    pub fn port(self) -> PortId {
        PortId(self.0)
    }

    pub fn from_port(p: PortId) -> Self {
        LinkId(p.0)
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Host,
    Switch,
    Server,
    Controller,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
    pub addr: Option<Ipv4Addr>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Link {
    pub id: LinkId,
    pub name: String,
    pub a: NodeId,
    pub b: NodeId,
    /// Bytes per second.
    pub capacity: f64,
    pub propagation: SimTime,
    pub alive: bool,
    /// Bumped on every failure so packets already on the wire can be dropped.
    pub epoch: u32,
    /// Bytes sent during the current monitoring window.
    pub window_bytes: u64,
    /// Bytes sent during the last completed window.
    pub last_window_bytes: u64,
    pub total_bytes: u64,
}

impl Link {
    pub fn other(&self, n: NodeId) -> NodeId {
        if n == self.a {
            self.b
        } else {
            self.a
        }
    }

    pub fn touches(&self, n: NodeId) -> bool {
        self.a == n || self.b == n
    }

    /// Serialization plus propagation delay for `bytes`.
    pub fn transit_delay(&self, bytes: u32) -> SimTime {
        SimTime::from_secs_f64(f64::from(bytes) / self.capacity) + self.propagation
    }
}

#[derive(Debug, Clone, Default)]
pub struct Topology {
    nodes: Vec<Node>,
    links: Vec<Link>,
    adjacency: Vec<Vec<LinkId>>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, name: &str, kind: NodeKind, addr: Option<Ipv4Addr>) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node {
            id,
            name: name.to_string(),
            kind,
            addr,
        });
        self.adjacency.push(Vec::new());
        id
    }

    pub fn add_link(
        &mut self,
        name: &str,
        a: NodeId,
        b: NodeId,
        capacity: f64,
        propagation: SimTime,
    ) -> LinkId {
        let id = LinkId(self.links.len() as u32);
        self.links.push(Link {
            id,
            name: name.to_string(),
            a,
            b,
            capacity,
            propagation,
            alive: true,
            epoch: 0,
            window_bytes: 0,
            last_window_bytes: 0,
            total_bytes: 0,
        });
        if let Some(adj) = self.adjacency.get_mut(a.0 as usize) {
            adj.push(id);
        }
        if a != b {
            if let Some(adj) = self.adjacency.get_mut(b.0 as usize) {
                adj.push(id);
            }
        }
        id
    }

    /// Checks structural invariants, collecting every problem found.
    pub fn validate(&self) -> Result<(), Vec<SimError>> {
        let mut errs = Vec::new();
        let mut names = HashSet::new();
        for n in &self.nodes {
            if !names.insert(n.name.as_str()) {
                errs.push(SimError::Config(format!(
                    "duplicate node name '{}'",
                    n.name
                )));
            }
            if matches!(n.kind, NodeKind::Host | NodeKind::Server) && n.addr.is_none() {
                errs.push(SimError::Config(format!(
                    "node '{}' needs an address",
                    n.name
                )));
            }
        }
        let mut link_names = HashSet::new();
        for l in &self.links {
            if !link_names.insert(l.name.as_str()) {
                errs.push(SimError::Config(format!(
                    "duplicate link name '{}'",
                    l.name
                )));
            }
            for end in [l.a, l.b] {
                if end.0 as usize >= self.nodes.len() {
                    errs.push(SimError::Config(format!(
                        "link '{}' references missing node {}",
                        l.name, end
                    )));
                }
            }
            if l.a == l.b {
                errs.push(SimError::Config(format!(
                    "link '{}' is a self-loop",
                    l.name
                )));
            }
            if !(l.capacity > 0.0 && l.capacity.is_finite()) {
                errs.push(SimError::Config(format!(
                    "link '{}' capacity must be > 0, got {}",
                    l.name, l.capacity
                )));
            }
        }
        if errs.is_empty() {
            for n in &self.nodes {
                if matches!(n.kind, NodeKind::Host | NodeKind::Server) {
                    let sw = self
                        .adjacency(n.id)
                        .iter()
                        .filter(|&&l| self.node(self.link(l).other(n.id)).kind == NodeKind::Switch)
                        .count();
                    if sw != 1 {
                        errs.push(SimError::Config(format!(
                            "{} '{}' must attach to exactly one switch (found {})",
                            if n.kind == NodeKind::Host {
                                "host"
                            } else {
                                "server"
                            },
                            n.name,
                            sw
                        )));
                    }
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0 as usize]
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0 as usize]
    }

    pub fn link_mut(&mut self, id: LinkId) -> &mut Link {
        &mut self.links[id.0 as usize]
    }

    pub fn adjacency(&self, id: NodeId) -> &[LinkId] {
        &self.adjacency[id.0 as usize]
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.id)
    }

    pub fn link_by_name(&self, name: &str) -> Option<LinkId> {
        self.links.iter().find(|l| l.name == name).map(|l| l.id)
    }

    pub fn node_by_addr(&self, addr: Ipv4Addr) -> Option<NodeId> {
        self.nodes
            .iter()
            .find(|n| n.addr == Some(addr))
            .map(|n| n.id)
    }

    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(move |n| n.kind == kind)
    }

    /// The single access link of a host or server and the switch behind it.
    pub fn attachment(&self, id: NodeId) -> Option<(LinkId, NodeId)> {
        self.adjacency(id).iter().find_map(|&l| {
            let other = self.link(l).other(id);
            (self.node(other).kind == NodeKind::Switch).then_some((l, other))
        })
    }

    pub fn is_access_link(&self, l: LinkId) -> bool {
        let link = self.link(l);
        [link.a, link.b]
            .iter()
            .any(|&n| matches!(self.node(n).kind, NodeKind::Host | NodeKind::Server))
    }

    /// Utilization of the last completed window as a fraction of capacity.
    pub fn utilization(&self, l: LinkId, window: SimTime) -> f64 {
        let link = self.link(l);
        link.last_window_bytes as f64 / (link.capacity * window.as_secs_f64())
    }

    /// Closes the current utilization window on every link.
    pub fn rotate_windows(&mut self) {
        for l in &mut self.links {
            l.last_window_bytes = l.window_bytes;
            l.window_bytes = 0;
        }
    }

    /// Node sequence visited by a path of links starting at `from`.
    pub fn path_nodes(&self, from: NodeId, path: &[LinkId]) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(path.len() + 1);
        let mut cur = from;
        out.push(cur);
        for &l in path {
            cur = self.link(l).other(cur);
            out.push(cur);
        }
        out
    }

    /// The testbed layout: clients on an edge switch, a chain through an
    /// aggregation switch to the server edge switch, plus a bypass link
    /// between the two edge switches so two link-disjoint core paths exist.
    pub fn testbed(clients: usize, servers: usize, params: &LinkParams) -> Topology {
        let mut t = Topology::new();
        let sw_clients = t.add_node("sw1", NodeKind::Switch, None);
        let sw_agg = t.add_node("sw2", NodeKind::Switch, None);
        let sw_servers = t.add_node("sw3", NodeKind::Switch, None);
        t.add_node("ctrl", NodeKind::Controller, None);
        let core = params.core_capacity;
        let prop = params.propagation;
        t.add_link("sw1-sw2", sw_clients, sw_agg, core, prop);
        t.add_link("sw2-sw3", sw_agg, sw_servers, core, prop);
        t.add_link("sw1-sw3", sw_clients, sw_servers, core, prop);
        for i in 0..servers {
            let name = format!("srv{}", i + 1);
            let s = t.add_node(&name, NodeKind::Server, Some(server_addr(i)));
            t.add_link(
                &format!("sw3-{name}"),
                sw_servers,
                s,
                params.access_capacity,
                prop,
            );
        }
        for i in 0..clients {
            let name = format!("h{}", i + 1);
            let h = t.add_node(&name, NodeKind::Host, Some(client_addr(i)));
            t.add_link(
                &format!("{name}-sw1"),
                h,
                sw_clients,
                params.access_capacity,
                prop,
            );
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkParams {
    pub core_capacity: f64,
    pub access_capacity: f64,
    pub propagation: SimTime,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            core_capacity: 125_000_000.0,
            access_capacity: 125_000_000.0,
            propagation: SimTime::from_nanos(50_000),
        }
    }
}

pub fn server_addr(i: usize) -> Ipv4Addr {
    Ipv4Addr::new(10, 0, 0, (i + 1) as u8)
}

pub fn client_addr(i: usize) -> Ipv4Addr {
    Ipv4Addr::new(10, 0, 1 + (i / 250) as u8, (i % 250 + 1) as u8)
}
