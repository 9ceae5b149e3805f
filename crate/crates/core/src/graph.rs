//! Directed-balance payment channel network model.
//!
//! Every channel is stored once per unordered node pair. The two directions
//! carry independent spendable balances, and funds that sit in pending HTLCs
//! are tracked separately per direction so that
//! `balance_xy + balance_yx + locked == capacity` holds after every operation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Amounts are whole satoshi.
pub type Sat = u64;

/// Default per-direction HTLC slot limit of Lightning implementations.
pub const DEFAULT_MAX_ACCEPTED_HTLCS: u32 = 483;
/// Default dust threshold (5.46e-6 BTC).
pub const DEFAULT_HTLC_MINIMUM: Sat = 546;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("node {0} already exists")]
    DuplicateNode(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("channel endpoints must differ (got {0} twice)")]
    DuplicateEndpoint(NodeId),
    #[error("channel {0}-{1} already exists")]
    DuplicateChannel(NodeId, NodeId),
    #[error("channel {0}-{1} must be funded")]
    EmptyChannel(NodeId, NodeId),
    #[error("no channel between {0} and {1}")]
    NoSuchChannel(NodeId, NodeId),
    #[error("insufficient balance {from}->{to}: need {needed}, have {available}")]
    InsufficientBalance {
        from: NodeId,
        to: NodeId,
        needed: Sat,
        available: Sat,
    },
    #[error("no pending funds to release {from}->{to}: need {needed}, locked {locked}")]
    NothingLocked {
        from: NodeId,
        to: NodeId,
        needed: Sat,
        locked: Sat,
    },
    #[error("invalid graph document: {0}")]
    InvalidDocument(String),
}

/// A payment channel between `x` and `y`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelState {
    pub x: NodeId,
    pub y: NodeId,
    pub balance_xy: Sat,
    pub balance_yx: Sat,
    pub capacity: Sat,
    pub max_accepted_htlcs: u32,
    pub htlc_minimum: Sat,
    pub pending_htlcs_xy: u32,
    pub pending_htlcs_yx: u32,
    pub locked_xy: Sat,
    pub locked_yx: Sat,
}

impl ChannelState {
    fn new(x: NodeId, y: NodeId, fund_xy: Sat, fund_yx: Sat) -> Self {
        ChannelState {
            x,
            y,
            balance_xy: fund_xy,
            balance_yx: fund_yx,
            capacity: fund_xy + fund_yx,
            max_accepted_htlcs: DEFAULT_MAX_ACCEPTED_HTLCS,
            htlc_minimum: DEFAULT_HTLC_MINIMUM,
            pending_htlcs_xy: 0,
            pending_htlcs_yx: 0,
            locked_xy: 0,
            locked_yx: 0,
        }
    }

    /// Spendable balance in the `from -> other endpoint` direction.
    pub fn balance_from(&self, from: NodeId) -> Sat {
        if from == self.x {
            self.balance_xy
        } else {
            self.balance_yx
        }
    }

    pub fn pending_from(&self, from: NodeId) -> u32 {
        if from == self.x {
            self.pending_htlcs_xy
        } else {
            self.pending_htlcs_yx
        }
    }

    pub fn locked_from(&self, from: NodeId) -> Sat {
        if from == self.x {
            self.locked_xy
        } else {
            self.locked_yx
        }
    }

    pub fn locked_total(&self) -> Sat {
        self.locked_xy + self.locked_yx
    }

    pub fn other(&self, node: NodeId) -> NodeId {
        if node == self.x {
            self.y
        } else {
            self.x
        }
    }

    /// True when the conservation identity holds.
    pub fn is_conserved(&self) -> bool {
        self.balance_xy + self.balance_yx + self.locked_total() == self.capacity
    }

    fn direction_mut(&mut self, from: NodeId) -> (&mut Sat, &mut Sat, &mut Sat, &mut u32) {
        if from == self.x {
            (
                &mut self.balance_xy,
                &mut self.balance_yx,
                &mut self.locked_xy,
                &mut self.pending_htlcs_xy,
            )
        } else {
            (
                &mut self.balance_yx,
                &mut self.balance_xy,
                &mut self.locked_yx,
                &mut self.pending_htlcs_yx,
            )
        }
    }
}

fn key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// The network: nodes, channels, a block-height clock and the Sybil set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PcnGraph {
    nodes: BTreeSet<NodeId>,
    channels: BTreeMap<(NodeId, NodeId), ChannelState>,
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
    block_height: u64,
    sybil_set: BTreeSet<NodeId>,
}

impl PcnGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: NodeId) -> Result<(), GraphError> {
        if !self.nodes.insert(id) {
            return Err(GraphError::DuplicateNode(id));
        }
        self.adjacency.insert(id, BTreeSet::new());
        Ok(())
    }

    /// Adds a node with the next free identifier.
    pub fn add_fresh_node(&mut self) -> NodeId {
        let id = NodeId(self.nodes.iter().next_back().map_or(0, |n| n.0 + 1));
        self.add_node(id).expect("fresh id is unused");
        id
    }

    pub fn contains_node(&self, id: NodeId) -> bool {
        self.nodes.contains(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> impl Iterator<Item = &ChannelState> {
        self.channels.values()
    }

    pub fn open_channel(
        &mut self,
        x: NodeId,
        y: NodeId,
        fund_xy: Sat,
        fund_yx: Sat,
    ) -> Result<&ChannelState, GraphError> {
        if x == y {
            return Err(GraphError::DuplicateEndpoint(x));
        }
        for n in [x, y] {
            if !self.nodes.contains(&n) {
                return Err(GraphError::UnknownNode(n));
            }
        }
        let k = key(x, y);
        if self.channels.contains_key(&k) {
            return Err(GraphError::DuplicateChannel(x, y));
        }
        if fund_xy.checked_add(fund_yx).is_none_or(|c| c == 0) {
            return Err(GraphError::EmptyChannel(x, y));
        }
        self.adjacency.entry(x).or_default().insert(y);
        self.adjacency.entry(y).or_default().insert(x);
        Ok(self
            .channels
            .entry(k)
            .or_insert_with(|| ChannelState::new(x, y, fund_xy, fund_yx)))
    }

    pub fn channel(&self, a: NodeId, b: NodeId) -> Option<&ChannelState> {
        self.channels.get(&key(a, b))
    }

    pub(crate) fn channel_mut(&mut self, a: NodeId, b: NodeId) -> Option<&mut ChannelState> {
        self.channels.get_mut(&key(a, b))
    }

    /// Sets the HTLC policy limits of an existing channel.
    pub fn set_channel_policy(
        &mut self,
        a: NodeId,
        b: NodeId,
        max_accepted_htlcs: u32,
        htlc_minimum: Sat,
    ) -> Result<(), GraphError> {
        let ch = self.channel_mut(a, b).ok_or(GraphError::NoSuchChannel(a, b))?;
        ch.max_accepted_htlcs = max_accepted_htlcs;
        ch.htlc_minimum = htlc_minimum;
        Ok(())
    }

    /// Coins `from` can currently forward to `to`, excluding HTLC-locked funds.
    pub fn directed_balance(&self, from: NodeId, to: NodeId) -> Result<Sat, GraphError> {
        self.channel(from, to)
            .map(|c| c.balance_from(from))
            .ok_or(GraphError::NoSuchChannel(from, to))
    }

    /// Neighbors of `node` in ascending id order.
    pub fn neighbors(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.get(&node).into_iter().flatten().copied()
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.adjacency.get(&node).map_or(0, |s| s.len())
    }

    /// Moves `amount` from the spendable `from -> to` balance into a pending
    /// HTLC on that direction.
    pub(crate) fn lock(&mut self, from: NodeId, to: NodeId, amount: Sat) -> Result<(), GraphError> {
        let ch = self.channel_mut(from, to).ok_or(GraphError::NoSuchChannel(from, to))?;
        let (bal, _, locked, pending) = ch.direction_mut(from);
        if *bal < amount {
            return Err(GraphError::InsufficientBalance {
                from,
                to,
                needed: amount,
                available: *bal,
            });
        }
        *bal -= amount;
        *locked += amount;
        *pending += 1;
        Ok(())
    }

    /// Resolves a pending HTLC: refunded to the sender on failure, credited to
    /// the receiver on fulfillment.
    pub(crate) fn unlock(&mut self, from: NodeId, to: NodeId, amount: Sat, fulfilled: bool) -> Result<(), GraphError> {
        let ch = self.channel_mut(from, to).ok_or(GraphError::NoSuchChannel(from, to))?;
        let (bal, counter, locked, pending) = ch.direction_mut(from);
        if *locked < amount || *pending == 0 {
            return Err(GraphError::NothingLocked {
                from,
                to,
                needed: amount,
                locked: *locked,
            });
        }
        *locked -= amount;
        *pending -= 1;
        if fulfilled {
            *counter += amount;
        } else {
            *bal += amount;
        }
        Ok(())
    }

    pub fn block_height(&self) -> u64 {
        self.block_height
    }

    /// Advances the clock; heights below the current one are ignored.
    pub fn advance_to(&mut self, height: u64) {
        self.block_height = self.block_height.max(height);
    }

    pub fn sybil_set(&self) -> &BTreeSet<NodeId> {
        &self.sybil_set
    }

    pub fn is_sybil(&self, id: NodeId) -> bool {
        self.sybil_set.contains(&id)
    }

    pub fn mark_sybil(&mut self, id: NodeId) -> Result<(), GraphError> {
        if !self.nodes.contains(&id) {
            return Err(GraphError::UnknownNode(id));
        }
        self.sybil_set.insert(id);
        Ok(())
    }

    /// True when every node reaches every other over channels (ignoring balances).
    pub fn is_connected(&self) -> bool {
        let Some(&start) = self.nodes.iter().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            for m in self.neighbors(n) {
                if seen.insert(m) {
                    stack.push(m);
                }
            }
        }
        seen.len() == self.nodes.len()
    }

    pub fn snapshot(&self) -> GraphSnapshot {
        GraphSnapshot { graph: self.clone() }
    }

    pub fn restore(snapshot: &GraphSnapshot) -> PcnGraph {
        snapshot.graph.clone()
    }

    /// Total locked funds and conservation status over all channels.
    pub fn check_conservation(&self) -> bool {
        self.channels.values().all(ChannelState::is_conserved)
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            nodes: self
                .nodes
                .iter()
                .map(|&id| NodeEntry {
                    id,
                    sybil: self.is_sybil(id),
                })
                .collect(),
            channels: self
                .channels
                .values()
                .map(|c| ChannelEntry {
                    x: c.x,
                    y: c.y,
                    balance_xy: c.balance_xy + c.locked_xy,
                    balance_yx: c.balance_yx + c.locked_yx,
                    max_accepted_htlcs: c.max_accepted_htlcs,
                    htlc_minimum: c.htlc_minimum,
                })
                .collect(),
            attack_pairs: Vec::new(),
        }
    }

    pub fn from_document(doc: &GraphDocument) -> Result<PcnGraph, GraphError> {
        let mut g = PcnGraph::new();
        for n in &doc.nodes {
            g.add_node(n.id)?;
            if n.sybil {
                g.mark_sybil(n.id)?;
            }
        }
        for c in &doc.channels {
            g.open_channel(c.x, c.y, c.balance_xy, c.balance_yx)?;
            g.set_channel_policy(c.x, c.y, c.max_accepted_htlcs, c.htlc_minimum)?;
        }
        Ok(g)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("graph document serializes")
    }

    pub fn from_json(text: &str) -> Result<PcnGraph, GraphError> {
        let doc: GraphDocument = serde_json::from_str(text).map_err(|e| GraphError::InvalidDocument(e.to_string()))?;
        Self::from_document(&doc)
    }
}

/// Immutable copy of a graph's full state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphSnapshot {
    graph: PcnGraph,
}

impl GraphSnapshot {
    pub fn graph(&self) -> &PcnGraph {
        &self.graph
    }
}

/// JSON interchange form. Pending HTLC amounts are folded back into the
/// sender-side balance on export.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub nodes: Vec<NodeEntry>,
    pub channels: Vec<ChannelEntry>,
    /// Optional (sender, receiver) Sybil pairs; not part of graph state.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attack_pairs: Vec<(NodeId, NodeId)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeEntry {
    pub id: NodeId,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub sybil: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelEntry {
    pub x: NodeId,
    pub y: NodeId,
    pub balance_xy: Sat,
    pub balance_yx: Sat,
    #[serde(default = "default_max_htlcs")]
    pub max_accepted_htlcs: u32,
    #[serde(default = "default_htlc_minimum")]
    pub htlc_minimum: Sat,
}

fn default_max_htlcs() -> u32 {
    DEFAULT_MAX_ACCEPTED_HTLCS
}

fn default_htlc_minimum() -> Sat {
    DEFAULT_HTLC_MINIMUM
}
