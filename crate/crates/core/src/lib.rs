//! Congestion attack laboratory for payment channel networks.
//!
//! The crate models a network of payment channels with directed balances,
//! generates synthetic topologies with attached Sybil nodes, enumerates and
//! probes attack paths, plans attack allocations (payment minimization under
//! an SPCR threshold, SPCR maximization under a budget, and two baselines),
//! locks them with HTLCs and measures the resulting congestion.

pub mod graph;
pub mod harness;
pub mod htlc;
pub mod lp;
pub mod metrics;
pub mod netgen;
pub mod pathfind;
pub mod planner;

pub use graph::{ChannelState, GraphError, GraphSnapshot, NodeId, PcnGraph, Sat};
pub use planner::Strategy;
