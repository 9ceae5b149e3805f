//! Synthetic honest topologies and Sybil attachment.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, NodeId, PcnGraph, Sat};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphModel {
    PreferentialAttachment,
    SmallWorld,
    ErdosRenyi,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapacityDistribution {
    Exponential,
    Uniform,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BalanceSplit {
    UniformRandom,
    Even,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Attachment {
    Random,
    HighestDegree,
    HighestCapacity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub honest_node_count: usize,
    pub graph_model: GraphModel,
    /// Channels each arriving node opens (preferential attachment), half the
    /// ring degree (small world), or half the mean degree (Erdos-Renyi).
    pub edges_per_node: usize,
    pub mean_capacity: Sat,
    pub capacity_distribution: CapacityDistribution,
    pub balance_split: BalanceSplit,
    pub rng_seed: u64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            honest_node_count: 200,
            graph_model: GraphModel::PreferentialAttachment,
            edges_per_node: 2,
            mean_capacity: 4_000_000,
            capacity_distribution: CapacityDistribution::Exponential,
            balance_split: BalanceSplit::UniformRandom,
            rng_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SybilConfig {
    pub pair_count: usize,
    pub attachment: Attachment,
    pub channels_per_sybil: usize,
    pub sybil_funding: Sat,
}

impl Default for SybilConfig {
    fn default() -> Self {
        SybilConfig {
            pair_count: 6,
            attachment: Attachment::Random,
            channels_per_sybil: 1,
            sybil_funding: 50_000_000,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetgenError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("need {needed} honest targets, graph has {available}")]
    InsufficientTargets { needed: usize, available: usize },
    #[error("could not generate a connected graph")]
    Disconnected,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<(), NetgenError> {
        if self.honest_node_count < 2 {
            return Err(NetgenError::InvalidConfig("honest_node_count must be >= 2".into()));
        }
        if self.mean_capacity == 0 {
            return Err(NetgenError::InvalidConfig("mean_capacity must be > 0".into()));
        }
        if self.edges_per_node == 0 {
            return Err(NetgenError::InvalidConfig("edges_per_node must be >= 1".into()));
        }
        Ok(())
    }
}

impl SybilConfig {
    pub fn validate(&self) -> Result<(), NetgenError> {
        if self.pair_count == 0 {
            return Err(NetgenError::InvalidConfig("pair_count must be >= 1".into()));
        }
        if self.channels_per_sybil == 0 {
            return Err(NetgenError::InvalidConfig("channels_per_sybil must be >= 1".into()));
        }
        if self.sybil_funding == 0 {
            return Err(NetgenError::InvalidConfig("sybil_funding must be > 0".into()));
        }
        Ok(())
    }
}

fn sample_capacity<R: Rng>(cfg: &TopologyConfig, rng: &mut R) -> Sat {
    let mean = cfg.mean_capacity as f64;
    let c = match cfg.capacity_distribution {
        CapacityDistribution::Exponential => Exp::new(1.0 / mean).expect("positive rate").sample(rng),
        CapacityDistribution::Uniform => rng.gen_range(0.0..2.0 * mean),
    };
    (c.round() as Sat).max(1)
}

fn split<R: Rng>(cfg: &TopologyConfig, capacity: Sat, rng: &mut R) -> (Sat, Sat) {
    let xy = match cfg.balance_split {
        BalanceSplit::UniformRandom => (capacity as f64 * rng.gen::<f64>()).floor() as Sat,
        BalanceSplit::Even => capacity / 2,
    };
    let xy = xy.min(capacity);
    (xy, capacity - xy)
}

fn edges_preferential<R: Rng>(n: usize, m: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    // endpoint list: a node appears once per incident edge
    let mut endpoints: Vec<usize> = Vec::new();
    let seed = (m + 1).min(n);
    for i in 0..seed {
        for j in 0..i {
            edges.push((j, i));
            endpoints.extend([j, i]);
        }
    }
    for v in seed..n {
        let mut chosen: Vec<usize> = Vec::with_capacity(m);
        while chosen.len() < m.min(v) {
            let u = endpoints[rng.gen_range(0..endpoints.len())];
            if !chosen.contains(&u) {
                chosen.push(u);
            }
        }
        chosen.sort_unstable();
        for u in chosen {
            edges.push((u, v));
            endpoints.extend([u, v]);
        }
    }
    edges
}

fn edges_small_world<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<(usize, usize)> {
    const REWIRE: f64 = 0.1;
    let k = k.min((n - 1) / 2).max(1);
    let mut adj = vec![std::collections::BTreeSet::new(); n];
    for v in 0..n {
        for d in 1..=k {
            let u = (v + d) % n;
            if u != v {
                adj[v].insert(u);
                adj[u].insert(v);
            }
        }
    }
    for v in 0..n {
        for d in 1..=k {
            let u = (v + d) % n;
            if !adj[v].contains(&u) || rng.gen::<f64>() >= REWIRE {
                continue;
            }
            let w = rng.gen_range(0..n);
            if w != v && !adj[v].contains(&w) {
                adj[v].remove(&u);
                adj[u].remove(&v);
                adj[v].insert(w);
                adj[w].insert(v);
            }
        }
    }
    let mut edges = Vec::new();
    for (v, set) in adj.iter().enumerate() {
        for &u in set.range(v + 1..) {
            edges.push((v, u));
        }
    }
    edges
}

fn edges_erdos_renyi<R: Rng>(n: usize, half_degree: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let p = (2.0 * half_degree as f64 / (n - 1) as f64).min(1.0);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Builds a connected honest network with nodes `0..honest_node_count`.
/// Models that can produce disconnected graphs are redrawn from the same
/// RNG stream until connected.
pub fn generate_topology(cfg: &TopologyConfig) -> Result<PcnGraph, NetgenError> {
    const MAX_ATTEMPTS: usize = 1000;
    cfg.validate()?;
    let n = cfg.honest_node_count;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    for _ in 0..MAX_ATTEMPTS {
        let edges = match cfg.graph_model {
            GraphModel::PreferentialAttachment => edges_preferential(n, cfg.edges_per_node, &mut rng),
            GraphModel::SmallWorld => edges_small_world(n, cfg.edges_per_node, &mut rng),
            GraphModel::ErdosRenyi => edges_erdos_renyi(n, cfg.edges_per_node, &mut rng),
        };
        let mut g = PcnGraph::new();
        for i in 0..n {
            g.add_node(NodeId(i as u32))?;
        }
        for (a, b) in edges {
            let cap = sample_capacity(cfg, &mut rng);
            let (xy, yx) = split(cfg, cap, &mut rng);
            g.open_channel(NodeId(a as u32), NodeId(b as u32), xy, yx)?;
        }
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(NetgenError::Disconnected)
}

fn rank_targets(graph: &PcnGraph, honest: &[NodeId], attachment: Attachment) -> Vec<NodeId> {
    let mut ranked = honest.to_vec();
    match attachment {
        Attachment::Random => {}
        Attachment::HighestDegree => {
            ranked.sort_by_key(|&n| (std::cmp::Reverse(graph.degree(n)), n));
        }
        Attachment::HighestCapacity => {
            let cap = |n: NodeId| -> Sat {
                graph
                    .neighbors(n)
                    .filter_map(|m| graph.channel(n, m))
                    .map(|c| c.capacity)
                    .sum()
            };
            ranked.sort_by_key(|&n| (std::cmp::Reverse(cap(n)), n));
        }
    }
    ranked
}

/// Adds `2 * pair_count` Sybil nodes and opens their channels. Returns the
/// `(sender, receiver)` pairs in creation order.
///
/// Sender Sybils hold the whole funding of their channels on their own side.
/// Receiver Sybils' channels are funded on the honest side, so payments can
/// terminate at them.
pub fn attach_sybils<R: Rng>(
    graph: &mut PcnGraph,
    cfg: &SybilConfig,
    rng: &mut R,
) -> Result<Vec<(NodeId, NodeId)>, NetgenError> {
    cfg.validate()?;
    let honest: Vec<NodeId> = graph.nodes().filter(|&n| !graph.is_sybil(n)).collect();
    if honest.len() < cfg.channels_per_sybil {
        return Err(NetgenError::InsufficientTargets {
            needed: cfg.channels_per_sybil,
            available: honest.len(),
        });
    }
    let ranked = rank_targets(graph, &honest, cfg.attachment);
    let mut pairs = Vec::with_capacity(cfg.pair_count);
    for _ in 0..cfg.pair_count {
        let sender = graph.add_fresh_node();
        let receiver = graph.add_fresh_node();
        for (sybil, outbound) in [(sender, true), (receiver, false)] {
            graph.mark_sybil(sybil)?;
            let targets: Vec<NodeId> = match cfg.attachment {
                Attachment::Random => ranked.choose_multiple(rng, cfg.channels_per_sybil).copied().collect(),
                _ => ranked[..cfg.channels_per_sybil].to_vec(),
            };
            for t in targets {
                let (to_target, from_target) = if outbound {
                    (cfg.sybil_funding, 0)
                } else {
                    (0, cfg.sybil_funding)
                };
                graph.open_channel(sybil, t, to_target, from_target)?;
            }
        }
        pairs.push((sender, receiver));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = TopologyConfig {
            rng_seed: 7,
            ..Default::default()
        };
        let a = generate_topology(&cfg).unwrap();
        let b = generate_topology(&cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = generate_topology(&TopologyConfig { rng_seed: 8, ..cfg }).unwrap();
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn two_nodes_make_one_channel() {
        for model in [GraphModel::PreferentialAttachment, GraphModel::SmallWorld] {
            let cfg = TopologyConfig {
                honest_node_count: 2,
                graph_model: model,
                ..Default::default()
            };
            let g = generate_topology(&cfg).unwrap();
            assert_eq!(g.node_count(), 2);
            assert_eq!(g.channel_count(), 1);
        }
    }

    #[test]
    fn every_model_is_connected() {
        for model in [
            GraphModel::PreferentialAttachment,
            GraphModel::SmallWorld,
            GraphModel::ErdosRenyi,
        ] {
            for seed in 0..5 {
                let cfg = TopologyConfig {
                    honest_node_count: 60,
                    graph_model: model,
                    rng_seed: seed,
                    ..Default::default()
                };
                let g = generate_topology(&cfg).unwrap();
                assert!(g.is_connected(), "{model:?} seed {seed}");
                assert_eq!(g.node_count(), 60);
                assert!(g.check_conservation());
            }
        }
    }

    #[test]
    fn mean_capacity_matches_config() {
        // 5000 arrivals with two channels each gives roughly 10^4 channels.
        for dist in [CapacityDistribution::Exponential, CapacityDistribution::Uniform] {
            let cfg = TopologyConfig {
                honest_node_count: 5_000,
                capacity_distribution: dist,
                rng_seed: 11,
                ..Default::default()
            };
            let g = generate_topology(&cfg).unwrap();
            assert!(g.channel_count() >= 9_990);
            let mean = g.channels().map(|c| c.capacity as f64).sum::<f64>() / g.channel_count() as f64;
            assert!((mean / 4e6 - 1.0).abs() < 0.05, "{dist:?}: {mean}");
        }
    }

    #[test]
    fn invalid_configs() {
        let bad = TopologyConfig {
            honest_node_count: 1,
            ..Default::default()
        };
        assert!(matches!(generate_topology(&bad), Err(NetgenError::InvalidConfig(_))));
        let bad = TopologyConfig {
            mean_capacity: 0,
            ..Default::default()
        };
        assert!(matches!(generate_topology(&bad), Err(NetgenError::InvalidConfig(_))));
    }

    #[test]
    fn six_pairs_make_twelve_sybils() {
        let mut g = generate_topology(&TopologyConfig::default()).unwrap();
        let before: Vec<_> = g.channels().cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs = attach_sybils(&mut g, &SybilConfig::default(), &mut rng).unwrap();
        assert_eq!(pairs.len(), 6);
        assert_eq!(g.sybil_set().len(), 12);
        for (s, r) in &pairs {
            assert!(g.is_sybil(*s) && g.is_sybil(*r));
            assert_eq!(g.degree(*s), 1);
        }
        // honest channels untouched
        for c in before {
            assert_eq!(g.channel(c.x, c.y), Some(&c));
        }
    }

    #[test]
    fn highest_degree_on_star_picks_hub() {
        let mut g = PcnGraph::new();
        for i in 0..6 {
            g.add_node(NodeId(i)).unwrap();
        }
        for i in 1..6 {
            g.open_channel(NodeId(0), NodeId(i), 10, 10).unwrap();
        }
        let cfg = SybilConfig {
            pair_count: 2,
            attachment: Attachment::HighestDegree,
            channels_per_sybil: 1,
            sybil_funding: 77,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs = attach_sybils(&mut g, &cfg, &mut rng).unwrap();
        for (s, r) in pairs {
            for sybil in [s, r] {
                assert_eq!(g.neighbors(sybil).collect::<Vec<_>>(), vec![NodeId(0)]);
                assert_eq!(g.channel(sybil, NodeId(0)).unwrap().capacity, 77);
            }
            assert_eq!(g.directed_balance(s, NodeId(0)).unwrap(), 77);
            assert_eq!(g.directed_balance(NodeId(0), r).unwrap(), 77);
        }
    }

    #[test]
    fn highest_capacity_ranks_by_incident_capacity() {
        let mut g = PcnGraph::new();
        for i in 0..3 {
            g.add_node(NodeId(i)).unwrap();
        }
        g.open_channel(NodeId(0), NodeId(1), 1, 1).unwrap();
        g.open_channel(NodeId(1), NodeId(2), 50, 50).unwrap();
        let cfg = SybilConfig {
            pair_count: 1,
            attachment: Attachment::HighestCapacity,
            channels_per_sybil: 1,
            sybil_funding: 5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (s, _) = attach_sybils(&mut g, &cfg, &mut rng).unwrap()[0];
        assert_eq!(g.neighbors(s).collect::<Vec<_>>(), vec![NodeId(1)]);
    }

    #[test]
    fn too_few_targets() {
        let mut g = generate_topology(&TopologyConfig {
            honest_node_count: 2,
            ..Default::default()
        })
        .unwrap();
        let cfg = SybilConfig {
            channels_per_sybil: 3,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            attach_sybils(&mut g, &cfg, &mut rng).unwrap_err(),
            NetgenError::InsufficientTargets {
                needed: 3,
                available: 2
            }
        );
    }
}
