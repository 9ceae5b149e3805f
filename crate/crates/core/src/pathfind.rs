//! Depth-bounded enumeration of simple directed paths between attacker pairs
//! and bottleneck probing.
//!
//! Paths are emitted shortest first and, within one length, in lexicographic
//! order of their hop ids. Enumeration runs one exact-length depth-first pass
//! per length, pruned by the hop distance to the destination, and stops as
//! soon as `max_paths` paths are collected.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use rand::Rng;
use thiserror::Error;

use crate::graph::{GraphError, NodeId, PcnGraph, Sat};

/// Lightning's route length cap.
pub const DEFAULT_L_MAX: usize = 20;
pub const DEFAULT_MAX_PATHS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PathError {
    #[error("path is broken at {0}->{1}")]
    BrokenPath(NodeId, NodeId),
    #[error("noise must lie in [0, 1], got {0}")]
    InvalidNoise(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathRecord {
    pub source: NodeId,
    pub dest: NodeId,
    pub hops: Vec<NodeId>,
    /// Directed balances per channel at the last probe.
    pub balances: Vec<Sat>,
    pub bottleneck: Sat,
    pub probe_time: u64,
}

impl PathRecord {
    /// Number of channels.
    pub fn length(&self) -> usize {
        self.hops.len().saturating_sub(1)
    }

    /// Channels as directed (from, to) pairs in path order.
    pub fn channels(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.hops.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn is_simple(&self) -> bool {
        let mut seen = self.hops.clone();
        seen.sort_unstable();
        seen.windows(2).all(|w| w[0] != w[1])
    }
}

pub fn hop_count(path: &PathRecord) -> usize {
    path.length()
}

/// Compact adjacency restricted to edges with positive directed balance.
struct Adjacency {
    ids: Vec<NodeId>,
    index: BTreeMap<NodeId, usize>,
    out: Vec<Vec<usize>>,
    inc: Vec<Vec<usize>>,
}

impl Adjacency {
    fn new(graph: &PcnGraph) -> Self {
        let ids: Vec<NodeId> = graph.nodes().collect();
        let index: BTreeMap<NodeId, usize> = ids.iter().enumerate().map(|(i, &n)| (n, i)).collect();
        let mut out = vec![Vec::new(); ids.len()];
        let mut inc = vec![Vec::new(); ids.len()];
        for (i, &n) in ids.iter().enumerate() {
            // neighbors() is sorted by id, and ids are indexed in the same order
            for m in graph.neighbors(n) {
                if graph.directed_balance(n, m).unwrap_or(0) > 0 {
                    let j = index[&m];
                    out[i].push(j);
                    inc[j].push(i);
                }
            }
        }
        Adjacency { ids, index, out, inc }
    }

    /// Hop distance from every node to `dest` over positive-balance edges.
    fn distances_to(&self, dest: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.ids.len()];
        dist[dest] = 0;
        let mut queue = VecDeque::from([dest]);
        while let Some(v) = queue.pop_front() {
            for &u in &self.inc[v] {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        dist
    }
}

/// Fruitless expansions after which the search starts checking, at every
/// node, that the destination is still reachable without revisiting the
/// current path. The check is exact, so it changes speed, not results.
const REACH_CHECK_AFTER: usize = 512;

struct Search<'a> {
    adj: &'a Adjacency,
    dist: &'a [usize],
    dest: usize,
    target_len: usize,
    limit: usize,
    on_path: Vec<bool>,
    stack: Vec<usize>,
    found: Vec<Vec<usize>>,
    fruitless: usize,
    seen: Vec<u32>,
    stamp: u32,
    queue: VecDeque<(usize, usize)>,
}

impl Search<'_> {
    fn new<'a>(
        adj: &'a Adjacency,
        dist: &'a [usize],
        source: usize,
        dest: usize,
        target_len: usize,
        limit: usize,
    ) -> Search<'a> {
        let mut on_path = vec![false; adj.ids.len()];
        on_path[source] = true;
        Search {
            adj,
            dist,
            dest,
            target_len,
            limit,
            on_path,
            stack: vec![source],
            found: Vec::new(),
            fruitless: 0,
            seen: vec![0; adj.ids.len()],
            stamp: 0,
            queue: VecDeque::new(),
        }
    }

    /// Whether `dest` is reachable from `v` within `budget` hops through
    /// nodes that are not on the current path.
    fn reachable(&mut self, v: usize, budget: usize) -> bool {
        self.stamp += 1;
        let stamp = self.stamp;
        self.queue.clear();
        self.queue.push_back((self.dest, 0));
        self.seen[self.dest] = stamp;
        while let Some((u, d)) = self.queue.pop_front() {
            if d == budget {
                continue;
            }
            for &p in &self.adj.inc[u] {
                if p == v {
                    return true;
                }
                if self.seen[p] != stamp && !self.on_path[p] {
                    self.seen[p] = stamp;
                    self.queue.push_back((p, d + 1));
                }
            }
        }
        false
    }

    fn run(&mut self, v: usize) {
        if self.found.len() >= self.limit {
            return;
        }
        let depth = self.stack.len() - 1;
        if v == self.dest {
            if depth == self.target_len {
                self.found.push(self.stack.clone());
                self.fruitless = 0;
            }
            return;
        }
        self.fruitless += 1;
        if self.fruitless > REACH_CHECK_AFTER && !self.reachable(v, self.target_len - depth) {
            return;
        }
        for i in 0..self.adj.out[v].len() {
            let w = self.adj.out[v][i];
            if self.on_path[w] || self.dist[w] == usize::MAX || depth + 1 + self.dist[w] > self.target_len {
                continue;
            }
            self.on_path[w] = true;
            self.stack.push(w);
            self.run(w);
            self.stack.pop();
            self.on_path[w] = false;
            if self.found.len() >= self.limit {
                return;
            }
        }
    }
}

/// Simple paths from `source` to `dest` whose every directed balance is
/// positive, at most `l_max` channels long, at most `max_paths` of them.
/// Returned records are probed at the current block height without noise.
pub fn find_all_paths(
    graph: &PcnGraph,
    source: NodeId,
    dest: NodeId,
    l_max: usize,
    max_paths: usize,
) -> Vec<PathRecord> {
    if source == dest || !graph.contains_node(source) || !graph.contains_node(dest) {
        return Vec::new();
    }
    let adj = Adjacency::new(graph);
    find_with(&adj, graph, source, dest, l_max, max_paths)
}

fn find_with(
    adj: &Adjacency,
    graph: &PcnGraph,
    source: NodeId,
    dest: NodeId,
    l_max: usize,
    max_paths: usize,
) -> Vec<PathRecord> {
    let (s, d) = (adj.index[&source], adj.index[&dest]);
    let dist = adj.distances_to(d);
    if dist[s] == usize::MAX || dist[s] > l_max || max_paths == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for len in dist[s]..=l_max {
        let mut search = Search::new(adj, &dist, s, d, len, max_paths - out.len());
        search.run(s);
        out.extend(search.found);
        if out.len() >= max_paths {
            break;
        }
    }
    out.into_iter()
        .map(|idx| {
            let hops: Vec<NodeId> = idx.iter().map(|&i| adj.ids[i]).collect();
            let mut rec = PathRecord {
                source,
                dest,
                hops,
                balances: Vec::new(),
                bottleneck: 0,
                probe_time: graph.block_height(),
            };
            probe_exact(graph, &mut rec).expect("enumerated path exists");
            rec
        })
        .collect()
}

/// Paths from `source` to every destination, grouped in destination order.
pub fn find_paths_to_many(
    graph: &PcnGraph,
    source: NodeId,
    dests: &[NodeId],
    l_max: usize,
    max_paths: usize,
) -> Vec<PathRecord> {
    if !graph.contains_node(source) {
        return Vec::new();
    }
    let adj = Adjacency::new(graph);
    dests
        .iter()
        .filter(|&&d| d != source && graph.contains_node(d))
        .flat_map(|&d| find_with(&adj, graph, source, d, l_max, max_paths))
        .collect()
}

fn probe_exact(graph: &PcnGraph, path: &mut PathRecord) -> Result<Sat, PathError> {
    let balances = path
        .channels()
        .map(|(a, b)| graph.directed_balance(a, b).map_err(|_| PathError::BrokenPath(a, b)))
        .collect::<Result<Vec<_>, _>>()?;
    path.bottleneck = balances.iter().copied().min().unwrap_or(0);
    path.balances = balances;
    path.probe_time = graph.block_height();
    Ok(path.bottleneck)
}

/// Probes the path's bottleneck. With `noise > 0` the per-channel estimates
/// are the true balances scaled by one factor drawn from `[1 - noise, 1]`, so
/// the estimate never exceeds the truth.
pub fn probe<R: Rng + ?Sized>(
    graph: &PcnGraph,
    path: &mut PathRecord,
    noise: f64,
    rng: &mut R,
) -> Result<Sat, PathError> {
    if !(0.0..=1.0).contains(&noise) {
        return Err(PathError::InvalidNoise(noise.to_string()));
    }
    probe_exact(graph, path)?;
    if noise > 0.0 {
        let factor = rng.gen_range((1.0 - noise)..=1.0);
        for b in &mut path.balances {
            *b = (*b as f64 * factor).floor() as Sat;
        }
        path.bottleneck = path.balances.iter().copied().min().unwrap_or(0);
    }
    Ok(path.bottleneck)
}

/// Mean and max shortest-path length between attacker pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct PathLengthDiagnostics {
    pub mean: f64,
    pub max: usize,
    pub lengths: Vec<usize>,
}

impl PathLengthDiagnostics {
    pub fn accepts(&self, target_mean: f64, target_max: usize) -> bool {
        (self.mean - target_mean).abs() <= 1.0 && self.max <= target_max
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CalibrationError {
    #[error("no attacker pairs given")]
    NoPairs,
    #[error("no path between {0} and {1}")]
    NoPathBetweenPair(NodeId, NodeId),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Shortest hop distance for every pair, ignoring balances.
pub fn calibrate_path_lengths(
    graph: &PcnGraph,
    pairs: &[(NodeId, NodeId)],
) -> Result<PathLengthDiagnostics, CalibrationError> {
    if pairs.is_empty() {
        return Err(CalibrationError::NoPairs);
    }
    let mut lengths = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        for n in [a, b] {
            if !graph.contains_node(n) {
                return Err(GraphError::UnknownNode(n).into());
            }
        }
        let mut dist = BTreeMap::from([(a, 0usize)]);
        let mut queue = VecDeque::from([a]);
        while let Some(v) = queue.pop_front() {
            if v == b {
                break;
            }
            let dv = dist[&v];
            for w in graph.neighbors(v) {
                dist.entry(w).or_insert_with(|| {
                    queue.push_back(w);
                    dv + 1
                });
            }
        }
        match dist.get(&b) {
            Some(&d) => lengths.push(d),
            None => return Err(CalibrationError::NoPathBetweenPair(a, b)),
        }
    }
    Ok(PathLengthDiagnostics {
        mean: lengths.iter().sum::<usize>() as f64 / lengths.len() as f64,
        max: lengths.iter().copied().max().unwrap_or(0),
        lengths,
    })
}

/// Writes `pair_id, path_index, length, bottleneck, hops` rows.
pub fn write_paths_csv<W: Write>(out: W, paths: &[PathRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pair_id", "path_index", "length", "bottleneck", "hops"])?;
    let mut index_in_pair: BTreeMap<(NodeId, NodeId), usize> = BTreeMap::new();
    for p in paths {
        let idx = index_in_pair.entry((p.source, p.dest)).or_insert(0);
        let hops: Vec<String> = p.hops.iter().map(|h| h.to_string()).collect();
        w.write_record([
            format!("{}-{}", p.source, p.dest),
            idx.to_string(),
            p.length().to_string(),
            p.bottleneck.to_string(),
            hops.join(";"),
        ])?;
        *idx += 1;
    }
    w.flush()?;
    Ok(())
}
