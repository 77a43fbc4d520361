//! Modularity and Louvain community detection.
//!
//! The optimizer works on a compact index graph ([`Graph`]); the tile-level
//! entry points translate an [`UndirectedTileNetwork`] into it and map the
//! result back to a [`Partition`] over tiles.
//!
//! Modularity is the weighted Newman form with resolution 1:
//!
//! ```text
//! Q = 1/(2m) * sum_ab [ w_ab - k_a k_b / (2m) ] * delta(c_a, c_b)
//! ```

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{locate_users, BBox, GridSpec, PostRecord, TileId};
use crate::network::{build_mention_network, filter_tiles, symmetrize, UndirectedTileNetwork};

/// Stop refining a level once a full pass gains less than this much modularity.
const MIN_LEVEL_GAIN: f64 = 1e-9;
const MAX_PASSES: usize = 1000;

/// Undirected weighted graph over dense node indices `0..n`.
#[derive(Debug, Clone)]
pub struct Graph {
    adj: Vec<Vec<(usize, f64)>>,
    self_loops: Vec<f64>,
    degree: Vec<f64>,
    total: f64,
}

impl Graph {
    /// Parallel edges accumulate. `(i, i, w)` becomes a self-loop.
    pub fn new(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut merged: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        let mut self_loops = vec![0.0; n];
        for &(a, b, w) in edges {
            assert!(a < n && b < n, "edge ({a}, {b}) out of range for {n} nodes");
            if w == 0.0 {
                continue;
            }
            if a == b {
                self_loops[a] += w;
            } else {
                *merged[a].entry(b).or_insert(0.0) += w;
                *merged[b].entry(a).or_insert(0.0) += w;
            }
        }
        let adj: Vec<Vec<(usize, f64)>> = merged
            .into_iter()
            .map(|m| m.into_iter().collect())
            .collect();
        let degree: Vec<f64> = adj
            .iter()
            .zip(&self_loops)
            .map(|(nbrs, sl)| nbrs.iter().map(|(_, w)| w).sum::<f64>() + 2.0 * sl)
            .collect();
        let total = degree.iter().sum::<f64>() / 2.0;
        Graph {
            adj,
            self_loops,
            degree,
            total,
        }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    /// Total edge weight `m`, self-loops counted once.
    pub fn total_weight(&self) -> f64 {
        self.total
    }

    /// Modularity of a labelling, summed per community as
    /// `sum_c [ in_c / m - (tot_c / 2m)^2 ]`.
    pub fn modularity(&self, labels: &[usize]) -> f64 {
        assert_eq!(labels.len(), self.node_count());
        if self.total <= 0.0 {
            return 0.0;
        }
        let mut internal: BTreeMap<usize, f64> = BTreeMap::new();
        let mut tot: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, nbrs) in self.adj.iter().enumerate() {
            let c = labels[i];
            *tot.entry(c).or_insert(0.0) += self.degree[i];
            let mut inside = self.self_loops[i];
            for &(j, w) in nbrs {
                // each edge seen from both ends
                if j > i && labels[j] == c {
                    inside += w;
                }
            }
            *internal.entry(c).or_insert(0.0) += inside;
        }
        if tot.len() == 1 {
            // exact; the summed form can round to -1e-17
            return 0.0;
        }
        let two_m = 2.0 * self.total;
        tot.iter()
            .map(|(c, t)| {
                internal.get(c).copied().unwrap_or(0.0) / self.total - (t / two_m).powi(2)
            })
            .sum()
    }

    /// One Louvain run. Labels are dense, ordered by descending internal
    /// weight (ties by smallest member index).
    pub fn louvain(&self, seed: u64) -> Vec<usize> {
        let n = self.node_count();
        if n == 0 {
            return Vec::new();
        }
        if self.total <= 0.0 {
            return (0..n).collect();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut membership: Vec<usize> = (0..n).collect();
        let mut level = self.clone();
        loop {
            let (labels, moved) = level.local_moves(&mut rng);
            if !moved {
                break;
            }
            for c in membership.iter_mut() {
                *c = labels[*c];
            }
            level = level.aggregate(&labels);
        }
        if self.modularity(&membership) < 0.0 {
            membership = vec![0; n];
        }
        self.canonical_labels(&membership)
    }

    /// Phase one: greedy node moves until a pass stops improving.
    /// Returns dense labels (by first appearance) and whether anything moved.
    fn local_moves(&self, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
        let n = self.node_count();
        let two_m = 2.0 * self.total;
        let mut comm: Vec<usize> = (0..n).collect();
        let mut tot = self.degree.clone();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);

        let mut link = vec![0.0; n];
        let mut touched: Vec<usize> = Vec::new();
        let mut moved_any = false;
        let mut q = self.modularity(&comm);

        for _ in 0..MAX_PASSES {
            let mut moved = false;
            for &i in &order {
                let ci = comm[i];
                let ki = self.degree[i];
                for &(j, w) in &self.adj[i] {
                    let cj = comm[j];
                    if link[cj] == 0.0 {
                        touched.push(cj);
                    }
                    link[cj] += w;
                }
                tot[ci] -= ki;

                let gain = |c: usize, w: f64| w - tot[c] * ki / two_m;
                let stay_gain = gain(ci, link[ci]);
                touched.sort_unstable();
                let mut best = ci;
                let mut best_gain = stay_gain;
                for &c in &touched {
                    if c == ci {
                        continue;
                    }
                    let g = gain(c, link[c]);
                    if g > best_gain {
                        best_gain = g;
                        best = c;
                    }
                }
                // ascending scan with strict `>` leaves the smallest label on ties
                if best != ci {
                    comm[i] = best;
                    moved = true;
                }
                tot[comm[i]] += ki;
                for &c in &touched {
                    link[c] = 0.0;
                }
                touched.clear();
            }
            if !moved {
                break;
            }
            moved_any = true;
            let next_q = self.modularity(&comm);
            let improvement = next_q - q;
            q = next_q;
            if improvement < MIN_LEVEL_GAIN {
                break;
            }
        }
        (dense_by_first_appearance(&comm), moved_any)
    }

    /// Phase two: collapse communities into nodes.
    fn aggregate(&self, labels: &[usize]) -> Graph {
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut edges = Vec::new();
        for (i, nbrs) in self.adj.iter().enumerate() {
            if self.self_loops[i] != 0.0 {
                edges.push((labels[i], labels[i], self.self_loops[i]));
            }
            for &(j, w) in nbrs {
                if j > i {
                    edges.push((labels[i], labels[j], w));
                }
            }
        }
        Graph::new(k, &edges)
    }

    fn canonical_labels(&self, labels: &[usize]) -> Vec<usize> {
        let dense = dense_by_first_appearance(labels);
        let k = dense.iter().max().map_or(0, |m| m + 1);
        let mut internal = vec![0.0; k];
        for (i, nbrs) in self.adj.iter().enumerate() {
            internal[dense[i]] += self.self_loops[i];
            for &(j, w) in nbrs {
                if j > i && dense[j] == dense[i] {
                    internal[dense[i]] += w;
                }
            }
        }
        // dense labels already follow smallest-member order
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| internal[b].total_cmp(&internal[a]).then(a.cmp(&b)));
        let mut rank = vec![0; k];
        for (r, &c) in order.iter().enumerate() {
            rank[c] = r;
        }
        dense.iter().map(|&c| rank[c]).collect()
    }
}

fn dense_by_first_appearance(labels: &[usize]) -> Vec<usize> {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    labels
        .iter()
        .map(|&c| {
            let next = map.len();
            *map.entry(c).or_insert(next)
        })
        .collect()
}

/// Tile-to-community assignment with its modularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    #[serde(with = "crate::serde_pairs")]
    assignment: BTreeMap<TileId, usize>,
    pub modularity_q: f64,
    pub seed: u64,
    pub restarts_used: u32,
}

impl Partition {
    /// Builds a partition from an explicit assignment. Labels are made dense
    /// in order of first appearance over sorted tiles; `modularity_q` is left
    /// at zero until scored.
    pub fn from_assignment(assignment: impl IntoIterator<Item = (TileId, usize)>) -> Self {
        let assignment: BTreeMap<TileId, usize> = assignment.into_iter().collect();
        let raw: Vec<usize> = assignment.values().copied().collect();
        let dense = dense_by_first_appearance(&raw);
        Partition {
            assignment: assignment.keys().copied().zip(dense).collect(),
            modularity_q: 0.0,
            seed: 0,
            restarts_used: 0,
        }
    }

    pub fn community_of(&self, tile: TileId) -> Option<usize> {
        self.assignment.get(&tile).copied()
    }

    pub fn assignment(&self) -> &BTreeMap<TileId, usize> {
        &self.assignment
    }

    pub fn community_count(&self) -> usize {
        self.assignment.values().max().map_or(0, |m| m + 1)
    }

    pub fn members(&self, community: usize) -> Vec<TileId> {
        self.assignment
            .iter()
            .filter(|(_, &c)| c == community)
            .map(|(&t, _)| t)
            .collect()
    }

    /// Names each community with a caller-supplied function of its label and
    /// member tiles, e.g. after the largest city it contains.
    pub fn label_names<F>(&self, mut name: F) -> Vec<String>
    where
        F: FnMut(usize, &[TileId]) -> String,
    {
        (0..self.community_count())
            .map(|c| name(c, &self.members(c)))
            .collect()
    }
}

struct TileGraph {
    tiles: Vec<TileId>,
    graph: Graph,
}

impl TileGraph {
    fn new(net: &UndirectedTileNetwork) -> Self {
        let tiles: Vec<TileId> = net.nodes().iter().copied().collect();
        let index: BTreeMap<TileId, usize> =
            tiles.iter().enumerate().map(|(i, &t)| (t, i)).collect();
        let edges: Vec<(usize, usize, f64)> = net
            .edges()
            .map(|(a, b, w)| (index[&a], index[&b], w))
            .collect();
        TileGraph {
            graph: Graph::new(tiles.len(), &edges),
            tiles,
        }
    }

    fn check(&self) -> Result<()> {
        if self.tiles.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        if self.graph.total_weight() <= 0.0 {
            return Err(Error::ZeroWeight);
        }
        Ok(())
    }

    fn partition(&self, labels: &[usize], seed: u64, restarts_used: u32) -> Partition {
        Partition {
            assignment: self
                .tiles
                .iter()
                .copied()
                .zip(labels.iter().copied())
                .collect(),
            modularity_q: self.graph.modularity(labels),
            seed,
            restarts_used,
        }
    }
}

/// Modularity of `partition` on `net`.
pub fn modularity(net: &UndirectedTileNetwork, partition: &Partition) -> Result<f64> {
    let tg = TileGraph::new(net);
    if tg.graph.total_weight() <= 0.0 {
        return Err(Error::ZeroWeight);
    }
    let labels = tg
        .tiles
        .iter()
        .map(|&t| partition.community_of(t).ok_or(Error::Unassigned(t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(tg.graph.modularity(&labels))
}

/// Single Louvain run with node visit order shuffled by `seed`.
pub fn louvain(net: &UndirectedTileNetwork, seed: u64) -> Result<Partition> {
    let tg = TileGraph::new(net);
    tg.check()?;
    Ok(tg.partition(&tg.graph.louvain(seed), seed, 1))
}

/// Runs Louvain with seeds `base_seed..base_seed + n_restarts` and keeps the
/// highest-modularity result, ties going to the lowest seed.
pub fn best_of_restarts(
    net: &UndirectedTileNetwork,
    n_restarts: u32,
    base_seed: u64,
) -> Result<Partition> {
    if n_restarts == 0 {
        return Err(Error::Config("n_restarts must be at least 1".into()));
    }
    let tg = TileGraph::new(net);
    tg.check()?;
    let (seed, labels, _) = best_labels(&tg.graph, n_restarts, base_seed);
    Ok(tg.partition(&labels, seed, n_restarts))
}

/// Index-graph variant of [`best_of_restarts`]; returns `(seed, labels, Q)`.
pub fn best_labels(graph: &Graph, n_restarts: u32, base_seed: u64) -> (u64, Vec<usize>, f64) {
    let runs: Vec<(u64, Vec<usize>, f64)> = (0..n_restarts as u64)
        .into_par_iter()
        .map(|k| {
            let seed = base_seed.wrapping_add(k);
            let labels = graph.louvain(seed);
            let q = graph.modularity(&labels);
            (seed, labels, q)
        })
        .collect();
    runs.into_iter()
        .reduce(|best, run| if run.2 > best.2 { run } else { best })
        .expect("at least one restart")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub resolution: u32,
    pub community_count: usize,
    pub modularity_q: Option<f64>,
    /// Set when the filtered network was empty or weightless at this resolution.
    pub empty: bool,
}

/// Rebuilds the whole network at each grid resolution and records the best
/// partition found.
pub fn resolution_sweep(
    posts: &[PostRecord],
    bbox: &BBox,
    resolutions: &[u32],
    n_restarts: u32,
    base_seed: u64,
) -> Result<Vec<SweepRow>> {
    if resolutions.is_empty() {
        return Err(Error::Config("resolution list is empty".into()));
    }
    resolutions
        .iter()
        .map(|&x| {
            let grid = GridSpec::new(*bbox, x)?;
            let locations = locate_users(posts, &grid)?;
            let built = build_mention_network(posts, &locations);
            let und = symmetrize(&filter_tiles(&built.network));
            match best_of_restarts(&und, n_restarts, base_seed) {
                Ok(p) => Ok(SweepRow {
                    resolution: x,
                    community_count: p.community_count(),
                    modularity_q: Some(p.modularity_q),
                    empty: false,
                }),
                Err(Error::EmptyNetwork | Error::ZeroWeight) => Ok(SweepRow {
                    resolution: x,
                    community_count: 0,
                    modularity_q: None,
                    empty: true,
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}
