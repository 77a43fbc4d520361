//! Tile-level mention network.
//!
//! Every mention from user `u` to user `v` adds `f_u(a) * f_v(b)` to the
//! directed edge `a -> b`, where `f` is a user's fractional location. Each
//! located mention therefore contributes exactly one unit of total weight.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{PostRecord, TileId, UserLocationMap};

/// Directed weighted tile graph. Self-edges are allowed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TileNetwork {
    nodes: BTreeSet<TileId>,
    #[serde(with = "crate::serde_pairs")]
    edges: BTreeMap<(TileId, TileId), f64>,
}

impl TileNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `weight` to the edge `from -> to`. Non-positive weights are ignored.
    pub fn add(&mut self, from: TileId, to: TileId, weight: f64) {
        if weight > 0.0 {
            *self.edges.entry((from, to)).or_insert(0.0) += weight;
            self.nodes.insert(from);
            self.nodes.insert(to);
        }
    }

    pub fn nodes(&self) -> &BTreeSet<TileId> {
        &self.nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = (TileId, TileId, f64)> + '_ {
        self.edges.iter().map(|(&(a, b), &w)| (a, b, w))
    }

    pub fn weight(&self, from: TileId, to: TileId) -> f64 {
        self.edges.get(&(from, to)).copied().unwrap_or(0.0)
    }

    pub fn self_weight(&self, tile: TileId) -> f64 {
        self.weight(tile, tile)
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.values().sum()
    }

    pub fn self_edge_weight(&self) -> f64 {
        self.edges
            .iter()
            .filter(|((a, b), _)| a == b)
            .map(|(_, w)| w)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Undirected tile graph with `w_ab = e_ab + e_ba` and no self-pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UndirectedTileNetwork {
    nodes: BTreeSet<TileId>,
    #[serde(with = "crate::serde_pairs")]
    weights: BTreeMap<(TileId, TileId), f64>,
}

impl UndirectedTileNetwork {
    /// Builds a network from explicit nodes and undirected edges. Edge weights
    /// on the same unordered pair accumulate; self-pairs are dropped.
    pub fn from_edges(
        nodes: impl IntoIterator<Item = TileId>,
        edges: impl IntoIterator<Item = (TileId, TileId, f64)>,
    ) -> Self {
        let mut net = UndirectedTileNetwork {
            nodes: nodes.into_iter().collect(),
            weights: BTreeMap::new(),
        };
        for (a, b, w) in edges {
            net.add(a, b, w);
        }
        net
    }

    fn add(&mut self, a: TileId, b: TileId, w: f64) {
        if a == b || w <= 0.0 {
            return;
        }
        self.nodes.insert(a);
        self.nodes.insert(b);
        let key = if a < b { (a, b) } else { (b, a) };
        *self.weights.entry(key).or_insert(0.0) += w;
    }

    pub fn nodes(&self) -> &BTreeSet<TileId> {
        &self.nodes
    }

    /// Edges with `a < b`.
    pub fn edges(&self) -> impl Iterator<Item = (TileId, TileId, f64)> + '_ {
        self.weights.iter().map(|(&(a, b), &w)| (a, b, w))
    }

    pub fn weight(&self, a: TileId, b: TileId) -> f64 {
        let key = if a < b { (a, b) } else { (b, a) };
        self.weights.get(&key).copied().unwrap_or(0.0)
    }

    pub fn edge_count(&self) -> usize {
        self.weights.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltNetwork {
    pub network: TileNetwork,
    /// Mention events whose sender and target were both located.
    pub located_events: u64,
    /// Mention events dropped because the target never posted from a located tile.
    pub skipped_mentions: u64,
}

pub fn build_mention_network(posts: &[PostRecord], locations: &UserLocationMap) -> BuiltNetwork {
    let mut network = TileNetwork::new();
    let mut located_events = 0;
    let mut skipped_mentions = 0;
    for post in posts {
        let Some(sender) = locations.get(&post.author_id) else {
            skipped_mentions += post.mentioned_ids.len() as u64;
            continue;
        };
        for target in &post.mentioned_ids {
            let Some(receiver) = locations.get(target) else {
                skipped_mentions += 1;
                continue;
            };
            located_events += 1;
            for &(a, fa) in sender {
                for &(b, fb) in receiver {
                    network.add(a, b, fa * fb);
                }
            }
        }
    }
    BuiltNetwork {
        network,
        located_events,
        skipped_mentions,
    }
}

/// Keeps only tiles with internal mentions (`e_aa > 0`) and the edges among them.
pub fn filter_tiles(net: &TileNetwork) -> TileNetwork {
    let keep: BTreeSet<TileId> = net
        .nodes
        .iter()
        .copied()
        .filter(|&t| net.self_weight(t) > 0.0)
        .collect();
    let edges = net
        .edges
        .iter()
        .filter(|((a, b), _)| keep.contains(a) && keep.contains(b))
        .map(|(&k, &w)| (k, w))
        .collect();
    TileNetwork { nodes: keep, edges }
}

/// Collapses edge direction and discards self-edges.
pub fn symmetrize(net: &TileNetwork) -> UndirectedTileNetwork {
    UndirectedTileNetwork::from_edges(net.nodes.iter().copied(), net.edges())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkStats {
    pub node_count: usize,
    pub edge_count: usize,
    pub density: f64,
    pub mean_degree: f64,
    pub mean_weighted_degree: f64,
    pub is_connected: bool,
}

impl NetworkStats {
    /// Flat `key=value` report, one entry per line.
    pub fn write_report<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "node_count={}", self.node_count)?;
        writeln!(out, "edge_count={}", self.edge_count)?;
        writeln!(out, "density={}", self.density)?;
        writeln!(out, "mean_degree={}", self.mean_degree)?;
        writeln!(out, "mean_weighted_degree={}", self.mean_weighted_degree)?;
        writeln!(out, "is_connected={}", self.is_connected)
    }
}

pub fn network_stats(net: &UndirectedTileNetwork) -> NetworkStats {
    let n = net.nodes.len();
    let e = net.edge_count();
    let (density, mean_degree, mean_weighted_degree) = if n >= 2 {
        let nf = n as f64;
        (
            e as f64 / (nf * (nf - 1.0) / 2.0),
            2.0 * e as f64 / nf,
            2.0 * net.total_weight() / nf,
        )
    } else {
        (0.0, 0.0, 0.0)
    };
    NetworkStats {
        node_count: n,
        edge_count: e,
        density,
        mean_degree,
        mean_weighted_degree,
        is_connected: is_connected(net),
    }
}

fn is_connected(net: &UndirectedTileNetwork) -> bool {
    let index: BTreeMap<TileId, usize> =
        net.nodes.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    if index.is_empty() {
        return false;
    }
    let mut parent: Vec<usize> = (0..index.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut components = index.len();
    for (a, b, _) in net.edges() {
        let (ra, rb) = (find(&mut parent, index[&a]), find(&mut parent, index[&b]));
        if ra != rb {
            parent[ra] = rb;
            components -= 1;
        }
    }
    components == 1
}

/// Writes `tile_edges.csv` for a directed network.
pub fn write_directed_edges<W: Write>(net: &TileNetwork, out: W) -> Result<()> {
    write_tile_edges(Some(net), None, out)
}

/// Writes `tile_edges.csv` for an undirected network.
pub fn write_undirected_edges<W: Write>(net: &UndirectedTileNetwork, out: W) -> Result<()> {
    write_tile_edges(None, Some(net), out)
}

/// Directed rows first, then undirected ones, under a single header.
pub fn write_tile_edges<W: Write>(
    directed: Option<&TileNetwork>,
    undirected: Option<&UndirectedTileNetwork>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["a_col", "a_row", "b_col", "b_row", "weight", "kind"])
        .map_err(csv_err)?;
    let rows = directed
        .into_iter()
        .flat_map(|n| n.edges().map(|e| (e, "directed")))
        .chain(
            undirected
                .into_iter()
                .flat_map(|n| n.edges().map(|e| (e, "undirected"))),
        );
    for ((a, b, weight), kind) in rows {
        w.write_record([
            a.col.to_string(),
            a.row.to_string(),
            b.col.to_string(),
            b.row.to_string(),
            weight.to_string(),
            kind.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Stream(io),
        other => Error::Stream(std::io::Error::other(format!("{other:?}"))),
    }
}
