//! Independent oracles and fixtures shared by integration tests.

#![allow(dead_code)]

use geosocial::community::{best_of_restarts, Partition};
use geosocial::ingest::{locate_users, parse_posts, PostRecord, TileId, UserLocationMap};
use geosocial::network::{
    build_mention_network, filter_tiles, symmetrize, BuiltNetwork, UndirectedTileNetwork,
};
use geosocial::synth::{generate, SynthConfig, SynthCorpus};
use rand::Rng;

/// Modularity straight from the double sum
/// `Q = (1/2m) sum_ij [A_ij - k_i k_j / 2m] delta(c_i, c_j)`.
pub fn brute_modularity(n: usize, edges: &[(usize, usize, f64)], labels: &[usize]) -> f64 {
    let mut a = vec![vec![0.0; n]; n];
    for &(i, j, w) in edges {
        a[i][j] += w;
        a[j][i] += w;
    }
    let k: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if labels[i] == labels[j] {
                q += a[i][j] - k[i] * k[j] / two_m;
            }
        }
    }
    q / two_m
}

/// Every set partition of `0..n` as a restricted growth string.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, max: usize, n: usize, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for l in 0..=max + 1 {
            cur.push(l);
            rec(cur, max.max(l), n, out);
            cur.pop();
        }
    }
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    rec(&mut vec![0], 0, n, &mut out);
    out
}

/// Exhaustive maximum of the brute-force modularity.
pub fn exhaustive_max(n: usize, edges: &[(usize, usize, f64)]) -> f64 {
    set_partitions(n)
        .iter()
        .map(|p| brute_modularity(n, edges, p))
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn random_graph<R: Rng>(rng: &mut R, n: usize) -> Vec<(usize, usize, f64)> {
    loop {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.5) {
                    edges.push((i, j, rng.random_range(0.1..2.0)));
                }
            }
        }
        if !edges.is_empty() {
            return edges;
        }
    }
}

pub fn tile(i: usize) -> TileId {
    TileId::new(i as u32, 0)
}

pub fn tile_network(n: usize, edges: &[(usize, usize, f64)]) -> UndirectedTileNetwork {
    UndirectedTileNetwork::from_edges(
        (0..n).map(tile),
        edges.iter().map(|&(a, b, w)| (tile(a), tile(b), w)),
    )
}

pub fn labels_partition(labels: &[usize]) -> Partition {
    Partition::from_assignment(labels.iter().enumerate().map(|(i, &l)| (tile(i), l)))
}

/// A generated corpus pushed through ingest, network and community detection.
pub struct Analysed {
    pub corpus: SynthCorpus,
    pub posts: Vec<PostRecord>,
    pub locations: UserLocationMap,
    pub built: BuiltNetwork,
    pub partition: Partition,
}

pub fn analyse(cfg: &SynthConfig, restarts: u32) -> Analysed {
    let corpus = generate(cfg).expect("valid synth config");
    let (posts, rejected) = parse_posts(corpus.to_jsonl().as_bytes(), &cfg.grid.bbox).unwrap();
    assert_eq!(rejected.total(), 0);
    let locations = locate_users(&posts, &cfg.grid).unwrap();
    let built = build_mention_network(&posts, &locations);
    let partition =
        best_of_restarts(&symmetrize(&filter_tiles(&built.network)), restarts, 1).unwrap();
    Analysed {
        corpus,
        posts,
        locations,
        built,
        partition,
    }
}
