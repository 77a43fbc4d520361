//! Community-level mention flow: observed matrix, net-flow edges, the
//! expected-flow null model and in/out ratios.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::community::Partition;
use crate::error::{Error, Result};
use crate::network::TileNetwork;

/// `m[i][j]`: mentions of community `j` by community `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityFlowMatrix {
    pub labels: Vec<usize>,
    pub m: Vec<Vec<f64>>,
}

impl CommunityFlowMatrix {
    /// Labels default to `0..N`.
    pub fn new(m: Vec<Vec<f64>>) -> Self {
        let n = m.len();
        debug_assert!(m.iter().all(|r| r.len() == n), "matrix must be square");
        CommunityFlowMatrix {
            labels: (0..n).collect(),
            m,
        }
    }

    pub fn size(&self) -> usize {
        self.m.len()
    }

    pub fn total(&self) -> f64 {
        self.m.iter().flatten().sum()
    }

    /// `m_i^out`: mentions sent to other communities.
    pub fn out_degree(&self, i: usize) -> f64 {
        (0..self.size())
            .filter(|&j| j != i)
            .map(|j| self.m[i][j])
            .sum()
    }

    /// `m_i^in`: mentions received from other communities.
    pub fn in_degree(&self, i: usize) -> f64 {
        (0..self.size())
            .filter(|&j| j != i)
            .map(|j| self.m[j][i])
            .sum()
    }

    pub fn transpose(&self) -> Self {
        let n = self.size();
        CommunityFlowMatrix {
            labels: self.labels.clone(),
            m: (0..n)
                .map(|i| (0..n).map(|j| self.m[j][i]).collect())
                .collect(),
        }
    }
}

/// Sums tile edges into community blocks; tile self-edges land on the diagonal.
pub fn induce_flow_matrix(net: &TileNetwork, partition: &Partition) -> Result<CommunityFlowMatrix> {
    let n = partition.community_count().max(1);
    let mut m = vec![vec![0.0; n]; n];
    for (a, b, w) in net.edges() {
        let ca = partition.community_of(a).ok_or(Error::Unassigned(a))?;
        let cb = partition.community_of(b).ok_or(Error::Unassigned(b))?;
        m[ca][cb] += w;
    }
    Ok(CommunityFlowMatrix::new(m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetFlowEdge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

/// One edge per unordered pair with unequal flows, pointing at the community
/// that is mentioned more.
pub fn net_flow_edges(flow: &CommunityFlowMatrix) -> Vec<NetFlowEdge> {
    let n = flow.size();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (ij, ji) = (flow.m[i][j], flow.m[j][i]);
            if ij > ji {
                edges.push(NetFlowEdge {
                    from: flow.labels[i],
                    to: flow.labels[j],
                    weight: ij - ji,
                });
            } else if ji > ij {
                edges.push(NetFlowEdge {
                    from: flow.labels[j],
                    to: flow.labels[i],
                    weight: ji - ij,
                });
            }
        }
    }
    edges
}

/// Expected flow if each community spread its outgoing mentions over the
/// others in proportion to their incoming share:
/// `m̄_ij = m_i^out * m_j^in / M_i^in`, `M_i^in = sum_{j != i} m_j^in`.
/// The diagonal is copied from the observed matrix. Out-marginals are
/// preserved exactly; in-marginals in general are not.
pub fn null_model(flow: &CommunityFlowMatrix) -> Result<CommunityFlowMatrix> {
    let n = flow.size();
    if n < 2 {
        return Err(Error::TooFewCommunities { needed: 2, got: n });
    }
    let m_in: Vec<f64> = (0..n).map(|i| flow.in_degree(i)).collect();
    let m_out: Vec<f64> = (0..n).map(|i| flow.out_degree(i)).collect();
    let mut expected = vec![vec![0.0; n]; n];
    for i in 0..n {
        let big_m_in: f64 = (0..n).filter(|&j| j != i).map(|j| m_in[j]).sum();
        if big_m_in <= 0.0 {
            return Err(Error::DegenerateMarginals(flow.labels[i]));
        }
        for j in 0..n {
            expected[i][j] = if i == j {
                flow.m[i][i]
            } else {
                // share first, so a lone partner receives exactly m_i^out
                m_out[i] * (m_in[j] / big_m_in)
            };
        }
    }
    Ok(CommunityFlowMatrix {
        labels: flow.labels.clone(),
        m: expected,
    })
}

/// Monte-Carlo counterpart of [`null_model`]: each of community `i`'s
/// outgoing mentions (rounded to whole mentions) is redirected to `j != i`
/// with probability `m_j^in / M_i^in`, averaged over `samples` draws.
/// Converges to the closed form and serves as a cross-check.
pub fn rewired_null_model(
    flow: &CommunityFlowMatrix,
    samples: u32,
    seed: u64,
) -> Result<CommunityFlowMatrix> {
    let n = flow.size();
    if n < 2 {
        return Err(Error::TooFewCommunities { needed: 2, got: n });
    }
    let m_in: Vec<f64> = (0..n).map(|i| flow.in_degree(i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![vec![0.0; n]; n];
    for (i, row) in acc.iter_mut().enumerate() {
        let targets: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let weights: Vec<f64> = targets.iter().map(|&j| m_in[j]).collect();
        let dist =
            WeightedIndex::new(&weights).map_err(|_| Error::DegenerateMarginals(flow.labels[i]))?;
        let stubs = flow.out_degree(i).round() as u64;
        for _ in 0..samples {
            for _ in 0..stubs {
                row[targets[dist.sample(&mut rng)]] += 1.0;
            }
        }
        row[i] = flow.m[i][i] * samples as f64;
    }
    let s = samples.max(1) as f64;
    Ok(CommunityFlowMatrix {
        labels: flow.labels.clone(),
        m: acc
            .into_iter()
            .map(|row| row.into_iter().map(|v| v / s).collect())
            .collect(),
    })
}

/// `m_i^in / m_i^out` per community; `None` where nothing is sent out.
pub fn in_out_ratio(flow: &CommunityFlowMatrix) -> Vec<Option<f64>> {
    (0..flow.size())
        .map(|i| {
            let out = flow.out_degree(i);
            (out > 0.0).then(|| flow.in_degree(i) / out)
        })
        .collect()
}
