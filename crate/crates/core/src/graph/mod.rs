//! Attributed undirected graphs and everything precomputed from them.

mod inject;
mod io;
mod laplacian;
mod sbm;
mod stats;
mod subgraph;

pub use inject::{inject_anomalies, InjectionSpec};
pub use io::{load_graph, write_graph, LoadStats};
pub use laplacian::{build_laplacian_bundle, LaplacianBundle, ZERO_EIGENVALUE_TOL};
pub use sbm::{generate_sbm, SbmSpec};
pub use stats::{neighborhood_statistics, NeighborhoodStats, EPS_VAR};
pub use subgraph::{extract_k_hop_subgraph, Subgraph};

use gthna_autodiff::Tensor;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Undirected attributed graph with a dense, symmetric, loop-free adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    adjacency: Vec<u8>,
    neighbors: Vec<Vec<usize>>,
    features: Tensor,
    labels: Option<Vec<u8>>,
}

impl Graph {
    /// Builds a graph from an edge list. Edges are symmetrized, duplicates
    /// collapse and self-loops are dropped.
    pub fn new(features: Tensor, edges: &[(usize, usize)], labels: Option<Vec<u8>>) -> Result<Self> {
        let n = features.rows();
        let mut adjacency = vec![0u8; n * n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Shape(format!("edge ({a}, {b}) references a node outside 0..{n}")));
            }
            if a != b {
                adjacency[a * n + b] = 1;
                adjacency[b * n + a] = 1;
            }
        }
        Self::from_adjacency(features, adjacency, labels)
    }

    pub(crate) fn from_adjacency(features: Tensor, adjacency: Vec<u8>, labels: Option<Vec<u8>>) -> Result<Self> {
        let n = features.rows();
        if adjacency.len() != n * n {
            return Err(Error::Shape(format!("adjacency has {} entries, expected {n}x{n}", adjacency.len())));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Shape(format!("{} labels for {n} nodes", l.len())));
            }
            if l.iter().any(|&v| v > 1) {
                return Err(Error::Shape("labels must be 0 or 1".into()));
            }
        }
        let neighbors = (0..n)
            .map(|i| (0..n).filter(|&j| adjacency[i * n + j] == 1).collect())
            .collect();
        Ok(Self {
            n,
            adjacency,
            neighbors,
            features,
            labels,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a * self.n + b] == 1
    }

    /// Sorted one-hop neighbours.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn num_anomalies(&self) -> usize {
        self.labels.as_ref().map_or(0, |l| l.iter().filter(|&&v| v == 1).count())
    }

    /// Undirected edges with `a < b`, in ascending order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n)
            .flat_map(|a| self.neighbors[a].iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
            .collect()
    }

    /// Adjacency as a dense 0/1 tensor.
    pub fn adjacency_tensor(&self) -> Tensor {
        Tensor::new(self.n, self.n, self.adjacency.iter().map(|&v| f64::from(v)).collect())
            .expect("adjacency is n x n")
    }

    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Self> {
        Self::from_adjacency(self.features.clone(), self.adjacency.clone(), Some(labels))
    }

    /// Relabels nodes so that old node `perm[i]` becomes new node `i`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::Shape(format!("permutation of length {} for {} nodes", perm.len(), self.n)));
        }
        let features = self.features.select_rows(perm);
        let mut adjacency = vec![0u8; self.n * self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                adjacency[i * self.n + j] = self.adjacency[perm[i] * self.n + perm[j]];
            }
        }
        let labels = self.labels.as_ref().map(|l| perm.iter().map(|&p| l[p]).collect());
        Self::from_adjacency(features, adjacency, labels)
    }

    /// SHA-256 over node count, edge list and feature bit patterns.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        h.update((self.feature_dim() as u64).to_le_bytes());
        for (a, b) in self.edges() {
            h.update((a as u64).to_le_bytes());
            h.update((b as u64).to_le_bytes());
        }
        for v in self.features.data() {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}
