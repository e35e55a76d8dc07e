use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

/// Clique plus attribute-swap injection.
///
/// `clique_count` cliques of `clique_size` nodes become structural anomalies;
/// the same number of further nodes (`clique_count · clique_size`) take the
/// features of the farthest of `attribute_candidates` random nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionSpec {
    pub clique_count: usize,
    pub clique_size: usize,
    #[serde(default = "default_candidates")]
    pub attribute_candidates: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_candidates() -> usize {
    50
}

impl InjectionSpec {
    pub fn new(clique_count: usize, clique_size: usize, seed: u64) -> Self {
        Self {
            clique_count,
            clique_size,
            attribute_candidates: default_candidates(),
            seed,
        }
    }

    pub fn total_anomalies(&self) -> usize {
        2 * self.clique_count * self.clique_size
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.clique_count > 0 && self.clique_size < 2 {
            return Err(Error::Config(format!("clique_size must be at least 2, got {}", self.clique_size)));
        }
        if self.attribute_candidates == 0 {
            return Err(Error::Config("attribute_candidates must be at least 1".into()));
        }
        if self.total_anomalies() > n {
            return Err(Error::Config(format!(
                "injecting {} anomalies needs that many distinct nodes, graph has {n}",
                self.total_anomalies()
            )));
        }
        Ok(())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Returns a copy of `g` with anomalies injected and labels set (existing labels
/// are overwritten). Deterministic in `spec.seed`.
pub fn inject_anomalies(g: &Graph, spec: &InjectionSpec) -> Result<Graph> {
    let n = g.num_nodes();
    spec.validate(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let per_kind = spec.clique_count * spec.clique_size;
    let mut labels = vec![0u8; n];
    let mut edges = g.edges();
    for clique in order[..per_kind].chunks(spec.clique_size) {
        for (i, &a) in clique.iter().enumerate() {
            labels[a] = 1;
            for &b in &clique[i + 1..] {
                edges.push((a, b));
            }
        }
    }

    let original = g.features();
    let mut features = original.clone();
    let pool: Vec<usize> = (0..n).collect();
    for &target in &order[per_kind..2 * per_kind] {
        labels[target] = 1;
        let others: Vec<usize> = pool.iter().copied().filter(|&c| c != target).collect();
        let take = spec.attribute_candidates.min(others.len());
        let farthest = others
            .choose_multiple(&mut rng, take)
            .copied()
            .max_by(|&a, &b| {
                sq_dist(original.row(a), original.row(target)).total_cmp(&sq_dist(original.row(b), original.row(target)))
            });
        if let Some(src) = farthest {
            features.row_mut(target).copy_from_slice(original.row(src));
        }
    }
    Graph::new(features, &edges, Some(labels))
}
