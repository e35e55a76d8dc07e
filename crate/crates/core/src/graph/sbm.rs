use gthna_autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};

/// Stochastic block model with block-dependent Gaussian features.
///
/// Each block gets a mean vector drawn from `N(0, mean_scale²·I)`; a node's
/// features are its block mean plus `N(0, feature_std²·I)` noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmSpec {
    pub blocks: usize,
    pub per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub mean_scale: f64,
    #[serde(default = "half")]
    pub feature_std: f64,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

impl SbmSpec {
    pub fn new(blocks: usize, per_block: usize, p_in: f64, p_out: f64, d: usize, seed: u64) -> Self {
        Self {
            blocks,
            per_block,
            p_in,
            p_out,
            d,
            seed,
            mean_scale: one(),
            feature_std: half(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.blocks * self.per_block
    }

    pub fn block_of(&self, v: usize) -> usize {
        v / self.per_block
    }
}

pub fn generate_sbm(spec: &SbmSpec) -> Result<Graph> {
    for (name, p) in [("p_in", spec.p_in), ("p_out", spec.p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("{name} = {p} is not a probability")));
        }
    }
    if spec.mean_scale < 0.0 || spec.feature_std < 0.0 || !spec.mean_scale.is_finite() || !spec.feature_std.is_finite() {
        return Err(Error::Config("feature scales must be finite and non-negative".into()));
    }
    let n = spec.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let p = if spec.block_of(a) == spec.block_of(b) { spec.p_in } else { spec.p_out };
            if rng.random_bool(p) {
                edges.push((a, b));
            }
        }
    }

    let means: Vec<Vec<f64>> = (0..spec.blocks)
        .map(|_| (0..spec.d).map(|_| spec.mean_scale * unit.sample(&mut rng)).collect())
        .collect();
    let features = Tensor::from_fn(n, spec.d, |v, j| means[spec.block_of(v)][j] + spec.feature_std * unit.sample(&mut rng));
    Graph::new(features, &edges, None)
}
