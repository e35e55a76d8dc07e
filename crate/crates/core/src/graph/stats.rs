use super::Graph;

/// Variance assigned when fewer than two neighbours exist, and the floor
/// applied to empirical variances before they enter a KL term.
pub const EPS_VAR: f64 = 1e-3;

/// Empirical diagonal Gaussian over a node's one-hop neighbour features.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodStats {
    pub count: usize,
    pub mean: Vec<f64>,
    /// Per-dimension sample variance (`1/(c−1)` normalization).
    pub var: Vec<f64>,
    /// Set when the node has no neighbours; mean and var are then zero.
    pub degenerate: bool,
}

pub fn neighborhood_statistics(g: &Graph, v: usize) -> NeighborhoodStats {
    let d = g.feature_dim();
    let nbrs = g.neighbors(v);
    let count = nbrs.len();
    if count == 0 {
        return NeighborhoodStats {
            count,
            mean: vec![0.0; d],
            var: vec![0.0; d],
            degenerate: true,
        };
    }
    let x = g.features();
    let mut mean = vec![0.0; d];
    for &u in nbrs {
        for (m, xv) in mean.iter_mut().zip(x.row(u)) {
            *m += xv;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let var = if count < 2 {
        vec![EPS_VAR; d]
    } else {
        let mut var = vec![0.0; d];
        for &u in nbrs {
            for ((s, xv), m) in var.iter_mut().zip(x.row(u)).zip(&mean) {
                *s += (xv - m) * (xv - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= (count - 1) as f64);
        var
    };
    NeighborhoodStats {
        count,
        mean,
        var,
        degenerate: false,
    }
}
