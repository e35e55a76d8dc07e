use std::collections::VecDeque;

use super::Graph;

/// Induced k-hop neighbourhood of a root node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgraph {
    /// Global ids in BFS order; the root is first.
    pub nodes: Vec<usize>,
    /// Hop distance from the root, aligned with `nodes`.
    pub depth: Vec<usize>,
    /// Local edges `(a, b)` with `a < b`, indices into `nodes`.
    pub edges: Vec<(usize, usize)>,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Dense local adjacency.
    pub fn adjacency(&self) -> Vec<Vec<u8>> {
        let s = self.len();
        let mut a = vec![vec![0u8; s]; s];
        for &(i, j) in &self.edges {
            a[i][j] = 1;
            a[j][i] = 1;
        }
        a
    }
}

/// All nodes within `k` hops of `v` and the edges among them.
pub fn extract_k_hop_subgraph(g: &Graph, v: usize, k: usize) -> Subgraph {
    assert!(v < g.num_nodes(), "root {v} out of range");
    let mut local = vec![usize::MAX; g.num_nodes()];
    let mut nodes = vec![v];
    let mut depth = vec![0];
    local[v] = 0;
    let mut queue = VecDeque::from([v]);
    while let Some(u) = queue.pop_front() {
        let du = depth[local[u]];
        if du == k {
            continue;
        }
        for &w in g.neighbors(u) {
            if local[w] == usize::MAX {
                local[w] = nodes.len();
                nodes.push(w);
                depth.push(du + 1);
                queue.push_back(w);
            }
        }
    }
    let mut edges = Vec::new();
    for (a, &u) in nodes.iter().enumerate() {
        for &w in g.neighbors(u) {
            let b = local[w];
            if b != usize::MAX && a < b {
                edges.push((a, b));
            }
        }
    }
    edges.sort_unstable();
    Subgraph { nodes, depth, edges }
}

#[cfg(test)]
mod tests {
    use gthna_autodiff::Tensor;
    use proptest::prelude::*;

    use super::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(Tensor::zeros(n, 1), edges, None).unwrap()
    }

    #[test]
    fn star_center_one_hop_is_everything() {
        let g = graph(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
        let s = extract_k_hop_subgraph(&g, 0, 1);
        assert_eq!(s.nodes[0], 0);
        assert_eq!(s.len(), 5);
        assert_eq!(s.edges.len(), 4);
    }

    #[test]
    fn isolated_node_is_alone() {
        let g = graph(3, &[(1, 2)]);
        for k in 1..4 {
            let s = extract_k_hop_subgraph(&g, 0, k);
            assert_eq!(s.nodes, vec![0]);
            assert!(s.edges.is_empty());
        }
    }

    #[test]
    fn six_cycle_two_hops() {
        let g = graph(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)]);
        let s = extract_k_hop_subgraph(&g, 0, 2);
        let mut got = s.nodes.clone();
        got.sort_unstable();
        assert_eq!(got, vec![0, 1, 2, 4, 5]);
        let mut global: Vec<(usize, usize)> = s
            .edges
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (s.nodes[a], s.nodes[b]);
                (x.min(y), x.max(y))
            })
            .collect();
        global.sort_unstable();
        // The induced path 2-1-0-5-4.
        assert_eq!(global, vec![(0, 1), (0, 5), (1, 2), (4, 5)]);
    }

    /// All-pairs hop distances by Floyd-Warshall.
    fn all_pairs(g: &Graph) -> Vec<Vec<usize>> {
        let n = g.num_nodes();
        let inf = usize::MAX / 4;
        let mut d = vec![vec![inf; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0;
            for &j in g.neighbors(i) {
                row[j] = 1;
            }
        }
        for m in 0..n {
            for i in 0..n {
                for j in 0..n {
                    d[i][j] = d[i][j].min(d[i][m] + d[m][j]);
                }
            }
        }
        d
    }

    proptest! {
        #[test]
        fn matches_shortest_path_filter(
            n in 1usize..50,
            raw in prop::collection::vec((0usize..50, 0usize..50), 0..120),
            k in 0usize..5,
        ) {
            let edges: Vec<(usize, usize)> = raw.into_iter().map(|(a, b)| (a % n, b % n)).collect();
            let g = graph(n, &edges);
            let d = all_pairs(&g);
            for v in 0..n {
                let s = extract_k_hop_subgraph(&g, v, k);
                prop_assert_eq!(s.nodes[0], v);
                let mut got = s.nodes.clone();
                got.sort_unstable();
                let want: Vec<usize> = (0..n).filter(|&u| d[v][u] <= k).collect();
                prop_assert_eq!(got, want);
                for (&u, &depth) in s.nodes.iter().zip(&s.depth) {
                    prop_assert_eq!(depth, d[v][u]);
                }
                let mut want_edges = Vec::new();
                for (a, &x) in s.nodes.iter().enumerate() {
                    for (b, &y) in s.nodes.iter().enumerate() {
                        if a < b && g.has_edge(x, y) {
                            want_edges.push((a, b));
                        }
                    }
                }
                want_edges.sort_unstable();
                prop_assert_eq!(&s.edges, &want_edges);
            }
        }
    }
}
