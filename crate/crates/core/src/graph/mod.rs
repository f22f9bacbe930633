//! Undirected structure used for alignment, partitioning and the
//! structural divergence metric, plus the layered community embedding.

mod align;
mod divergence;
mod partition;
pub mod redundant;

pub use align::{align_graph, AlignedOrder};
pub use divergence::{divergence, laplacian_pseudoinverse, DivergenceReport};
pub use partition::{partition_communities, CommunityPartition};
pub use redundant::{
    default_community_size, key_ring, redundant_embed, CommunityKeyUse, EmbedOptions, EmbedOutcome, KeySettings,
};

use ndarray::Array2;

/// Simple undirected graph: sorted, de-duplicated neighbor lists without
/// self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for (a, b) in edges {
            if a == b {
                continue;
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for nb in &mut adjacency {
            nb.sort_unstable();
            nb.dedup();
        }
        Self { adjacency }
    }

    pub fn n_vertices(&self) -> usize {
        self.adjacency.len()
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    /// Relabel so that new vertex `i` is old vertex `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut position = vec![0; order.len()];
        for (i, &v) in order.iter().enumerate() {
            position[v] = i;
        }
        let edges = order.iter().enumerate().flat_map(|(i, &v)| {
            let position = &position;
            self.adjacency[v].iter().map(move |&u| (i, position[u]))
        });
        Self::from_edges(order.len(), edges.collect::<Vec<_>>())
    }

    /// Dense 0/1 adjacency, padded with isolated vertices up to `n`.
    pub fn dense_adjacency(&self, n: usize) -> Array2<f64> {
        let mut a = Array2::zeros((n.max(self.n_vertices()), n.max(self.n_vertices())));
        for (v, nb) in self.adjacency.iter().enumerate() {
            for &u in nb {
                a[[v, u]] = 1.0;
            }
        }
        a
    }

    pub fn triangles_through(&self, v: usize) -> usize {
        let nb = &self.adjacency[v];
        let mut count = 0;
        for (i, &a) in nb.iter().enumerate() {
            for &b in &nb[i + 1..] {
                if self.has_edge(a, b) {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Fraction of neighbor pairs that are adjacent; 0 below degree 2.
pub fn clustering_coefficient(g: &Graph, v: usize) -> f64 {
    let d = g.degree(v);
    if d < 2 {
        return 0.0;
    }
    2.0 * g.triangles_through(v) as f64 / (d * (d - 1)) as f64
}

/// Degree centrality `deg(v) / (|V| - 1)`.
pub fn centrality(g: &Graph, v: usize) -> f64 {
    let n = g.n_vertices();
    if n < 2 {
        return 0.0;
    }
    g.degree(v) as f64 / (n - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_and_path_coefficients() {
        let tri = Graph::from_edges(3, [(0, 1), (1, 2), (2, 0)]);
        for v in 0..3 {
            assert_eq!(clustering_coefficient(&tri, v), 1.0);
        }
        let path = Graph::from_edges(3, [(0, 1), (1, 2)]);
        assert_eq!(clustering_coefficient(&path, 1), 0.0);
        assert_eq!(clustering_coefficient(&path, 0), 0.0);
    }

    #[test]
    fn star_centrality() {
        let star = Graph::from_edges(5, [(0, 1), (0, 2), (0, 3), (0, 4)]);
        assert_eq!(centrality(&star, 0), 1.0);
        assert_eq!(centrality(&star, 3), 0.25);
        let isolated = Graph::from_edges(3, [(0, 1)]);
        assert_eq!(centrality(&isolated, 2), 0.0);
    }

    #[test]
    fn self_loops_and_duplicates_dropped() {
        let g = Graph::from_edges(3, [(0, 0), (0, 1), (1, 0), (0, 1)]);
        assert_eq!(g.n_edges(), 1);
        assert_eq!(g.neighbors(0), &[1]);
    }

    #[test]
    fn permuted_round_trip() {
        let g = Graph::from_edges(4, [(0, 1), (1, 2), (2, 3)]);
        let order = [2, 0, 3, 1];
        let p = g.permuted(&order);
        assert!(p.has_edge(0, 3)); // old 2 - old 1
        let mut inv = [0; 4];
        for (i, &v) in order.iter().enumerate() {
            inv[v] = i;
        }
        assert_eq!(p.permuted(&inv), g);
    }
}
