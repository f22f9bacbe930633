use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Graph;

/// Eigenvalues at or below this magnitude are treated as the null space.
pub const PINV_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub local: f64,
    pub global: f64,
    pub alpha_weight: f64,
    pub total: f64,
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Moore-Penrose inverse of the combinatorial Laplacian of `g`, padded to
/// `n` vertices.
pub fn laplacian_pseudoinverse(g: &Graph, n: usize) -> DMatrix<f64> {
    let a = to_na(&g.dense_adjacency(n));
    let n = a.nrows();
    let mut l = -a;
    for v in 0..n {
        let d: f64 = -l.row(v).sum();
        l[(v, v)] = d;
    }
    let eig = SymmetricEigen::new(l);
    let mut pinv = DMatrix::zeros(n, n);
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() <= PINV_CUTOFF {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        pinv += (v * v.transpose()) / lam;
    }
    pinv
}

fn spectral_norm_symmetric(m: DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(m).eigenvalues.iter().fold(0.0f64, |acc, &x| acc.max(x.abs()))
}

/// `||A - A~||_F + alpha * ||L+ - L~+||_2` on a common vertex set.
pub fn divergence(g: &Graph, g_tilde: &Graph, alpha_weight: f64) -> DivergenceReport {
    let n = g.n_vertices().max(g_tilde.n_vertices());
    let a = g.dense_adjacency(n);
    let b = g_tilde.dense_adjacency(n);
    let local = (&a - &b).mapv(|x| x * x).sum().sqrt();
    let global = if local == 0.0 {
        0.0
    } else {
        let diff = laplacian_pseudoinverse(g, n) - laplacian_pseudoinverse(g_tilde, n);
        // symmetrize against round-off before the eigensolve
        let sym = (&diff + diff.transpose()) * 0.5;
        spectral_norm_symmetric(sym)
    };
    DivergenceReport { local, global, alpha_weight, total: local + alpha_weight * global }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_graphs_zero() {
        let g = Graph::from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)]);
        let d = divergence(&g, &g, 0.5);
        assert_eq!((d.local, d.global, d.total), (0.0, 0.0, 0.0));
    }

    #[test]
    fn k3_minus_edge() {
        let k3 = Graph::from_edges(3, [(0, 1), (1, 2), (2, 0)]);
        let cut = Graph::from_edges(3, [(0, 1), (1, 2)]);
        let d = divergence(&k3, &cut, 1.0);
        assert!((d.local - 2f64.sqrt()).abs() < 1e-15);
        assert!(d.global > 0.0);
        assert!((d.total - d.local - d.global).abs() < 1e-15);
    }

    #[test]
    fn pads_smaller_graph() {
        let g = Graph::from_edges(3, [(0, 1)]);
        let h = Graph::from_edges(4, [(0, 1), (2, 3)]);
        let d = divergence(&g, &h, 0.0);
        assert!((d.local - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn pseudoinverse_of_single_edge() {
        // L = [[1,-1],[-1,1]] has pinv L/4
        let g = Graph::from_edges(2, [(0, 1)]);
        let p = laplacian_pseudoinverse(&g, 2);
        assert!((p[(0, 0)] - 0.25).abs() < 1e-14);
        assert!((p[(0, 1)] + 0.25).abs() < 1e-14);
    }
}
