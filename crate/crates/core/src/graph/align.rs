use std::cmp::Ordering;

use ndarray::Array2;

use super::{clustering_coefficient, Graph};

/// Canonical vertex order: `order[i]` is the vertex placed at position `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedOrder {
    pub order: Vec<usize>,
    pub position: Vec<usize>,
    pub degree: Vec<usize>,
    pub clustering: Vec<f64>,
}

impl AlignedOrder {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// The graph relabelled into canonical positions.
    pub fn aligned_graph(&self, g: &Graph) -> Graph {
        g.permuted(&self.order)
    }

    /// Rows reordered into canonical positions.
    pub fn reorder_rows(&self, m: &Array2<f64>) -> Array2<f64> {
        m.select(ndarray::Axis(0), &self.order)
    }
}

/// Sort by degree (descending), clustering coefficient (descending), a
/// one-round Weisfeiler-Lehman color of neighbor `(degree, coefficient)`
/// pairs, then iterated neighbor-class refinement. Remaining ties are
/// broken one vertex at a time, each followed by another refinement, so
/// the result is label-independent whenever every tied class it breaks is
/// an automorphism orbit.
pub fn align_graph(g: &Graph) -> AlignedOrder {
    let n = g.n_vertices();
    let degree: Vec<usize> = (0..n).map(|v| g.degree(v)).collect();
    let clustering: Vec<f64> = (0..n).map(|v| clustering_coefficient(g, v)).collect();

    let wl: Vec<Vec<(usize, u64)>> = (0..n)
        .map(|v| {
            let mut c: Vec<(usize, u64)> = g
                .neighbors(v)
                .iter()
                .map(|&u| (degree[u], clustering[u].to_bits()))
                .collect();
            c.sort_unstable_by(|a, b| b.cmp(a));
            c
        })
        .collect();

    let base_cmp = |a: usize, b: usize| -> Ordering {
        degree[b]
            .cmp(&degree[a])
            .then_with(|| clustering[b].total_cmp(&clustering[a]))
            .then_with(|| wl[b].cmp(&wl[a]))
    };

    let mut verts: Vec<usize> = (0..n).collect();
    verts.sort_by(|&a, &b| base_cmp(a, b));
    let mut class = vec![0usize; n];
    let mut n_classes = assign_classes(&verts, &mut class, |a, b| base_cmp(a, b) == Ordering::Equal);

    refine(g, &mut verts, &mut class, &mut n_classes);

    // individualize the lowest-index member of the first tied class and
    // refine again until every class is a singleton
    while n_classes < n {
        let mut start = 0;
        while start + 1 < n && class[verts[start]] != class[verts[start + 1]] {
            start += 1;
        }
        let c = class[verts[start]];
        let chosen = verts[start..].iter().take_while(|&&v| class[v] == c).copied().min().unwrap();
        verts.sort_by(|&a, &b| class[a].cmp(&class[b]).then_with(|| (a != chosen).cmp(&(b != chosen))));
        let mut next = vec![0usize; n];
        n_classes = assign_classes(&verts, &mut next, |a, b| next_same(&class, chosen, a, b));
        class = next;
        if g.degree(chosen) > 0 {
            refine(g, &mut verts, &mut class, &mut n_classes);
        }
    }

    let order = verts;
    let mut position = vec![0; n];
    for (i, &v) in order.iter().enumerate() {
        position[v] = i;
    }
    AlignedOrder { order, position, degree, clustering }
}

fn next_same(class: &[usize], chosen: usize, a: usize, b: usize) -> bool {
    class[a] == class[b] && (a == chosen) == (b == chosen)
}

/// Color refinement on sorted neighbor-class multisets until stable.
fn refine(g: &Graph, verts: &mut [usize], class: &mut Vec<usize>, n_classes: &mut usize) {
    let n = verts.len();
    loop {
        let signature: Vec<Vec<usize>> = (0..n)
            .map(|v| {
                let mut s: Vec<usize> = g.neighbors(v).iter().map(|&u| class[u]).collect();
                s.sort_unstable();
                s
            })
            .collect();
        let cmp = |a: usize, b: usize| class[a].cmp(&class[b]).then_with(|| signature[a].cmp(&signature[b]));
        verts.sort_by(|&a, &b| cmp(a, b));
        let mut next = vec![0usize; n];
        let refined = assign_classes(verts, &mut next, |a, b| cmp(a, b) == Ordering::Equal);
        *class = next;
        if refined == *n_classes {
            break;
        }
        *n_classes = refined;
    }
}

fn assign_classes(
    sorted: &[usize],
    class: &mut [usize],
    same: impl Fn(usize, usize) -> bool,
) -> usize {
    let mut id = 0;
    for (i, &v) in sorted.iter().enumerate() {
        if i > 0 && !same(sorted[i - 1], v) {
            id += 1;
        }
        class[v] = id;
    }
    if sorted.is_empty() {
        0
    } else {
        id + 1
    }
}
