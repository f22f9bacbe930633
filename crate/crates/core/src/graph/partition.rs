use serde::{Deserialize, Serialize};

use super::AlignedOrder;
use crate::error::{config, Result};

/// Contiguous chunks of the aligned order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunityPartition {
    pub s: usize,
    pub l: usize,
    /// Vertex ids per community, in aligned order.
    pub communities: Vec<Vec<usize>>,
    #[serde(skip)]
    pub assignment: Vec<usize>,
}

/// `l = floor(|V| / s)` blocks of `s` aligned vertices; the remainder joins
/// the last block.
pub fn partition_communities(aligned: &AlignedOrder, s: usize) -> Result<CommunityPartition> {
    let n = aligned.len();
    if s < 2 {
        return config(format!("community size must be at least 2, got {s}"));
    }
    if s > n {
        return config(format!("community size {s} exceeds vertex count {n}"));
    }
    let l = n / s;
    let mut communities = Vec::with_capacity(l);
    for c in 0..l {
        let end = if c + 1 == l { n } else { (c + 1) * s };
        communities.push(aligned.order[c * s..end].to_vec());
    }
    let mut assignment = vec![0; n];
    for (c, members) in communities.iter().enumerate() {
        for &v in members {
            assignment[v] = c;
        }
    }
    Ok(CommunityPartition { s, l, communities, assignment })
}
