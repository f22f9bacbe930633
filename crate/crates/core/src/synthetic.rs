//! Synthetic knowledge graphs: a stochastic block model with block-typed
//! relations, and a relation chain for link-prediction checks.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::kg::{EmbeddingMatrix, KnowledgeGraph, Triple};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SbmConfig {
    pub n_entities: usize,
    pub n_blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub n_relations: usize,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self { n_entities: 500, n_blocks: 5, p_in: 0.06, p_out: 0.002, n_relations: 8, seed: 0 }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.n_entities < 2 * self.n_blocks {
            return config("SBM needs at least two entities per block");
        }
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=1.0).contains(&self.p_out) {
            return config("SBM probabilities outside [0, 1]");
        }
        if self.n_relations == 0 {
            return config("SBM needs at least one relation");
        }
        Ok(())
    }

    pub fn block_of(&self, v: usize) -> usize {
        v * self.n_blocks / self.n_entities
    }
}

/// Each unordered pair is linked with `p_in` inside a block and `p_out`
/// across. The edge's direction is random; its relation is determined by
/// the ordered block pair with a random offset among two candidates.
pub fn sbm_graph(cfg: &SbmConfig) -> Result<KnowledgeGraph> {
    cfg.validate()?;
    let mut rng = rng::seeded(cfg.seed);
    let mut triples = Vec::new();
    for a in 0..cfg.n_entities {
        for b in a + 1..cfg.n_entities {
            let (ba, bb) = (cfg.block_of(a), cfg.block_of(b));
            let p = if ba == bb { cfg.p_in } else { cfg.p_out };
            if rng.random::<f64>() >= p {
                continue;
            }
            let (h, t) = if rng.random::<bool>() { (a, b) } else { (b, a) };
            let base = cfg.block_of(h) * cfg.n_blocks + cfg.block_of(t);
            let r = (base + rng.random_range(0..2)) % cfg.n_relations;
            triples.push(Triple::new(h, r, t));
        }
    }
    let (kg, _) = KnowledgeGraph::from_triples(cfg.n_entities, cfg.n_relations, triples)?;
    if kg.triples().is_empty() {
        return Err(crate::Error::EmptyGraph);
    }
    Ok(kg)
}

/// `0 -r0-> 1 -r1-> 2 ...` with relations cycling through `n_relations`.
pub fn chain_graph(n: usize, n_relations: usize) -> Result<KnowledgeGraph> {
    if n < 2 || n_relations == 0 {
        return config("chain needs two entities and a relation");
    }
    let triples = (0..n - 1).map(|i| Triple::new(i, i % n_relations, i + 1));
    Ok(KnowledgeGraph::from_triples(n, n_relations, triples)?.0)
}

/// Untrained stand-in for a KGE: block centroid plus Gaussian spread, with
/// uniform relation phases. Far cheaper than training when only the
/// watermark pipeline is under study.
pub fn structured_embedding(
    kg: &KnowledgeGraph,
    n_blocks: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    if dim == 0 || dim % 2 != 0 || n_blocks == 0 {
        return config("structured embedding needs positive even dim and blocks");
    }
    let n = kg.n_entities();
    let mut rng = rng::seeded(seed);
    let centroids = rng::normal_grid(&mut rng, n_blocks, dim, 1.0);
    let ent = Array2::from_shape_fn((n, dim), |(v, j)| {
        let z: f64 = StandardNormal.sample(&mut rng);
        centroids[[v * n_blocks / n, j]] + spread * z
    });
    let pi = std::f64::consts::PI;
    let rel = Array2::from_shape_simple_fn((kg.n_relations(), dim / 2), || rng.random_range(-pi..pi));
    EmbeddingMatrix::new(ent, rel)
}
