//! Post-editing attacks on watermarked graphs and embeddings, and the
//! adversarial objective used to compare them.

use ndarray::{Array1, Array2, Axis};
use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::detector::masked_components;
use crate::diffusion::Sampler;
use crate::error::{config, shape, Result};
use crate::graph::Graph;
use crate::kg::{EmbeddingMatrix, KnowledgeGraph, LabelMap, Triple};
use crate::rng;
use crate::spectral::{fft2, MaskMatrix, WatermarkKey};

/// Candidate directions tried by the L2 attack.
pub const L2_CANDIDATES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    GaussianNoise,
    Smoothing,
    RelationAlteration,
    TripleDeletion,
    Isomorphism,
    L2Embedding,
}

impl AttackKind {
    pub const ALL: [AttackKind; 6] = [
        AttackKind::GaussianNoise,
        AttackKind::Smoothing,
        AttackKind::RelationAlteration,
        AttackKind::TripleDeletion,
        AttackKind::Isomorphism,
        AttackKind::L2Embedding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::GaussianNoise => "gaussian_noise",
            AttackKind::Smoothing => "smoothing",
            AttackKind::RelationAlteration => "relation_alteration",
            AttackKind::TripleDeletion => "triple_deletion",
            AttackKind::Isomorphism => "isomorphism",
            AttackKind::L2Embedding => "l2_embedding",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .map_or_else(|| config(format!("unknown attack kind {s:?}")), Ok)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub intensity: f64,
    /// Noise standard deviation; defaults to a tenth of the embedding's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    /// Neighbor weight for smoothing.
    #[serde(default = "default_weight")]
    pub weight: f64,
    /// Per-row L2 budget; defaults to `intensity` times the RMS row norm
    /// scaled by a tenth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_weight() -> f64 {
    0.5
}

impl AttackSpec {
    pub fn new(kind: AttackKind, intensity: f64, seed: u64) -> Self {
        Self { kind, intensity, noise_sigma: None, weight: default_weight(), budget: None, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.intensity) {
            return config(format!("attack intensity {} outside [0, 1]", self.intensity));
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return config(format!("smoothing weight {} outside [0, 1]", self.weight));
        }
        if self.noise_sigma.is_some_and(|s| !(s >= 0.0 && s.is_finite())) {
            return config("noise sigma must be non-negative");
        }
        if self.budget.is_some_and(|b| !(b >= 0.0 && b.is_finite())) {
            return config("L2 budget must be non-negative");
        }
        Ok(())
    }
}

/// `ceil(fraction * n)`, robust to representation error in `fraction`.
pub fn affected_count(n: usize, fraction: f64) -> usize {
    (((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

fn pick(n: usize, fraction: f64, rng: &mut rng::Rng) -> Vec<usize> {
    let mut v = index::sample(rng, n, affected_count(n, fraction)).into_vec();
    v.sort_unstable();
    v
}

fn check_fraction(f: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&f) {
        return config(format!("fraction {f} outside [0, 1]"));
    }
    Ok(())
}

pub fn embedding_std(emb: &Array2<f64>) -> f64 {
    emb.std(0.0)
}

/// Adds `N(0, sigma^2)` to a seeded `ceil(intensity n)` subset of rows.
pub fn gaussian_noise(emb: &Array2<f64>, intensity: f64, sigma: f64, seed: u64) -> Result<Array2<f64>> {
    check_fraction(intensity)?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return config("noise sigma must be non-negative");
    }
    let mut rng = rng::seeded(seed);
    let rows = pick(emb.nrows(), intensity, &mut rng);
    let mut out = emb.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    for r in rows {
        out.row_mut(r).iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    Ok(out)
}

/// Selected rows become `(1 - w) self + w mean(neighbors)`, from the
/// unattacked rows; isolated vertices keep their row.
pub fn smoothing(emb: &Array2<f64>, graph: &Graph, intensity: f64, weight: f64, seed: u64) -> Result<Array2<f64>> {
    check_fraction(intensity)?;
    if !(0.0..=1.0).contains(&weight) {
        return config(format!("smoothing weight {weight} outside [0, 1]"));
    }
    if graph.n_vertices() != emb.nrows() {
        return shape("smoothing: graph and embedding sizes differ");
    }
    let rows = pick(emb.nrows(), intensity, &mut rng::seeded(seed));
    let mut out = emb.clone();
    for r in rows {
        let nb = graph.neighbors(r);
        if nb.is_empty() || weight == 0.0 {
            continue;
        }
        let mean: Array1<f64> = emb.select(Axis(0), nb).mean_axis(Axis(0)).expect("non-empty");
        let new = emb.row(r).mapv(|v| (1.0 - weight) * v) + mean.mapv(|v| weight * v);
        out.row_mut(r).assign(&new);
    }
    Ok(out)
}

/// Re-draws the relation of `ceil(fraction |triples|)` triples uniformly
/// among the other relations.
pub fn relation_alteration(kg: &KnowledgeGraph, fraction: f64, seed: u64) -> Result<KnowledgeGraph> {
    check_fraction(fraction)?;
    let nr = kg.n_relations();
    let mut triples = kg.triples().to_vec();
    if affected_count(triples.len(), fraction) == 0 {
        return Ok(kg.clone());
    }
    if nr < 2 {
        return config("relation alteration needs at least two relations");
    }
    let mut rng = rng::seeded(seed);
    for i in pick(triples.len(), fraction, &mut rng) {
        let shift = 1 + rng.random_range(0..nr - 1);
        triples[i].relation = (triples[i].relation + shift) % nr;
    }
    kg.with_triples(triples)
}

/// Removes `ceil(fraction |triples|)` triples; entities stay.
pub fn triple_deletion(kg: &KnowledgeGraph, fraction: f64, seed: u64) -> Result<KnowledgeGraph> {
    check_fraction(fraction)?;
    let triples = kg.triples();
    let drop = pick(triples.len(), fraction, &mut rng::seeded(seed));
    let mut keep = vec![true; triples.len()];
    drop.into_iter().for_each(|i| keep[i] = false);
    let kept: Vec<Triple> = triples.iter().zip(&keep).filter(|(_, &k)| k).map(|(t, _)| *t).collect();
    kg.with_triples(kept)
}

/// Seeded uniform permutation: `perm[old] = new`.
pub fn random_permutation(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng::seeded(seed));
    p
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (old, &new) in perm.iter().enumerate() {
        inv[new] = old;
    }
    inv
}

/// Relabel entities by `perm[old] = new`, moving triples, labels and rows
/// together.
pub fn permute_entities(
    kg: &KnowledgeGraph,
    emb: &EmbeddingMatrix,
    perm: &[usize],
) -> Result<(KnowledgeGraph, EmbeddingMatrix)> {
    let n = kg.n_entities();
    if perm.len() != n || emb.n_entities() != n {
        return shape("permutation, graph and embedding sizes differ");
    }
    let inv = inverse_permutation(perm);
    let triples = kg
        .triples()
        .iter()
        .map(|t| Triple::new(perm[t.head], t.relation, perm[t.tail]))
        .collect::<Vec<_>>();
    let labels = LabelMap {
        entities: inv.iter().map(|&old| kg.labels().entities[old].clone()).collect(),
        relations: kg.labels().relations.clone(),
    };
    let kg2 = kg.with_triples(triples)?.with_labels(labels)?;
    let emb2 = emb.with_entities(emb.entities().select(Axis(0), &inv))?;
    Ok((kg2, emb2))
}

pub fn isomorphism_variation(
    kg: &KnowledgeGraph,
    emb: &EmbeddingMatrix,
    seed: u64,
) -> Result<(KnowledgeGraph, EmbeddingMatrix)> {
    permute_entities(kg, emb, &random_permutation(kg.n_entities(), seed))
}

/// Attacker's stand-in for the detector: spectral energy moved on a random
/// mask over the whole entity matrix.
pub struct SurrogateStatistic {
    mask: MaskMatrix,
}

impl SurrogateStatistic {
    pub fn new(rows: usize, cols: usize, seed: u64) -> Result<Self> {
        Ok(Self { mask: MaskMatrix::random_symmetric(rows, cols, crate::DEFAULT_DENSITY, seed, true)? })
    }

    pub fn shift(&self, delta: &Array2<f64>) -> Result<f64> {
        Ok(masked_components(&fft2(delta)?, &self.mask)?.iter().map(|c| c * c).sum())
    }
}

/// Random directions with every row scaled to norm `budget`.
pub fn random_row_directions(rows: usize, cols: usize, budget: f64, rng: &mut rng::Rng) -> Array2<f64> {
    let mut d = Array2::from_shape_simple_fn((rows, cols), || {
        let x: f64 = StandardNormal.sample(rng);
        x
    });
    for mut row in d.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v * budget / norm);
    }
    d
}

/// Worst of [`L2_CANDIDATES`] random perturbations with per-row norm
/// `budget`, judged by the surrogate statistic shift.
pub fn l2_embedding_attack(emb: &Array2<f64>, budget: f64, seed: u64) -> Result<Array2<f64>> {
    if !(budget >= 0.0 && budget.is_finite()) {
        return config("L2 budget must be non-negative");
    }
    if budget == 0.0 {
        return Ok(emb.clone());
    }
    let (rows, cols) = emb.dim();
    let surrogate = SurrogateStatistic::new(rows, cols, rng::derive(seed, 0x5u64))?;
    let mut rng = rng::seeded(seed);
    let mut best: Option<(f64, Array2<f64>)> = None;
    for _ in 0..L2_CANDIDATES {
        let d = random_row_directions(rows, cols, budget, &mut rng);
        let s = surrogate.shift(&d)?;
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, d));
        }
    }
    Ok(emb + &best.unwrap().1)
}

/// RMS of the entity row norms.
pub fn rms_row_norm(emb: &Array2<f64>) -> f64 {
    (emb.mapv(|v| v * v).sum() / emb.nrows() as f64).sqrt()
}

/// Apply an attack to a graph and its embedding.
pub fn apply_attack(
    spec: &AttackSpec,
    kg: &KnowledgeGraph,
    emb: &EmbeddingMatrix,
) -> Result<(KnowledgeGraph, EmbeddingMatrix)> {
    spec.validate()?;
    let ent = emb.entities();
    Ok(match spec.kind {
        AttackKind::GaussianNoise => {
            let sigma = spec.noise_sigma.unwrap_or(0.1 * embedding_std(ent));
            (kg.clone(), emb.with_entities(gaussian_noise(ent, spec.intensity, sigma, spec.seed)?)?)
        }
        AttackKind::Smoothing => {
            (kg.clone(), emb.with_entities(smoothing(ent, kg.graph(), spec.intensity, spec.weight, spec.seed)?)?)
        }
        AttackKind::RelationAlteration => (relation_alteration(kg, spec.intensity, spec.seed)?, emb.clone()),
        AttackKind::TripleDeletion => (triple_deletion(kg, spec.intensity, spec.seed)?, emb.clone()),
        AttackKind::Isomorphism => {
            if spec.intensity == 0.0 {
                (kg.clone(), emb.clone())
            } else {
                isomorphism_variation(kg, emb, spec.seed)?
            }
        }
        AttackKind::L2Embedding => {
            let budget = spec.budget.unwrap_or(spec.intensity * 0.1 * rms_row_norm(ent));
            (kg.clone(), emb.with_entities(l2_embedding_attack(ent, budget, spec.seed)?)?)
        }
    })
}

/// `cos(masked F(T(X + sum delta)), masked F(S)) + gamma sum ||delta_k||_q`
/// where `T` encodes and inverts the block.
pub fn attack_objective(
    block: &Array2<f64>,
    deltas: &[Array2<f64>],
    key: &WatermarkKey,
    sampler: &Sampler,
    gamma: f64,
    q: u32,
) -> Result<f64> {
    if q != 1 && q != 2 {
        return config(format!("norm order {q} must be 1 or 2"));
    }
    let mut x = block.clone();
    for d in deltas {
        if d.dim() != block.dim() {
            return shape("perturbation shape differs from block");
        }
        x = x + d;
    }
    let grid = codec::encode_block(&x, 0, (0..x.nrows()).collect())?;
    let z = sampler.invert(&grid.data, key.detect_steps)?;
    let y = masked_components(&fft2(&z)?, &key.mask)?;
    let k = masked_components(&fft2(&key.signature()?.spatial)?, &key.mask)?;
    let sim = crate::eval::cosine_slices(&y, &k)?;
    let penalty: f64 = deltas
        .iter()
        .map(|d| if q == 1 { d.iter().map(|v| v.abs()).sum::<f64>() } else { d.iter().map(|v| v * v).sum::<f64>().sqrt() })
        .sum();
    Ok(sim + gamma * penalty)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_rule() {
        assert_eq!(affected_count(100, 0.3), 30);
        assert_eq!(affected_count(10, 0.0), 0);
        assert_eq!(affected_count(7, 1.0), 7);
        assert_eq!(affected_count(3, 0.5), 2);
    }

    #[test]
    fn noise_rows() {
        let e = Array2::zeros((100, 4));
        let out = gaussian_noise(&e, 0.3, 1.0, 1).unwrap();
        let touched = out.rows().into_iter().filter(|r| r.iter().any(|&v| v != 0.0)).count();
        assert_eq!(touched, 30);
        assert_eq!(gaussian_noise(&e, 0.0, 1.0, 1).unwrap(), e);
        assert_eq!(gaussian_noise(&e, 1.0, 0.0, 1).unwrap(), e);
        assert_eq!(out, gaussian_noise(&e, 0.3, 1.0, 1).unwrap());
    }

    #[test]
    fn smoothing_midpoint() {
        let g = Graph::from_edges(2, [(0, 1)]);
        let e = ndarray::array![[0.0, 2.0], [4.0, 6.0]];
        let out = smoothing(&e, &g, 1.0, 0.5, 0).unwrap();
        assert_eq!(out, ndarray::array![[2.0, 4.0], [2.0, 4.0]]);
        assert_eq!(smoothing(&e, &g, 1.0, 0.0, 0).unwrap(), e);
    }

    #[test]
    fn permutation_inverse() {
        let p = random_permutation(20, 3);
        let inv = inverse_permutation(&p);
        for i in 0..20 {
            assert_eq!(inv[p[i]], i);
        }
    }

    #[test]
    fn l2_norms() {
        let e = Array2::zeros((6, 8));
        let out = l2_embedding_attack(&e, 0.7, 2).unwrap();
        for row in out.rows() {
            assert!((row.dot(&row).sqrt() - 0.7).abs() < 1e-10);
        }
        assert_eq!(l2_embedding_attack(&e, 0.0, 2).unwrap(), e);
    }

    #[test]
    fn parse_kinds() {
        for k in AttackKind::ALL {
            assert_eq!(AttackKind::parse(k.name()).unwrap(), k);
        }
        assert!(AttackKind::parse("nope").is_err());
    }
}
