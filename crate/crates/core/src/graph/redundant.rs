//! Layered per-community embedding: the low layer replaces masked
//! coefficients over the whole community grid, the high layer is a
//! minimum-norm correction confined to the rows of its most central
//! vertices.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{align_graph, centrality, partition_communities, CommunityPartition, Graph};
use crate::codec::{self, CodecStats};
use crate::diffusion::{PredictorKind, Sampler, ScheduleSpec};
use crate::error::{config, shape, Result};
use crate::par::{self, Execution};
use crate::rng;
use crate::spectral::{column_constraints, embed_on_rows, fft2, replace_masked, MaskMatrix, Spectrum, WatermarkKey};

/// Everything in a key except the seed and mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeySettings {
    pub sigma2: f64,
    pub schedule: ScheduleSpec,
    pub embed_steps: usize,
    pub detect_steps: usize,
    pub alpha_correction: f64,
    pub predictor: PredictorKind,
}

impl Default for KeySettings {
    fn default() -> Self {
        Self {
            sigma2: 1.0,
            schedule: ScheduleSpec::default(),
            embed_steps: crate::DEFAULT_STEPS,
            detect_steps: crate::DEFAULT_STEPS,
            alpha_correction: 0.05,
            predictor: PredictorKind::Linear,
        }
    }
}

impl KeySettings {
    pub fn key(&self, seed: u64, mask: MaskMatrix) -> WatermarkKey {
        WatermarkKey {
            seed,
            sigma2: self.sigma2,
            mask,
            schedule: self.schedule.clone(),
            embed_steps: self.embed_steps,
            detect_steps: self.detect_steps,
            alpha_correction: self.alpha_correction,
            predictor: self.predictor,
        }
    }
}

/// `max(2, floor(n / 5))`: five communities by default.
pub fn default_community_size(n: usize) -> usize {
    (n / 5).max(2)
}

/// Distinct community grid heights for `n` vertices chunked by `s`.
pub fn community_heights(n: usize, s: usize) -> Result<Vec<usize>> {
    if s < 2 || s > n {
        return config(format!("community size {s} invalid for {n} vertices"));
    }
    let last = s + n % s;
    Ok(if last == s { vec![s] } else { vec![s, last] })
}

/// One layered random-mask key per community grid shape.
pub fn key_ring(
    n: usize,
    dim: usize,
    s: usize,
    density: f64,
    seed: u64,
    settings: &KeySettings,
) -> Result<Vec<WatermarkKey>> {
    community_heights(n, s)?
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            let key_seed = rng::derive(seed, 2 * i as u64);
            let mask = MaskMatrix::layered(m, dim, density, rng::derive(seed, 2 * i as u64 + 1))?;
            Ok(settings.key(key_seed, mask))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedOptions {
    /// Community size; defaults to the smallest key grid height.
    pub community_size: Option<usize>,
    /// Restrict embedding to these community indices.
    pub only: Option<Vec<usize>>,
    pub execution: Execution,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self { community_size: None, only: None, execution: Execution::Parallel }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityKeyUse {
    pub community_id: usize,
    pub key_index: usize,
    /// Vertex ids whose rows carry the high layer.
    pub vertex_layer: Vec<usize>,
    pub stats: CodecStats,
}

#[derive(Debug, Clone)]
pub struct EmbedOutcome {
    pub entities: Array2<f64>,
    pub partition: CommunityPartition,
    pub uses: Vec<CommunityKeyUse>,
}

/// Rows (block positions) of the `max(ceil(len / 4), min_rows)` most
/// central members, ties by block position.
pub fn vertex_layer_rows(graph: &Graph, members: &[usize], min_rows: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..members.len()).collect();
    idx.sort_by(|&a, &b| {
        centrality(graph, members[b]).total_cmp(&centrality(graph, members[a])).then(a.cmp(&b))
    });
    idx.truncate(members.len().div_ceil(4).max(min_rows));
    idx.sort_unstable();
    idx
}

/// Watermark a whitened latent at the terminal state: full replacement on
/// the low layer, then a row-restricted correction for the high layer.
pub fn watermark_terminal(
    z_t: &Array2<f64>,
    key: &WatermarkKey,
    reference: &Spectrum,
    vertex_rows: &[usize],
) -> Result<Array2<f64>> {
    let (phi, psi) = key.mask.split();
    let z1 = replace_masked(z_t, reference, &phi)?;
    if psi.is_empty() {
        return Ok(z1);
    }
    embed_on_rows(&z1, reference, &phi, &psi, vertex_rows)
}

/// Encode, invert, watermark, sample back and decode one block.
pub fn watermark_block(
    block: &Array2<f64>,
    key: &WatermarkKey,
    sampler: &Sampler,
    reference: &Spectrum,
    vertex_rows: &[usize],
) -> Result<(Array2<f64>, CodecStats)> {
    if block.dim() != key.dim() {
        return shape(format!("block {:?} vs key {:?}", block.dim(), key.dim()));
    }
    let grid = codec::encode_block(block, 0, (0..block.nrows()).collect())?;
    let z_t = sampler.invert(&grid.data, key.embed_steps)?;
    let z_w = watermark_terminal(&z_t, key, reference, vertex_rows)?;
    let z0 = sampler.sample(&z_w, key.embed_steps)?;
    Ok((codec::decode_block(&grid.with_data(z0)?), grid.stats))
}

pub fn redundant_embed(
    graph: &Graph,
    entities: &Array2<f64>,
    ring: &[WatermarkKey],
    opts: &EmbedOptions,
) -> Result<EmbedOutcome> {
    if ring.is_empty() {
        return config("empty key ring");
    }
    if graph.n_vertices() != entities.nrows() {
        return shape(format!(
            "graph has {} vertices but embedding has {} rows",
            graph.n_vertices(),
            entities.nrows()
        ));
    }
    for k in ring {
        k.validate()?;
    }
    let s = opts.community_size.unwrap_or_else(|| ring.iter().map(|k| k.dim().0).min().unwrap());
    let aligned = align_graph(graph);
    let partition = partition_communities(&aligned, s)?;
    let selected: Vec<usize> = match &opts.only {
        Some(list) => {
            if let Some(&bad) = list.iter().find(|&&c| c >= partition.l) {
                return config(format!("community {bad} out of range"));
            }
            list.clone()
        }
        None => (0..partition.l).collect(),
    };

    let mut key_for = Vec::with_capacity(selected.len());
    for &c in &selected {
        let shape_c = (partition.communities[c].len(), entities.ncols());
        match ring.iter().position(|k| k.dim() == shape_c) {
            Some(ki) => key_for.push(ki),
            None => return shape(format!("no key for community {c} grid {shape_c:?}")),
        }
    }
    let mut prepared = Vec::with_capacity(ring.len());
    for key in ring {
        prepared.push((Sampler::new(&key.schedule, key.predictor)?, fft2(&key.signature()?.spatial)?));
    }

    let blocks = par::try_map_indexed(selected.len(), opts.execution, |i| {
        let c = selected[i];
        let members = &partition.communities[c];
        let key = &ring[key_for[i]];
        let (sampler, reference) = &prepared[key_for[i]];
        let (phi, psi) = key.mask.split();
        let rows = vertex_layer_rows(graph, members, 2 * column_constraints(&phi, &psi));
        let block = entities.select(Axis(0), members);
        let (out, stats) = watermark_block(&block, key, sampler, reference, &rows)?;
        let use_ = CommunityKeyUse {
            community_id: c,
            key_index: key_for[i],
            vertex_layer: rows.iter().map(|&r| members[r]).collect(),
            stats,
        };
        Ok::<_, crate::Error>((out, use_))
    })?;

    let mut result = entities.clone();
    let mut uses = Vec::with_capacity(blocks.len());
    for (i, (block, use_)) in blocks.into_iter().enumerate() {
        for (r, &v) in partition.communities[selected[i]].iter().enumerate() {
            result.row_mut(v).assign(&block.row(r));
        }
        uses.push(use_);
    }
    Ok(EmbedOutcome { entities: result, partition, uses })
}
