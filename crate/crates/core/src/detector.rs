//! Residual test statistic, noncentral chi-squared p-values and the
//! graph-level decision over a key ring.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::chi2;
use crate::codec;
use crate::diffusion::Sampler;
use crate::error::{config, shape, Error, Result};
use crate::graph::{align_graph, partition_communities, Graph};
use crate::par::{self, Execution};
use crate::spectral::{fft2, MaskMatrix, Spectrum, WatermarkKey};

/// Floor for the estimated per-component variance.
pub const SIGMA2_FLOOR: f64 = 1e-12;

/// Real scalar components over masked Hermitian units. A complex cell gives
/// its real and imaginary parts; a self-conjugate (real) cell gives its
/// value scaled by `1/sqrt(2)` so that every component has the same
/// variance under white noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub components: Vec<f64>,
}

impl Residual {
    pub fn dof(&self) -> usize {
        self.components.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.components.iter().map(|c| c * c).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

pub fn masked_components(spec: &Spectrum, mask: &MaskMatrix) -> Result<Vec<f64>> {
    if spec.dim() != mask.dim() {
        return shape(format!("spectrum {:?} vs mask {:?}", spec.dim(), mask.dim()));
    }
    let mut out = Vec::with_capacity(mask.count());
    for u in mask.units() {
        let c = spec.data[[u.row, u.col]];
        if u.self_conjugate {
            out.push(c.re / std::f64::consts::SQRT_2);
        } else {
            out.push(c.re);
            out.push(c.im);
        }
    }
    Ok(out)
}

/// `Y - K*` on the mask, `K* = F(S)`.
pub fn residual(y: &Spectrum, reference: &Spectrum, mask: &MaskMatrix) -> Result<Residual> {
    let a = masked_components(y, mask)?;
    let b = masked_components(reference, mask)?;
    Ok(Residual { components: a.iter().zip(&b).map(|(y, k)| y - k).collect() })
}

pub fn reference_spectrum(key: &WatermarkKey) -> Result<Spectrum> {
    fft2(&key.signature()?.spatial)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Estimate {
    pub value: f64,
    /// Set when no off-mask cell was available and the unit prior was used.
    pub fallback: bool,
}

/// Mean of `|Y|^2 / 2` over off-mask cells.
pub fn estimate_sigma2(y: &Spectrum, mask: &MaskMatrix) -> Result<Sigma2Estimate> {
    if y.dim() != mask.dim() {
        return shape("estimate_sigma2: shape mismatch");
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (c, &b) in y.data.iter().zip(mask.bits()) {
        if !b {
            sum += c.norm_sqr() / 2.0;
            count += 1;
        }
    }
    if count == 0 {
        return Ok(Sigma2Estimate { value: 1.0, fallback: true });
    }
    Ok(Sigma2Estimate { value: (sum / count as f64).max(SIGMA2_FLOOR), fallback: false })
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return config(format!("sigma2 must be positive, got {sigma2}"));
    }
    Ok(())
}

/// `(sum r^2 / sigma2, number of components)`.
pub fn test_statistic(r: &Residual, sigma2: f64) -> Result<(f64, usize)> {
    check_sigma2(sigma2)?;
    Ok((r.norm_sqr() / sigma2, r.dof()))
}

pub fn noncentrality(reference: &[f64], sigma2: f64) -> Result<f64> {
    check_sigma2(sigma2)?;
    Ok(reference.iter().map(|k| k * k).sum::<f64>() / sigma2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    /// Low entity-axis frequencies over the whole community.
    Community,
    /// High frequencies carried by the most central vertices.
    Vertex,
    /// Entire mask, when layers are not distinguished.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub id: usize,
    pub key_index: usize,
    pub layer: Layer,
    pub t_hat: f64,
    pub dof: usize,
    pub lambda: f64,
    pub p: f64,
    pub ln_p: f64,
    pub sigma2_hat: f64,
    pub sigma2_fallback: bool,
}

/// Lower-tail test of one masked region of `y` against `reference`.
pub fn test_region(
    y: &Spectrum,
    reference: &Spectrum,
    test_mask: &MaskMatrix,
    full_mask: &MaskMatrix,
) -> Result<(f64, usize, f64, f64, Sigma2Estimate)> {
    let sigma = estimate_sigma2(y, full_mask)?;
    let r = residual(y, reference, test_mask)?;
    let (t_hat, dof) = test_statistic(&r, sigma.value)?;
    let lambda = noncentrality(&masked_components(reference, test_mask)?, sigma.value)?;
    if dof == 0 {
        return config("empty test region");
    }
    let ln_p = chi2::nc_chi2_ln_cdf(t_hat, dof as f64, lambda)?;
    Ok((t_hat, dof, lambda, ln_p, sigma))
}

/// Tests of one inverted grid against one key: one per non-empty layer, or
/// the whole mask when `layered` is false.
pub fn test_grid(
    z_inv: &Array2<f64>,
    key: &WatermarkKey,
    reference: &Spectrum,
    id: usize,
    key_index: usize,
    layered: bool,
) -> Result<Vec<TestRecord>> {
    let y = fft2(z_inv)?;
    let regions = if layered {
        let (phi, psi) = key.mask.split();
        vec![(Layer::Community, phi), (Layer::Vertex, psi)]
    } else {
        vec![(Layer::Full, key.mask.clone())]
    };
    let mut out = Vec::new();
    for (layer, mask) in regions {
        if mask.is_empty() {
            continue;
        }
        let (t_hat, dof, lambda, ln_p, sigma) = test_region(&y, reference, &mask, &key.mask)?;
        out.push(TestRecord {
            id,
            key_index,
            layer,
            t_hat,
            dof,
            lambda,
            p: ln_p.exp(),
            ln_p,
            sigma2_hat: sigma.value,
            sigma2_fallback: sigma.fallback,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub alpha: f64,
    pub corrected_alpha: f64,
    pub n_tests: usize,
    pub min_p: f64,
    pub min_ln_p: f64,
    pub decision: bool,
    pub communities: Vec<TestRecord>,
}

impl DetectionResult {
    /// Bonferroni min-p decision over the given records.
    pub fn from_records(records: Vec<TestRecord>, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if records.is_empty() {
            return config("no test matched any community");
        }
        let n_tests = records.len();
        let corrected_alpha = alpha / n_tests as f64;
        let min_ln_p = records.iter().map(|r| r.ln_p).fold(f64::INFINITY, f64::min);
        let min_p = min_ln_p.exp();
        Ok(Self {
            alpha,
            corrected_alpha,
            n_tests,
            min_p,
            min_ln_p,
            decision: min_ln_p < corrected_alpha.ln(),
            communities: records,
        })
    }

    /// `-ln(min p)`, the detection score.
    pub fn score(&self) -> f64 {
        -self.min_ln_p
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return config(format!("alpha {alpha} outside (0, 1)"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectOptions {
    /// Community size; defaults to the smallest key grid height.
    pub community_size: Option<usize>,
    /// Test the two mask layers separately.
    pub layered: bool,
    pub execution: Execution,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self { community_size: None, layered: true, execution: Execution::Parallel }
    }
}

/// Align, partition, encode and invert every community of the candidate
/// graph, then test it against every key of matching grid shape.
pub fn detect(
    graph: &Graph,
    entities: &Array2<f64>,
    ring: &[WatermarkKey],
    alpha: f64,
    opts: &DetectOptions,
) -> Result<DetectionResult> {
    check_alpha(alpha)?;
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

    let mut prepared = Vec::with_capacity(ring.len());
    for key in ring {
        prepared.push((Sampler::new(&key.schedule, key.predictor)?, reference_spectrum(key)?));
    }

    let per_community = par::try_map_indexed(partition.l, opts.execution, |c| -> Result<Vec<TestRecord>> {
        let members = &partition.communities[c];
        if members.len() < 2 {
            return Err(Error::Shape(format!("community {c} has fewer than 2 vertices")));
        }
        let block = entities.select(Axis(0), members);
        let grid = codec::encode_block(&block, c, members.clone())?;
        let mut out = Vec::new();
        for (ki, key) in ring.iter().enumerate() {
            if key.dim() != grid.shape() {
                continue;
            }
            let (sampler, reference) = &prepared[ki];
            let z_inv = sampler.invert(&grid.data, key.detect_steps)?;
            out.extend(test_grid(&z_inv, key, reference, c, ki, opts.layered)?);
        }
        Ok(out)
    })?;
    DetectionResult::from_records(per_community.into_iter().flatten().collect(), alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::spectral::{embed_watermark, gen_signature};

    #[test]
    fn statistic_definitions() {
        let r = Residual { components: vec![3.0] };
        assert_eq!(test_statistic(&r, 1.0).unwrap(), (9.0, 1));
        assert_eq!(test_statistic(&Residual { components: vec![0.0; 4] }, 2.0).unwrap(), (0.0, 4));
        assert!(test_statistic(&r, 0.0).is_err());
        assert_eq!(noncentrality(&[0.0, 0.0], 1.0).unwrap(), 0.0);
        let a = noncentrality(&[1.0, 2.0], 1.0).unwrap();
        let b = noncentrality(&[2.0, 4.0], 1.0).unwrap();
        assert!((b - 4.0 * a).abs() < 1e-12);
    }

    #[test]
    fn sigma2_fallback_and_scaling() {
        let y = fft2(&rng::normal_grid(&mut rng::seeded(1), 8, 8, 1.0)).unwrap();
        let all = MaskMatrix::ones(8, 8);
        assert!(estimate_sigma2(&y, &all).unwrap().fallback);
        let none = MaskMatrix::zeros(8, 8);
        let s1 = estimate_sigma2(&y, &none).unwrap().value;
        let y2 = Spectrum { data: y.data.mapv(|c| c * 2.0), source: None };
        let s2 = estimate_sigma2(&y2, &none).unwrap().value;
        assert!((s2 / s1 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn exact_recovery_gives_tiny_p() {
        let (m, n) = (32, 32);
        let key = WatermarkKey::new(5, MaskMatrix::random_symmetric(m, n, 0.05, 2, true).unwrap());
        let sig = gen_signature(5, 1.0, m, n).unwrap();
        let z = rng::normal_grid(&mut rng::seeded(3), m, n, 1.0);
        let zw = embed_watermark(&z, &sig, &key.mask).unwrap();
        let reference = reference_spectrum(&key).unwrap();
        let recs = test_grid(&zw, &key, &reference, 0, 0, false).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(recs[0].t_hat < 1e-12);
        assert!(recs[0].ln_p < (1e-20f64).ln());
        let unmarked = test_grid(&z, &key, &reference, 0, 0, false).unwrap();
        assert!(unmarked[0].p > 1e-4);
    }

    #[test]
    fn decision_rule() {
        let rec = |ln_p: f64| TestRecord {
            id: 0,
            key_index: 0,
            layer: Layer::Full,
            t_hat: 0.0,
            dof: 1,
            lambda: 0.0,
            p: ln_p.exp(),
            ln_p,
            sigma2_hat: 1.0,
            sigma2_fallback: false,
        };
        let r = DetectionResult::from_records(vec![rec(-3.0), rec((1e-6f64).ln())], 5e-5).unwrap();
        assert_eq!(r.corrected_alpha, 2.5e-5);
        assert!(r.decision);
        assert!(DetectionResult::from_records(vec![], 0.05).is_err());
        assert!(DetectionResult::from_records(vec![rec(-1.0)], 1.5).is_err());
    }
}
