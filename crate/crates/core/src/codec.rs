//! Reversible map between a community's embedding block and its latent
//! grid. The default codec whitens with the block's global mean and
//! standard deviation; a toy linear VAE is available as a lossy
//! alternative.

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config, shape, Error, Result};
use crate::rng;

pub const SCALE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecStats {
    pub mean: f64,
    pub scale: f64,
    /// Set when the block was constant and the scale was floored.
    pub degenerate: bool,
}

impl CodecStats {
    pub fn of(block: &Array2<f64>) -> Self {
        let n = block.len() as f64;
        let mean = block.sum() / n;
        let var = block.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std < SCALE_FLOOR {
            Self { mean, scale: SCALE_FLOOR, degenerate: true }
        } else {
            Self { mean, scale: std, degenerate: false }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGrid {
    #[serde(skip)]
    pub data: Array2<f64>,
    pub stats: CodecStats,
    pub community_id: usize,
    pub entity_order: Vec<usize>,
}

impl LatentGrid {
    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    /// Same codec metadata, different latent values.
    pub fn with_data(&self, data: Array2<f64>) -> Result<Self> {
        if data.dim() != self.data.dim() {
            return shape("latent grid shape changed");
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("latent grid contains non-finite values".into()));
        }
        Ok(Self { data, ..self.clone() })
    }
}

fn check_block(block: &Array2<f64>, entity_order: &[usize]) -> Result<()> {
    let (s, d) = block.dim();
    if s < 2 || d < 2 {
        return shape(format!("block must be at least 2x2, got {s}x{d}"));
    }
    if entity_order.len() != s {
        return shape(format!("entity order has {} ids for {s} rows", entity_order.len()));
    }
    if block.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("block contains non-finite values".into()));
    }
    Ok(())
}

pub fn encode_block(
    block: &Array2<f64>,
    community_id: usize,
    entity_order: Vec<usize>,
) -> Result<LatentGrid> {
    check_block(block, &entity_order)?;
    let stats = CodecStats::of(block);
    encode_with_stats(block, stats, community_id, entity_order)
}

/// Encode with externally supplied statistics (for exact re-encoding of a
/// decoded block).
pub fn encode_with_stats(
    block: &Array2<f64>,
    stats: CodecStats,
    community_id: usize,
    entity_order: Vec<usize>,
) -> Result<LatentGrid> {
    check_block(block, &entity_order)?;
    if !(stats.scale >= SCALE_FLOOR) {
        return config("codec scale below floor");
    }
    let data = block.mapv(|x| (x - stats.mean) / stats.scale);
    Ok(LatentGrid { data, stats, community_id, entity_order })
}

pub fn decode_block(grid: &LatentGrid) -> Array2<f64> {
    grid.data.mapv(|z| z * grid.stats.scale + grid.stats.mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VaeInit {
    Random,
    /// Encoder and decoder start as identity maps; needs
    /// `latent_dim == rows * cols`.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub kl_weight: f64,
    pub seed: u64,
    pub init: VaeInit,
    /// Initial posterior log-variance bias.
    pub init_logvar: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            epochs: 200,
            lr: 1e-2,
            kl_weight: 1e-3,
            seed: 0,
            init: VaeInit::Random,
            init_logvar: -4.0,
        }
    }
}

/// Linear Gaussian VAE over flattened blocks:
/// `q(z|x) = N(W_mu x + b_mu, diag(exp(W_lv x + b_lv)))`, `x^ = W_d z + b_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearVae {
    pub rows: usize,
    pub cols: usize,
    pub enc_mu: Array2<f64>,
    pub enc_mu_bias: Array1<f64>,
    pub enc_logvar: Array2<f64>,
    pub enc_logvar_bias: Array1<f64>,
    pub dec: Array2<f64>,
    pub dec_bias: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLoss {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct VaeOutcome {
    pub model: LinearVae,
    pub epoch_loss: Vec<VaeLoss>,
}

/// Analytic `KL(N(mu, diag exp(logvar)) || N(0, I))`.
pub fn gaussian_kl(mu: &Array1<f64>, logvar: &Array1<f64>) -> f64 {
    -0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

impl LinearVae {
    fn flat(block: &Array2<f64>) -> Array1<f64> {
        Array1::from_iter(block.iter().copied())
    }

    pub fn posterior(&self, block: &Array2<f64>) -> (Array1<f64>, Array1<f64>) {
        let x = Self::flat(block);
        (self.enc_mu.dot(&x) + &self.enc_mu_bias, self.enc_logvar.dot(&x) + &self.enc_logvar_bias)
    }

    /// Posterior-mean reconstruction.
    pub fn reconstruct(&self, block: &Array2<f64>) -> Array2<f64> {
        let (mu, _) = self.posterior(block);
        let x = self.dec.dot(&mu) + &self.dec_bias;
        x.into_shape_with_order((self.rows, self.cols)).expect("decoder output size")
    }

    pub fn reconstruction_mse(&self, blocks: &[Array2<f64>]) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for b in blocks {
            let r = self.reconstruct(b);
            sum += (&r - b).mapv(|v| v * v).sum();
            n += b.len();
        }
        sum / n as f64
    }
}

/// Train the toy VAE with the reparameterization trick and per-block SGD.
/// Loss per block is mean squared reconstruction error plus
/// `kl_weight * KL`.
pub fn train_toy_vae(blocks: &[Array2<f64>], cfg: &VaeConfig) -> Result<VaeOutcome> {
    if blocks.len() < 2 {
        return config("toy VAE needs at least two blocks");
    }
    if cfg.epochs == 0 {
        return config("epochs must be at least 1");
    }
    if cfg.latent_dim == 0 {
        return config("latent_dim must be positive");
    }
    let (rows, cols) = blocks[0].dim();
    if blocks.iter().any(|b| b.dim() != (rows, cols)) {
        return config("blocks have mismatched shapes");
    }
    let dim = rows * cols;
    let k = cfg.latent_dim;
    let mut rng = rng::seeded(cfg.seed);
    let (enc_mu, dec) = match cfg.init {
        VaeInit::Identity => {
            if k != dim {
                return config("identity init needs latent_dim == rows * cols");
            }
            (Array2::eye(dim), Array2::eye(dim))
        }
        VaeInit::Random => {
            let a = 1.0 / (dim as f64).sqrt();
            let b = 1.0 / (k as f64).sqrt();
            (
                Array2::from_shape_simple_fn((k, dim), || rng.random_range(-a..a)),
                Array2::from_shape_simple_fn((dim, k), || rng.random_range(-b..b)),
            )
        }
    };
    let mut model = LinearVae {
        rows,
        cols,
        enc_mu,
        enc_mu_bias: Array1::zeros(k),
        enc_logvar: Array2::zeros((k, dim)),
        enc_logvar_bias: Array1::from_elem(k, cfg.init_logvar),
        dec,
        dec_bias: Array1::zeros(dim),
    };

    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut acc = VaeLoss { reconstruction: 0.0, kl: 0.0, total: 0.0 };
        for block in blocks {
            let x = LinearVae::flat(block);
            let mu = model.enc_mu.dot(&x) + &model.enc_mu_bias;
            let lv = model.enc_logvar.dot(&x) + &model.enc_logvar_bias;
            let std = lv.mapv(|v| (0.5 * v).exp());
            let eps = Array1::from_shape_simple_fn(k, || {
                rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng)
            });
            let z = &mu + &(&std * &eps);
            let xh = model.dec.dot(&z) + &model.dec_bias;
            let diff = &xh - &x;
            let rec = diff.mapv(|v| v * v).sum() / dim as f64;
            let kl = gaussian_kl(&mu, &lv);
            acc.reconstruction += rec;
            acc.kl += kl;
            acc.total += rec + cfg.kl_weight * kl;

            // backward
            let g_xh = diff.mapv(|v| 2.0 * v / dim as f64);
            let g_z = model.dec.t().dot(&g_xh);
            let g_mu = &g_z + &mu.mapv(|m| cfg.kl_weight * m);
            let g_lv = &(&g_z * &eps * &std * 0.5) + &lv.mapv(|v| cfg.kl_weight * 0.5 * (v.exp() - 1.0));

            let g_dec = outer(&g_xh, &z);
            model.dec.scaled_add(-cfg.lr, &g_dec);
            model.dec_bias.scaled_add(-cfg.lr, &g_xh);
            model.enc_mu.scaled_add(-cfg.lr, &outer(&g_mu, &x));
            model.enc_mu_bias.scaled_add(-cfg.lr, &g_mu);
            model.enc_logvar.scaled_add(-cfg.lr, &outer(&g_lv, &x));
            model.enc_logvar_bias.scaled_add(-cfg.lr, &g_lv);
        }
        let nb = blocks.len() as f64;
        let epoch = VaeLoss {
            reconstruction: acc.reconstruction / nb,
            kl: acc.kl / nb,
            total: acc.total / nb,
        };
        if !epoch.total.is_finite() {
            return Err(Error::Diverged { iteration: epoch_loss.len() });
        }
        epoch_loss.push(epoch);
    }
    Ok(VaeOutcome { model, epoch_loss })
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_grid;

    #[test]
    fn zero_block_is_degenerate() {
        let g = encode_block(&Array2::zeros((3, 4)), 0, vec![0, 1, 2]).unwrap();
        assert!(g.stats.degenerate);
        assert_eq!(g.stats.scale, SCALE_FLOOR);
        assert!(g.data.iter().all(|&v| v == 0.0));
        let back = decode_block(&g);
        assert!(back.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn whitening_moments() {
        let mut r = rng::seeded(3);
        let raw = normal_grid(&mut r, 16, 8, 1.0);
        let st = CodecStats::of(&raw);
        let block = raw.mapv(|v| 5.0 + 2.0 * (v - st.mean) / st.scale);
        let g = encode_block(&block, 0, (0..16).collect()).unwrap();
        assert!((g.stats.mean - 5.0).abs() < 1e-12);
        assert!((g.stats.scale - 2.0).abs() < 1e-12);
        let n = g.data.len() as f64;
        let mean = g.data.sum() / n;
        let var = g.data.mapv(|v| (v - mean) * (v - mean)).sum() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var.sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decode_of_zero_grid_is_mean() {
        let mut r = rng::seeded(4);
        let block = normal_grid(&mut r, 4, 4, 3.0);
        let g = encode_block(&block, 0, (0..4).collect()).unwrap();
        let zero = g.with_data(Array2::zeros((4, 4))).unwrap();
        assert!(decode_block(&zero).iter().all(|&v| v == g.stats.mean));
    }

    #[test]
    fn shape_preconditions() {
        assert!(encode_block(&Array2::zeros((1, 4)), 0, vec![0]).is_err());
        assert!(encode_block(&Array2::zeros((3, 4)), 0, vec![0, 1]).is_err());
    }

    #[test]
    fn vae_rejects_bad_config() {
        let blocks = vec![Array2::zeros((2, 2)), Array2::zeros((2, 3))];
        assert!(train_toy_vae(&blocks, &VaeConfig::default()).is_err());
        let blocks = vec![Array2::zeros((2, 2)), Array2::zeros((2, 2))];
        let cfg = VaeConfig { epochs: 0, ..Default::default() };
        assert!(train_toy_vae(&blocks, &cfg).is_err());
    }
}
