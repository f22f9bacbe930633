//! Learnable mask: a sigmoid relaxation over Hermitian units optimized
//! against latent drift along the inversion trajectory, then binarized to a
//! target density.

use ndarray::{Array2, Zip};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffusion::Sampler;
use crate::error::{config, shape, Error, Result};
use crate::par::{self, Execution};
use crate::rng;
use crate::spectral::{fft2, hermitian_units, soft_embed, target_cells, MaskMatrix, Spectrum, Unit};

/// Logits tied over Hermitian units.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskLogits {
    m: usize,
    n: usize,
    units: Vec<Unit>,
    values: Vec<f64>,
    frozen: Vec<bool>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl MaskLogits {
    pub fn constant(m: usize, n: usize, value: f64, exclude_dc: bool) -> Self {
        let units = hermitian_units(m, n);
        let frozen: Vec<bool> = units.iter().map(|u| exclude_dc && u.is_dc()).collect();
        let values = frozen.iter().map(|&f| if f { f64::NEG_INFINITY } else { value }).collect();
        Self { m, n, units, values, frozen }
    }

    /// Logits read from a full grid; each unit takes the value at its
    /// representative cell.
    pub fn from_grid(grid: &Array2<f64>) -> Result<Self> {
        let (m, n) = grid.dim();
        let mut out = Self::constant(m, n, 0.0, false);
        for (k, u) in out.units.iter().enumerate() {
            let v = grid[[u.row, u.col]];
            let p = grid[u.partner(m, n)];
            if !v.is_finite() || v != p {
                return Err(Error::Contract(format!("logits untied or non-finite at ({}, {})", u.row, u.col)));
            }
            out.values[k] = v;
        }
        Ok(out)
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_frozen(&self, k: usize) -> bool {
        self.frozen[k]
    }

    pub fn to_grid(&self) -> Array2<f64> {
        let mut g = Array2::zeros((self.m, self.n));
        for (u, &v) in self.units.iter().zip(&self.values) {
            g[[u.row, u.col]] = v;
            g[u.partner(self.m, self.n)] = v;
        }
        g
    }

    /// Soft mask `sigmoid(logits)` over the full grid.
    pub fn soft(&self) -> Array2<f64> {
        let mut g = Array2::zeros((self.m, self.n));
        for (u, &v) in self.units.iter().zip(&self.values) {
            let w = sigmoid(v);
            g[[u.row, u.col]] = w;
            g[u.partner(self.m, self.n)] = w;
        }
        g
    }

    pub fn soft_density(&self) -> f64 {
        self.soft().sum() / (self.m * self.n) as f64
    }

    fn step(&self, direction: &[f64], lr: f64) -> Self {
        let mut out = self.clone();
        for (k, v) in out.values.iter_mut().enumerate() {
            if !self.frozen[k] {
                *v -= lr * direction[k];
            }
        }
        out
    }

    /// Binarize: units in descending sigmoid value, ties by (row, col), are
    /// added while fewer than `ceil(rho m n)` cells are set. Frozen units
    /// are never selected.
    pub fn threshold(&self, rho: f64) -> Result<MaskMatrix> {
        if !(rho > 0.0 && rho < 1.0) {
            return config(format!("target density {rho} outside (0, 1)"));
        }
        let target = target_cells(self.m, self.n, rho);
        let mut order: Vec<usize> = (0..self.units.len()).filter(|&k| !self.frozen[k]).collect();
        order.sort_by(|&a, &b| {
            self.values[b]
                .total_cmp(&self.values[a])
                .then((self.units[a].row, self.units[a].col).cmp(&(self.units[b].row, self.units[b].col)))
        });
        let mut chosen = Vec::new();
        let mut cells = 0;
        for k in order {
            if cells >= target {
                break;
            }
            cells += self.units[k].cells(self.m, self.n);
            chosen.push(self.units[k]);
        }
        Ok(MaskMatrix::from_units(self.m, self.n, &chosen))
    }
}

pub fn threshold_mask(logits: &MaskLogits, rho: f64) -> Result<MaskMatrix> {
    logits.threshold(rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Embed at the terminal state, then sample.
    Presample,
    /// Sample, then embed, with a spatial correction term.
    Postsample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LawmmConfig {
    pub target_density: f64,
    pub density_penalty: f64,
    pub alpha_correction: f64,
    /// Checkpoints `k_j`, each strictly inside `(0, K)`; empty means five
    /// evenly spaced ones.
    pub steps: Vec<usize>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub gradient: GradientMode,
    pub fd_epsilon: f64,
    pub seed: u64,
    pub objective: Objective,
    pub exclude_dc: bool,
    /// Standard deviation of the random logit perturbation at start.
    pub init_jitter: f64,
    pub execution: Execution,
}

impl Default for LawmmConfig {
    fn default() -> Self {
        Self {
            target_density: crate::DEFAULT_DENSITY,
            density_penalty: 1e5,
            alpha_correction: 0.05,
            steps: Vec::new(),
            iterations: 60,
            learning_rate: 50.0,
            gradient: GradientMode::Analytic,
            fd_epsilon: 1e-6,
            seed: 0,
            objective: Objective::Postsample,
            exclude_dc: true,
            init_jitter: 0.01,
            execution: Execution::Parallel,
        }
    }
}

impl LawmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_density > 0.0 && self.target_density < 1.0) {
            return config(format!("target density {} outside (0, 1)", self.target_density));
        }
        if self.iterations == 0 {
            return config("iterations must be at least 1");
        }
        if !(self.learning_rate >= 0.0) || !(self.density_penalty >= 0.0) || !(self.fd_epsilon > 0.0) {
            return config("learning rate, penalty and fd epsilon must be non-negative");
        }
        Ok(())
    }

    pub fn checkpoints(&self, k_total: usize) -> Result<Vec<usize>> {
        let ks = if self.steps.is_empty() { default_checkpoints(k_total) } else { self.steps.clone() };
        check_checkpoints(&ks, k_total)?;
        Ok(ks)
    }
}

/// Five checkpoints evenly spread strictly inside `(0, K)`.
pub fn default_checkpoints(k_total: usize) -> Vec<usize> {
    let mut ks: Vec<usize> = (1..=5)
        .map(|j| ((j * k_total) as f64 / 6.0).round() as usize)
        .filter(|&k| k > 0 && k < k_total)
        .collect();
    ks.dedup();
    ks
}

fn check_checkpoints(ks: &[usize], k_total: usize) -> Result<()> {
    if ks.is_empty() {
        return config("no checkpoints");
    }
    if let Some(&bad) = ks.iter().find(|&&k| k == 0 || k >= k_total) {
        return Err(Error::Index(format!("checkpoint {bad} has no trajectory state (K = {k_total})")));
    }
    Ok(())
}

/// An inverted latent with its recorded trajectory `[Z_0, .., Z_T]`.
#[derive(Debug, Clone)]
pub struct LawmmSample {
    pub trajectory: Vec<Array2<f64>>,
}

impl LawmmSample {
    pub fn from_clean(z0: &Array2<f64>, sampler: &Sampler, k_total: usize) -> Result<Self> {
        Ok(Self { trajectory: sampler.invert_trajectory(z0, k_total)? })
    }

    pub fn terminal(&self) -> &Array2<f64> {
        self.trajectory.last().unwrap()
    }

    /// Number of inversion steps recorded.
    pub fn k_total(&self) -> usize {
        self.trajectory.len() - 1
    }

    /// State reached after `k` sampling transitions from the terminal one.
    pub fn state_at(&self, k: usize) -> Result<&Array2<f64>> {
        let k_total = self.k_total();
        if k > k_total {
            return Err(Error::Index(format!("checkpoint {k} beyond {k_total}")));
        }
        Ok(&self.trajectory[k_total - k])
    }
}

fn sq_dist(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + (x - y) * (x - y))
}

fn check_soft(sample: &LawmmSample, sig: &Array2<f64>, soft: &Array2<f64>) -> Result<()> {
    let d = sample.terminal().dim();
    if sig.dim() != d || soft.dim() != d {
        return shape(format!("sample {d:?}, signature {:?}, mask {:?}", sig.dim(), soft.dim()));
    }
    Ok(())
}

/// `sum_j || Z_{T-k_j} - f^{k_j}(f_w(Z_T, S, w)) ||^2`.
pub fn lawmm_loss_presample(
    sample: &LawmmSample,
    sig: &Array2<f64>,
    soft: &Array2<f64>,
    sampler: &Sampler,
    ks: &[usize],
) -> Result<f64> {
    check_soft(sample, sig, soft)?;
    check_checkpoints(ks, sample.k_total())?;
    let k_total = sample.k_total();
    let x = soft_embed(sample.terminal(), &fft2(sig)?, soft)?;
    let mut loss = 0.0;
    for &k in ks {
        let f = sampler.sample_partial(&x, k_total, k)?;
        loss += sq_dist(sample.state_at(k)?, &f);
    }
    Ok(loss)
}

/// `sum_j || Z_{T-k_j} - (f_w(f^{k_j}(Z_T), S, w) + alpha S w) ||^2`.
pub fn lawmm_loss_postsample(
    sample: &LawmmSample,
    sig: &Array2<f64>,
    soft: &Array2<f64>,
    sampler: &Sampler,
    ks: &[usize],
    alpha: f64,
) -> Result<f64> {
    check_soft(sample, sig, soft)?;
    check_checkpoints(ks, sample.k_total())?;
    let k_total = sample.k_total();
    let sig_spec = fft2(sig)?;
    let correction = Zip::from(sig).and(soft).map_collect(|&s, &w| alpha * s * w);
    let mut loss = 0.0;
    for &k in ks {
        let f = sampler.sample_partial(sample.terminal(), k_total, k)?;
        let y = soft_embed(&f, &sig_spec, soft)? + &correction;
        loss += sq_dist(sample.state_at(k)?, &y);
    }
    Ok(loss)
}

fn loss_of(
    cfg: &LawmmConfig,
    sample: &LawmmSample,
    sig: &Array2<f64>,
    soft: &Array2<f64>,
    sampler: &Sampler,
    ks: &[usize],
) -> Result<f64> {
    match cfg.objective {
        Objective::Presample => lawmm_loss_presample(sample, sig, soft, sampler, ks),
        Objective::Postsample => lawmm_loss_postsample(sample, sig, soft, sampler, ks, cfg.alpha_correction),
    }
}

/// Scalars `r_k` with `f^k(z) = r_k z`, when the predictor is linear.
fn linear_gains(sampler: &Sampler, k_total: usize, ks: &[usize]) -> Result<Option<Vec<f64>>> {
    let steps = sampler.steps(k_total)?;
    if steps.iter().any(|&t| sampler.predictor.linear_coefficient(t).is_none()) {
        return Ok(None);
    }
    let one = Array2::from_elem((1, 1), 1.0);
    ks.iter()
        .map(|&k| Ok(sampler.sample_partial(&one, k_total, k)?[[0, 0]]))
        .collect::<Result<Vec<f64>>>()
        .map(Some)
}

/// Gradient of one sample's loss with respect to each cell weight, summed
/// over Hermitian partners and reported per unit.
fn analytic_weight_grad(
    cfg: &LawmmConfig,
    sample: &LawmmSample,
    sig: &Array2<f64>,
    sig_spec: &Spectrum,
    soft: &Array2<f64>,
    gains: &[f64],
    ks: &[usize],
    units: &[Unit],
) -> Result<Vec<f64>> {
    let z = sample.terminal();
    let (m, n) = z.dim();
    let mn = (m * n) as f64;
    let z_spec = fft2(z)?;
    let mut cell_grad = Array2::<f64>::zeros((m, n));
    match cfg.objective {
        Objective::Presample => {
            let d = &sig_spec.data - &z_spec.data;
            let x = soft_embed(z, sig_spec, soft)?;
            let mut acc = Array2::<num_complex::Complex64>::zeros((m, n));
            for (&k, &r) in ks.iter().zip(gains) {
                let e = sample.state_at(k)? - &x.mapv(|v| r * v);
                acc = acc + fft2(&e)?.data.mapv(|c| c * r);
            }
            Zip::from(&mut cell_grad).and(&d).and(&acc).for_each(|g, d, a| {
                *g = -2.0 / mn * (a * d.conj()).re;
            });
        }
        Objective::Postsample => {
            let alpha = cfg.alpha_correction;
            let correction = Zip::from(sig).and(soft).map_collect(|&s, &w| alpha * s * w);
            for (&k, &r) in ks.iter().zip(gains) {
                let f = z.mapv(|v| r * v);
                let y = soft_embed(&f, sig_spec, soft)? + &correction;
                let e = sample.state_at(k)? - &y;
                let e_spec = fft2(&e)?;
                Zip::from(&mut cell_grad)
                    .and(&sig_spec.data)
                    .and(&z_spec.data)
                    .and(&e_spec.data)
                    .for_each(|g, s, zc, ec| {
                        let d = s - zc * r;
                        *g -= 2.0 / mn * (ec * d.conj()).re;
                    });
                Zip::from(&mut cell_grad).and(sig).and(&e).for_each(|g, s, ev| {
                    *g -= 2.0 * alpha * s * ev;
                });
            }
        }
    }
    Ok(units
        .iter()
        .map(|u| {
            let mut g = cell_grad[[u.row, u.col]];
            if !u.self_conjugate {
                g += cell_grad[u.partner(m, n)];
            }
            g
        })
        .collect())
}

/// Value and logit gradient of the full objective.
pub struct Evaluation {
    pub objective: f64,
    pub mean_loss: f64,
    pub density: f64,
    pub gradient: Vec<f64>,
}

pub struct LawmmProblem<'a> {
    pub samples: &'a [LawmmSample],
    pub signature: &'a Array2<f64>,
    pub sampler: &'a Sampler,
    pub cfg: &'a LawmmConfig,
}

impl LawmmProblem<'_> {
    fn ks(&self) -> Result<Vec<usize>> {
        self.cfg.checkpoints(self.samples[0].k_total())
    }

    pub fn objective(&self, logits: &MaskLogits) -> Result<(f64, f64, f64)> {
        let ks = self.ks()?;
        let soft = logits.soft();
        let losses = par::try_map_indexed(self.samples.len(), self.cfg.execution, |i| {
            loss_of(self.cfg, &self.samples[i], self.signature, &soft, self.sampler, &ks)
        })?;
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        let density = soft.sum() / soft.len() as f64;
        let dev = density - self.cfg.target_density;
        Ok((mean + self.cfg.density_penalty * dev * dev, mean, density))
    }

    pub fn evaluate(&self, logits: &MaskLogits) -> Result<Evaluation> {
        let (objective, mean_loss, density) = self.objective(logits)?;
        let gradient = match (self.cfg.gradient, self.analytic_gains()?) {
            (GradientMode::Analytic, Some(gains)) => self.analytic_gradient(logits, &gains, density)?,
            _ => self.fd_gradient(logits)?,
        };
        Ok(Evaluation { objective, mean_loss, density, gradient })
    }

    fn analytic_gains(&self) -> Result<Option<Vec<f64>>> {
        linear_gains(self.sampler, self.samples[0].k_total(), &self.ks()?)
    }

    fn analytic_gradient(&self, logits: &MaskLogits, gains: &[f64], density: f64) -> Result<Vec<f64>> {
        let ks = self.ks()?;
        let soft = logits.soft();
        let sig_spec = fft2(self.signature)?;
        let per_sample = par::try_map_indexed(self.samples.len(), self.cfg.execution, |i| {
            analytic_weight_grad(self.cfg, &self.samples[i], self.signature, &sig_spec, &soft, gains, &ks, logits.units())
        })?;
        let (m, n) = logits.dim();
        let count = self.samples.len() as f64;
        let dpen = 2.0 * self.cfg.density_penalty * (density - self.cfg.target_density) / (m * n) as f64;
        Ok(logits
            .units()
            .iter()
            .enumerate()
            .map(|(k, u)| {
                if logits.is_frozen(k) {
                    return 0.0;
                }
                let w = sigmoid(logits.values()[k]);
                let dw = per_sample.iter().map(|g| g[k]).sum::<f64>() / count + dpen * u.cells(m, n) as f64;
                dw * w * (1.0 - w)
            })
            .collect())
    }

    /// Central differences on each free logit.
    pub fn fd_gradient(&self, logits: &MaskLogits) -> Result<Vec<f64>> {
        let eps = self.cfg.fd_epsilon;
        let mut out = vec![0.0; logits.units().len()];
        for (k, g) in out.iter_mut().enumerate() {
            if logits.is_frozen(k) {
                continue;
            }
            let mut plus = logits.clone();
            plus.values[k] += eps;
            let mut minus = logits.clone();
            minus.values[k] -= eps;
            *g = (self.objective(&plus)?.0 - self.objective(&minus)?.0) / (2.0 * eps);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub density: f64,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone)]
pub struct LawmmOutcome {
    pub mask: MaskMatrix,
    pub logits: MaskLogits,
    pub trace: Vec<TraceRow>,
}

impl LawmmOutcome {
    pub fn initial_objective(&self) -> f64 {
        self.trace[0].loss
    }

    pub fn final_objective(&self) -> f64 {
        self.trace.last().unwrap().loss
    }
}

/// Starting logits: `logit(rho)` plus seeded jitter.
pub fn initial_logits(m: usize, n: usize, cfg: &LawmmConfig) -> MaskLogits {
    let rho = cfg.target_density;
    let base = (rho / (1.0 - rho)).ln();
    let mut logits = MaskLogits::constant(m, n, base, cfg.exclude_dc);
    let mut rng = rng::seeded(cfg.seed);
    let jitter = Normal::new(0.0, cfg.init_jitter.max(0.0)).expect("finite jitter");
    for (k, v) in logits.values.iter_mut().enumerate() {
        if !logits.frozen[k] {
            *v += jitter.sample(&mut rng);
        }
    }
    logits
}

const MAX_HALVINGS: usize = 40;

/// Gradient descent with backtracking: a step is accepted only if the
/// objective does not increase, so the recorded sequence is monotone.
pub fn optimize_mask(
    samples: &[LawmmSample],
    signature: &Array2<f64>,
    sampler: &Sampler,
    cfg: &LawmmConfig,
) -> Result<LawmmOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return config("optimize_mask needs at least one sample");
    }
    let dim = samples[0].terminal().dim();
    if samples.iter().any(|s| s.terminal().dim() != dim || s.k_total() != samples[0].k_total()) {
        return shape("samples differ in shape or trajectory length");
    }
    if signature.dim() != dim {
        return shape("signature shape does not match samples");
    }
    let problem = LawmmProblem { samples, signature, sampler, cfg };
    let mut logits = initial_logits(dim.0, dim.1, cfg);
    let mut eval = problem.evaluate(&logits)?;
    if !eval.objective.is_finite() {
        return Err(Error::Diverged { iteration: 0 });
    }
    let norm = |g: &[f64]| g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut trace =
        vec![TraceRow { iteration: 0, loss: eval.objective, density: eval.density, gradient_norm: norm(&eval.gradient) }];
    let mut lr = cfg.learning_rate;
    for it in 1..=cfg.iterations {
        if lr > 0.0 {
            let mut accepted = None;
            let mut step = lr;
            for _ in 0..MAX_HALVINGS {
                let cand = logits.step(&eval.gradient, step);
                let (obj, _, _) = problem.objective(&cand)?;
                if !obj.is_finite() {
                    return Err(Error::Diverged { iteration: it });
                }
                if obj <= eval.objective {
                    accepted = Some((cand, step));
                    break;
                }
                step /= 2.0;
            }
            if let Some((cand, step)) = accepted {
                logits = cand;
                eval = problem.evaluate(&logits)?;
                // let the step size recover after a successful shrink
                lr = (step * 2.0).min(cfg.learning_rate);
            }
        }
        trace.push(TraceRow {
            iteration: it,
            loss: eval.objective,
            density: eval.density,
            gradient_norm: norm(&eval.gradient),
        });
    }
    let mask = logits.threshold(cfg.target_density)?;
    Ok(LawmmOutcome { mask, logits, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_rules() {
        let uniform = MaskLogits::constant(8, 8, 0.0, false);
        let all = uniform.threshold(0.999).unwrap();
        assert_eq!(all.count(), 64);
        let a = uniform.threshold(0.1).unwrap();
        let b = uniform.threshold(0.1).unwrap();
        assert_eq!(a, b);
        // lexicographic tie rule: DC, then (0, 1)/(0, 7), ...
        assert!(a.get(0, 0) && a.get(0, 1) && a.get(0, 7));
        assert!(uniform.threshold(0.0).is_err());
        assert!(uniform.threshold(1.0).is_err());

        let big = MaskLogits::constant(64, 64, 0.0, true);
        let mask = big.threshold(0.015).unwrap();
        assert!((62..=63).contains(&mask.count()));
        assert!(!mask.get(0, 0));
    }

    #[test]
    fn from_grid_requires_ties() {
        let mut g = Array2::zeros((4, 4));
        g[[1, 1]] = 1.0;
        assert!(MaskLogits::from_grid(&g).is_err());
        g[[3, 3]] = 1.0;
        let l = MaskLogits::from_grid(&g).unwrap();
        assert_eq!(l.to_grid(), g);
    }

    #[test]
    fn checkpoints_default() {
        assert_eq!(default_checkpoints(75), vec![13, 25, 38, 50, 63]);
        assert!(check_checkpoints(&[0], 10).is_err());
        assert!(check_checkpoints(&[10], 10).is_err());
    }
}
