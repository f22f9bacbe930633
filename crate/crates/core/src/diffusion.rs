//! DDIM forward diffusion, deterministic sampling and inversion over latent
//! grids.
//!
//! Timesteps index the cumulative schedule `alpha_bar[0..=T]`; `alpha_bar[0]`
//! is the clean end. A transition from `t` to an earlier `s` is
//!
//! ```text
//! x0  = (z_t - sqrt(1 - a_t) * eps) / sqrt(a_t)
//! z_s = sqrt(a_s) * x0 + sqrt(1 - a_s) * eta * eps
//! ```
//!
//! with `eps` from a [`NoisePredictor`]. The update has no random term, so
//! every `eta` is deterministic; `eta = 1` keeps the predicted-noise
//! direction and is what the watermark pipeline uses.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{config, shape, Error, Result};
use crate::rng;

/// `eta` used by the embedding and detection pipeline.
pub const PIPELINE_ETA: f64 = 1.0;
/// Smallest `alpha_bar` accepted when dividing by `sqrt(alpha_bar)`.
pub const ALPHA_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(rename = "T")]
    pub steps: usize,
    pub alpha_start: f64,
    pub alpha_end: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { kind: "linear".into(), steps: crate::DEFAULT_STEPS, alpha_start: 0.9999, alpha_end: 0.01 }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        match self.kind.as_str() {
            "linear" => NoiseSchedule::linear(self.steps, self.alpha_start, self.alpha_end),
            other => config(format!("unknown schedule type {other:?}")),
        }
    }

    /// Compact identifier stored in key files.
    pub fn id(&self) -> String {
        format!("{}:{}:{}:{}", self.kind, self.steps, self.alpha_start, self.alpha_end)
    }

    pub fn parse_id(id: &str) -> Result<Self> {
        let parts: Vec<&str> = id.split(':').collect();
        if parts.len() != 4 {
            return config(format!("bad schedule id {id:?}"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Config(format!("bad schedule id {id:?}")));
        Ok(Self {
            kind: parts[0].to_string(),
            steps: parts[1].parse().map_err(|_| Error::Config(format!("bad schedule id {id:?}")))?,
            alpha_start: num(parts[2])?,
            alpha_end: num(parts[3])?,
        })
    }
}

/// Cumulative products `alpha_bar[t]` for `t = 0..=T`, strictly decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.len() < 2 {
            return config("schedule needs at least one step");
        }
        if alphas.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
            return config("alpha_bar values must lie in (0, 1]");
        }
        if alphas.windows(2).any(|w| w[1] >= w[0]) {
            return config("alpha_bar must be strictly decreasing");
        }
        Ok(Self { alphas })
    }

    /// Linear in `t` from `start` at `t = 0` to `end` at `t = T`.
    pub fn linear(steps: usize, start: f64, end: f64) -> Result<Self> {
        if steps == 0 {
            return config("schedule needs at least one step");
        }
        let alphas = (0..=steps)
            .map(|t| start + (end - start) * t as f64 / steps as f64)
            .collect();
        Self::new(alphas)
    }

    pub fn steps(&self) -> usize {
        self.alphas.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return config(format!("timestep {t} outside 0..={}", self.steps()));
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        ScheduleSpec::default().build().expect("default schedule is valid")
    }
}

/// `k` timesteps spread evenly over `1..=T`, ascending, ending at `T`.
pub fn evenly_spaced_steps(total: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > total {
        return config(format!("step count {k} must be in 1..={total}"));
    }
    let steps: Vec<usize> = (1..=k).map(|i| ((i * total) as f64 / k as f64).round() as usize).collect();
    debug_assert!(steps.windows(2).all(|w| w[0] < w[1]));
    Ok(steps)
}

/// Noise estimate `eps(z_t, t)`.
pub trait NoisePredictor: Send + Sync {
    fn predict(&self, z: &Array2<f64>, t: usize) -> Array2<f64>;

    /// `Some(c)` when `predict(z, t) == c * z` for every `z`.
    fn linear_coefficient(&self, _t: usize) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict(&self, z: &Array2<f64>, _t: usize) -> Array2<f64> {
        Array2::zeros(z.raw_dim())
    }

    fn linear_coefficient(&self, _t: usize) -> Option<f64> {
        Some(0.0)
    }
}

/// `eps = c_t * z_t` with one scalar per timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub coefficients: Vec<f64>,
}

/// Seed for fitting the pipeline predictor; fixed so that embedding and
/// detection agree without storing coefficients.
pub const PREDICTOR_FIT_SEED: u64 = 0x6b67_6d61_726b;

impl LinearPredictor {
    /// Least-squares fit of `c_t` on forward-diffused grids:
    /// `c_t = sum <z_t, eps> / sum <z_t, z_t>`.
    pub fn fit(schedule: &NoiseSchedule, grids: &[Array2<f64>], seed: u64) -> Result<Self> {
        if grids.is_empty() {
            return config("predictor fit needs at least one grid");
        }
        let mut rng = rng::seeded(seed);
        let mut coefficients = vec![0.0; schedule.steps() + 1];
        for t in 1..=schedule.steps() {
            let (mut num, mut den) = (0.0, 0.0);
            for g in grids {
                let eps = rng::normal_grid(&mut rng, g.nrows(), g.ncols(), 1.0);
                let zt = forward_diffuse(g, t, &eps, schedule)?;
                num += (&zt * &eps).sum();
                den += zt.mapv(|v| v * v).sum();
            }
            coefficients[t] = if den > 0.0 { num / den } else { 0.0 };
        }
        Ok(Self { coefficients })
    }

    /// The predictor used by the pipeline: fitted on white unit-variance
    /// grids, the distribution whitened latents follow.
    pub fn standard(schedule: &NoiseSchedule) -> Result<Self> {
        let mut rng = rng::seeded(PREDICTOR_FIT_SEED);
        let grids: Vec<Array2<f64>> = (0..8).map(|_| rng::normal_grid(&mut rng, 32, 32, 1.0)).collect();
        Self::fit(schedule, &grids, rng::derive(PREDICTOR_FIT_SEED, 1))
    }
}

impl NoisePredictor for LinearPredictor {
    fn predict(&self, z: &Array2<f64>, t: usize) -> Array2<f64> {
        let c = self.coefficients.get(t).copied().unwrap_or(0.0);
        z.mapv(|v| c * v)
    }

    fn linear_coefficient(&self, t: usize) -> Option<f64> {
        Some(self.coefficients.get(t).copied().unwrap_or(0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Zero,
    #[default]
    Linear,
}

impl PredictorKind {
    pub fn build(self, schedule: &NoiseSchedule) -> Result<Box<dyn NoisePredictor>> {
        Ok(match self {
            PredictorKind::Zero => Box::new(ZeroPredictor),
            PredictorKind::Linear => Box::new(LinearPredictor::standard(schedule)?),
        })
    }
}

fn same_shape(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim()));
    }
    Ok(())
}

/// `z_t = sqrt(a_t) z0 + sqrt(1 - a_t) eps`.
pub fn forward_diffuse(
    z0: &Array2<f64>,
    t: usize,
    eps: &Array2<f64>,
    schedule: &NoiseSchedule,
) -> Result<Array2<f64>> {
    same_shape(z0, eps, "forward_diffuse")?;
    if t == 0 || t > schedule.steps() {
        return config(format!("timestep {t} outside 1..={}", schedule.steps()));
    }
    let a = schedule.alpha_bar(t);
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    Ok(Zip::from(z0).and(eps).map_collect(|&z, &e| sa * z + sn * e))
}

fn predict_checked(
    predictor: &dyn NoisePredictor,
    z: &Array2<f64>,
    t: usize,
) -> Result<Array2<f64>> {
    let eps = predictor.predict(z, t);
    if eps.dim() != z.dim() {
        return Err(Error::Contract(format!(
            "predictor returned {:?} for input {:?}",
            eps.dim(),
            z.dim()
        )));
    }
    Ok(eps)
}

fn clean_from(z: &Array2<f64>, eps: &Array2<f64>, a: f64, eps_weight: f64) -> Result<Array2<f64>> {
    if a < ALPHA_GUARD {
        return Err(Error::Numeric(format!("alpha_bar {a} below guard")));
    }
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt() * eps_weight);
    Ok(Zip::from(z).and(eps).map_collect(|&zv, &e| (zv - sn * e) / sa))
}

/// `x0 = (z_t - sqrt(1 - a_t) eps) / sqrt(a_t)`.
pub fn predict_clean(
    z_t: &Array2<f64>,
    t: usize,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
) -> Result<Array2<f64>> {
    schedule.check_t(t)?;
    let eps = predict_checked(predictor, z_t, t)?;
    clean_from(z_t, &eps, schedule.alpha_bar(t), 1.0)
}

/// Move from `t` to an earlier `t_prev`.
pub fn ddim_transition(
    z_t: &Array2<f64>,
    t: usize,
    t_prev: usize,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    eta: f64,
) -> Result<Array2<f64>> {
    schedule.check_t(t)?;
    if t_prev >= t {
        return config(format!("transition must go backwards, got {t} -> {t_prev}"));
    }
    if !(0.0..=1.0).contains(&eta) {
        return config(format!("eta {eta} outside [0, 1]"));
    }
    let eps = predict_checked(predictor, z_t, t)?;
    let x0 = clean_from(z_t, &eps, schedule.alpha_bar(t), 1.0)?;
    let a = schedule.alpha_bar(t_prev);
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt() * eta);
    Ok(Zip::from(&x0).and(&eps).map_collect(|&x, &e| sa * x + sn * e))
}

/// One step `t -> t - 1`.
pub fn ddim_step(
    z_t: &Array2<f64>,
    t: usize,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    eta: f64,
) -> Result<Array2<f64>> {
    if t == 0 {
        return config("cannot step below t = 0");
    }
    ddim_transition(z_t, t, t - 1, predictor, schedule, eta)
}

/// Sample along a strictly descending list of timesteps, finishing at 0.
pub fn ddim_sample(
    z: &Array2<f64>,
    steps_desc: &[usize],
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    eta: f64,
) -> Result<Array2<f64>> {
    ddim_sample_partial(z, steps_desc, steps_desc.len(), predictor, schedule, eta)
}

/// Apply only the first `k` transitions of a descending sampling schedule.
pub fn ddim_sample_partial(
    z: &Array2<f64>,
    steps_desc: &[usize],
    k: usize,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    eta: f64,
) -> Result<Array2<f64>> {
    if steps_desc.is_empty() {
        return config("empty step list");
    }
    if steps_desc.windows(2).any(|w| w[1] >= w[0]) || steps_desc.last() == Some(&0) {
        return config("sampling steps must be strictly descending and positive");
    }
    if k > steps_desc.len() {
        return config("more transitions requested than steps");
    }
    let mut cur = z.clone();
    for i in 0..k {
        let t = steps_desc[i];
        let t_prev = steps_desc.get(i + 1).copied().unwrap_or(0);
        cur = ddim_transition(&cur, t, t_prev, predictor, schedule, eta)?;
    }
    Ok(cur)
}

/// Invert sampling along a strictly ascending list of timesteps starting
/// from the clean latent. Returns every visited state, `[z_0, z_t1, ..]`.
pub fn ddim_invert_trajectory(
    z0: &Array2<f64>,
    steps_asc: &[usize],
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    eta: f64,
) -> Result<Vec<Array2<f64>>> {
    if steps_asc.is_empty() {
        return config("empty step list");
    }
    if steps_asc[0] == 0 || steps_asc.windows(2).any(|w| w[1] <= w[0]) {
        return config("inversion steps must be strictly ascending and positive");
    }
    if !(0.0..=1.0).contains(&eta) {
        return config(format!("eta {eta} outside [0, 1]"));
    }
    schedule.check_t(*steps_asc.last().unwrap())?;
    let mut states = Vec::with_capacity(steps_asc.len() + 1);
    states.push(z0.clone());
    let mut prev_t = 0;
    for &t in steps_asc {
        let cur = states.last().unwrap();
        let eps = predict_checked(predictor, cur, t)?;
        // exact algebraic inverse of `ddim_transition(t -> prev_t)` given eps
        let x0 = clean_from(cur, &eps, schedule.alpha_bar(prev_t), eta)?;
        let a = schedule.alpha_bar(t);
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        states.push(Zip::from(&x0).and(&eps).map_collect(|&x, &e| sa * x + sn * e));
        prev_t = t;
    }
    Ok(states)
}

pub fn ddim_invert(
    z0: &Array2<f64>,
    steps_asc: &[usize],
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    eta: f64,
) -> Result<Array2<f64>> {
    Ok(ddim_invert_trajectory(z0, steps_asc, predictor, schedule, eta)?.pop().unwrap())
}

/// Schedule plus predictor, shared by embedding and detection.
#[derive(Clone)]
pub struct Sampler {
    pub schedule: NoiseSchedule,
    pub predictor: Arc<dyn NoisePredictor>,
    pub eta: f64,
}

fn predictor_cache() -> &'static Mutex<HashMap<String, Arc<LinearPredictor>>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<LinearPredictor>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

impl Sampler {
    pub fn new(spec: &ScheduleSpec, kind: PredictorKind) -> Result<Self> {
        let schedule = spec.build()?;
        let predictor: Arc<dyn NoisePredictor> = match kind {
            PredictorKind::Zero => Arc::new(ZeroPredictor),
            PredictorKind::Linear => {
                let id = spec.id();
                let cached = predictor_cache().lock().expect("predictor cache poisoned").get(&id).cloned();
                match cached {
                    Some(p) => p,
                    None => {
                        let p = Arc::new(LinearPredictor::standard(&schedule)?);
                        predictor_cache().lock().expect("predictor cache poisoned").insert(id, p.clone());
                        p
                    }
                }
            }
        };
        Ok(Self { schedule, predictor, eta: PIPELINE_ETA })
    }

    pub fn with_predictor(schedule: NoiseSchedule, predictor: Arc<dyn NoisePredictor>) -> Self {
        Self { schedule, predictor, eta: PIPELINE_ETA }
    }

    pub fn steps(&self, k: usize) -> Result<Vec<usize>> {
        evenly_spaced_steps(self.schedule.steps(), k)
    }

    pub fn invert(&self, z0: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
        ddim_invert(z0, &self.steps(k)?, self.predictor.as_ref(), &self.schedule, self.eta)
    }

    pub fn invert_trajectory(&self, z0: &Array2<f64>, k: usize) -> Result<Vec<Array2<f64>>> {
        ddim_invert_trajectory(z0, &self.steps(k)?, self.predictor.as_ref(), &self.schedule, self.eta)
    }

    pub fn sample(&self, z: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
        ddim_sample(z, &descending(&self.steps(k)?), self.predictor.as_ref(), &self.schedule, self.eta)
    }

    /// First `j` of the `k` sampling transitions.
    pub fn sample_partial(&self, z: &Array2<f64>, k: usize, j: usize) -> Result<Array2<f64>> {
        ddim_sample_partial(z, &descending(&self.steps(k)?), j, self.predictor.as_ref(), &self.schedule, self.eta)
    }
}

/// Descending copy of an ascending step list.
pub fn descending(steps_asc: &[usize]) -> Vec<usize> {
    steps_asc.iter().rev().copied().collect()
}
