use std::sync::Arc;

use kgmark::diffusion::{
    ddim_invert, ddim_sample, ddim_step, descending, evenly_spaced_steps, forward_diffuse, predict_clean,
    LinearPredictor, NoisePredictor, NoiseSchedule, PredictorKind, Sampler, ScheduleSpec, ZeroPredictor,
};
use kgmark::eval::cosine_similarity;
use kgmark::{rng, Error};
use ndarray::Array2;
use proptest::prelude::*;

struct FixedNoise(Array2<f64>);

impl NoisePredictor for FixedNoise {
    fn predict(&self, _z: &Array2<f64>, _t: usize) -> Array2<f64> {
        self.0.clone()
    }
}

struct WrongShape;

impl NoisePredictor for WrongShape {
    fn predict(&self, _z: &Array2<f64>, _t: usize) -> Array2<f64> {
        Array2::zeros((1, 1))
    }
}

fn schedule() -> NoiseSchedule {
    ScheduleSpec::default().build().unwrap()
}

fn grid(seed: u64, m: usize, n: usize) -> Array2<f64> {
    rng::normal_grid(&mut rng::seeded(seed), m, n, 1.0)
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[test]
fn forward_matches_scalar_recomputation() {
    let s = schedule();
    let (z, e) = (grid(1, 7, 9), grid(2, 7, 9));
    for t in [1, 10, 40, 75] {
        let zt = forward_diffuse(&z, t, &e, &s).unwrap();
        let a = s.alpha_bar(t);
        for ((idx, &v), &e_) in zt.indexed_iter().zip(e.iter()) {
            assert_eq!(v, a.sqrt() * z[idx] + (1.0 - a).sqrt() * e_);
        }
    }
    assert!(forward_diffuse(&z, 0, &e, &s).is_err());
    assert!(forward_diffuse(&z, 76, &e, &s).is_err());
}

#[test]
fn forward_limits() {
    let unit = NoiseSchedule::new(vec![1.0, 0.75]).unwrap();
    let (z, e) = (grid(3, 4, 4), grid(4, 4, 4));
    let zeros = Array2::zeros((4, 4));
    let half = forward_diffuse(&zeros, 1, &e, &unit).unwrap();
    assert!(max_abs(&(&half - &e.mapv(|v| 0.5 * v))) < 1e-15);
    let same = forward_diffuse(&z, 1, &e, &NoiseSchedule::new(vec![1.0, 1.0 - f64::EPSILON]).unwrap()).unwrap();
    assert!(max_abs(&(&same - &z)) < 1e-7);
}

#[test]
fn predict_clean_oracles() {
    let s = schedule();
    let z0 = grid(5, 6, 6);
    let eps = grid(6, 6, 6);
    let t = 30;
    let zt = forward_diffuse(&z0, t, &eps, &s).unwrap();
    let back = predict_clean(&zt, t, &FixedNoise(eps.clone()), &s).unwrap();
    assert!(max_abs(&(&back - &z0)) < 1e-12);

    let zero = predict_clean(&zt, t, &ZeroPredictor, &s).unwrap();
    assert!(max_abs(&(&zero - &zt.mapv(|v| v / s.alpha_bar(t).sqrt()))) < 1e-15);

    let lin = LinearPredictor { coefficients: vec![0.1; 76] };
    let got = predict_clean(&zt, t, &lin, &s).unwrap();
    let a = s.alpha_bar(t);
    for (g, &v) in got.iter().zip(zt.iter()) {
        let expect = (v - (1.0 - a).sqrt() * 0.1 * v) / a.sqrt();
        assert!((g - expect).abs() < 1e-14);
    }
}

#[test]
fn step_oracles() {
    let s = schedule();
    let z = grid(7, 5, 5);
    let out = ddim_step(&z, 20, &ZeroPredictor, &s, 0.0).unwrap();
    let r = (s.alpha_bar(19) / s.alpha_bar(20)).sqrt();
    assert!(max_abs(&(&out - &z.mapv(|v| r * v))) < 1e-15);

    let z0 = grid(8, 5, 5);
    let eps = grid(9, 5, 5);
    let zt = forward_diffuse(&z0, 20, &eps, &s).unwrap();
    let prev = ddim_step(&zt, 20, &FixedNoise(eps.clone()), &s, 1.0).unwrap();
    let expect = forward_diffuse(&z0, 19, &eps, &s).unwrap();
    assert!(max_abs(&(&prev - &expect)) < 1e-12);

    assert!(matches!(ddim_step(&z, 20, &WrongShape, &s, 0.0), Err(Error::Contract(_))));
    assert!(ddim_step(&z, 0, &ZeroPredictor, &s, 0.0).is_err());
}

#[test]
fn zero_predictor_full_sample_telescopes() {
    let s = schedule();
    let z = grid(10, 8, 8);
    let steps: Vec<usize> = (1..=75).rev().collect();
    let out = ddim_sample(&z, &steps, &ZeroPredictor, &s, 0.0).unwrap();
    let r = (s.alpha_bar(0) / s.alpha_bar(75)).sqrt();
    assert!(max_abs(&(&out - &z.mapv(|v| r * v))) < 1e-12);
    let one = ddim_sample(&z, &[75], &ZeroPredictor, &s, 0.0).unwrap();
    assert!(max_abs(&(&one - &out)) < 1e-12);
    assert!(ddim_sample(&z, &[3, 5], &ZeroPredictor, &s, 0.0).is_err());
}

#[test]
fn seventy_five_steps_stay_finite() {
    let spec = ScheduleSpec::default();
    for kind in [PredictorKind::Zero, PredictorKind::Linear] {
        let sampler = Sampler::new(&spec, kind).unwrap();
        let z = grid(11, 13, 17);
        let out = sampler.sample(&z, 75).unwrap();
        assert_eq!(out.dim(), z.dim());
        assert!(out.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn zero_round_trip_fifty_steps() {
    let s = schedule();
    let asc = evenly_spaced_steps(75, 50).unwrap();
    let z = grid(12, 32, 32);
    let zt = ddim_invert(&z, &asc, &ZeroPredictor, &s, 1.0).unwrap();
    let back = ddim_sample(&zt, &descending(&asc), &ZeroPredictor, &s, 1.0).unwrap();
    assert!(max_abs(&(&back - &z)) < 1e-9);
    assert!(ddim_invert(&z, &[], &ZeroPredictor, &s, 1.0).is_err());
}

#[test]
fn linear_round_trip_cosine() {
    let sampler = Sampler::new(&ScheduleSpec::default(), PredictorKind::Linear).unwrap();
    for i in 0..100 {
        let z = grid(100 + i, 16, 16);
        let back = sampler.sample(&sampler.invert(&z, 75).unwrap(), 75).unwrap();
        assert!(cosine_similarity(&z, &back).unwrap() > 0.99);
    }
}

#[test]
fn fitted_coefficients_track_noise_level() {
    let s = schedule();
    let p = LinearPredictor::standard(&s).unwrap();
    for t in 1..=75 {
        let exact = (1.0 - s.alpha_bar(t)).sqrt();
        assert!((p.coefficients[t] - exact).abs() < 0.03, "t={t}: {} vs {exact}", p.coefficients[t]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn telescoping_ignores_intermediate_steps(seed in any::<u64>(), picks in prop::collection::btree_set(1usize..75, 0..20)) {
        let s = schedule();
        let z = grid(seed, 6, 5);
        let mut steps: Vec<usize> = picks.into_iter().collect();
        steps.push(75);
        steps.reverse();
        let out = ddim_sample(&z, &steps, &ZeroPredictor, &s, 0.0).unwrap();
        let direct = ddim_sample(&z, &[75], &ZeroPredictor, &s, 0.0).unwrap();
        prop_assert!(max_abs(&(&out - &direct)) < 1e-12);
    }

    #[test]
    fn zero_sampling_is_linear(sx in any::<u64>(), sy in any::<u64>(), a in -4i32..4, b in -4i32..4) {
        let s = schedule();
        let (x, y) = (grid(sx, 4, 6), grid(sy, 4, 6));
        let (a, b) = (a as f64, b as f64);
        let steps: Vec<usize> = (1..=75).rev().collect();
        let mix = ddim_sample(&(&x * a + &y * b), &steps, &ZeroPredictor, &s, 0.0).unwrap();
        let sep = ddim_sample(&x, &steps, &ZeroPredictor, &s, 0.0).unwrap() * a
            + ddim_sample(&y, &steps, &ZeroPredictor, &s, 0.0).unwrap() * b;
        prop_assert!(max_abs(&(&mix - &sep)) < 1e-12);
    }

    #[test]
    fn shapes_and_finiteness_preserved(seed in any::<u64>(), m in 1usize..12, n in 1usize..12, k in 1usize..=75) {
        let sampler = Sampler::with_predictor(schedule(), Arc::new(LinearPredictor::standard(&schedule()).unwrap()));
        let z = grid(seed, m, n);
        let zt = sampler.invert(&z, k).unwrap();
        let back = sampler.sample(&zt, k).unwrap();
        prop_assert_eq!(zt.dim(), (m, n));
        prop_assert_eq!(back.dim(), (m, n));
        prop_assert!(zt.iter().chain(back.iter()).all(|v| v.is_finite()));
    }
}
