use kgmark::chi2::{chi2_cdf, nc_chi2_cdf, nc_chi2_ln_cdf};
use kgmark::detector::{
    detect, estimate_sigma2, masked_components, noncentrality, reference_spectrum, residual, test_region,
    test_statistic, DetectOptions, Residual,
};
use kgmark::graph::{default_community_size, key_ring, redundant_embed, EmbedOptions, KeySettings};
use kgmark::kg::KnowledgeGraph;
use kgmark::rng;
use kgmark::spectral::{embed_watermark, fft2, MaskMatrix, Spectrum};
use kgmark::synthetic::{sbm_graph, structured_embedding, SbmConfig};
use kgmark::{DEFAULT_ALPHA, DEFAULT_DENSITY};
use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn grid(seed: u64, m: usize, n: usize) -> Array2<f64> {
    rng::normal_grid(&mut rng::seeded(seed), m, n, 1.0)
}

fn instance(seed: u64) -> (KnowledgeGraph, Array2<f64>) {
    let sbm = SbmConfig { n_entities: 250, seed, ..SbmConfig::default() };
    let kg = sbm_graph(&sbm).unwrap();
    let emb = structured_embedding(&kg, sbm.n_blocks, 32, 0.5, rng::derive(seed, 1)).unwrap();
    let ent = emb.entities().clone();
    (kg, ent)
}

fn ring(n: usize, seed: u64) -> Vec<kgmark::spectral::WatermarkKey> {
    key_ring(n, 32, default_community_size(n), DEFAULT_DENSITY, seed, &KeySettings::default()).unwrap()
}

/// Asymptotic two-sample Kolmogorov-Smirnov p-value.
fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let lambda = d * (na * nb / (na + nb)).sqrt();
    let p: f64 = (1..100).map(|k| 2.0 * (-1f64).powi(k as i32 - 1) * (-2.0 * (k * k) as f64 * lambda * lambda).exp()).sum();
    p.clamp(0.0, 1.0)
}

#[test]
fn residual_vanishes_on_exact_recovery() {
    let (m, n) = (20, 16);
    let key = KeySettings::default().key(3, MaskMatrix::layered(m, n, 0.05, 4).unwrap());
    let z = embed_watermark(&grid(5, m, n), &key.signature().unwrap(), &key.mask).unwrap();
    let r = residual(&fft2(&z).unwrap(), &reference_spectrum(&key).unwrap(), &key.mask).unwrap();
    assert!(r.max_abs() < 1e-8);
    let wrong = MaskMatrix::layered(m + 1, n, 0.05, 4).unwrap();
    assert!(residual(&fft2(&z).unwrap(), &reference_spectrum(&key).unwrap(), &wrong).is_err());
}

#[test]
fn residual_energy_expectation() {
    let (m, n) = (32, 32);
    let key = KeySettings::default().key(6, MaskMatrix::random_symmetric(m, n, 0.05, 7, false).unwrap());
    let reference = reference_spectrum(&key).unwrap();
    let k_energy: f64 = masked_components(&reference, &key.mask).unwrap().iter().map(|k| k * k).sum();
    let draws = 10_000;
    let mut total = 0.0;
    let mut dof = 0;
    for d in 0..draws {
        let y = fft2(&grid(rng::derive(8, d), m, n)).unwrap();
        let r = residual(&y, &reference, &key.mask).unwrap();
        dof = r.dof();
        total += r.norm_sqr();
    }
    let mean = total / draws as f64;
    // every real component of an unnormalized transform has variance mn/2
    let expect = dof as f64 * (m * n) as f64 / 2.0 + k_energy;
    assert!((mean / expect - 1.0).abs() < 0.05, "{mean} vs {expect}");
}

#[test]
fn wrong_seed_residual_looks_unwatermarked() {
    let (m, n) = (32, 32);
    let settings = KeySettings::default();
    let mut marked = Vec::new();
    let mut clean = Vec::new();
    for d in 0..500 {
        let truth = settings.key(rng::derive(9, d), MaskMatrix::layered(m, n, 0.05, rng::derive(10, d)).unwrap());
        let wrong = settings.key(rng::derive(11, d), MaskMatrix::layered(m, n, 0.05, rng::derive(12, d)).unwrap());
        let reference = reference_spectrum(&wrong).unwrap();
        let z = grid(rng::derive(13, d), m, n);
        let zw = embed_watermark(&z, &truth.signature().unwrap(), &truth.mask).unwrap();
        marked.push(residual(&fft2(&zw).unwrap(), &reference, &wrong.mask).unwrap().norm_sqr());
        let z2 = grid(rng::derive(14, d), m, n);
        clean.push(residual(&fft2(&z2).unwrap(), &reference, &wrong.mask).unwrap().norm_sqr());
    }
    let p = ks_two_sample(&mut marked, &mut clean);
    assert!(p > 0.01, "KS p-value {p}");
}

#[test]
fn sigma2_estimate() {
    let (m, n) = (64, 64);
    let mut r = rng::seeded(15);
    let data = Array2::from_shape_fn((m, n), |_| {
        Complex64::new(StandardNormal.sample(&mut r), StandardNormal.sample(&mut r))
    });
    let y = Spectrum { data, source: None };
    let mask = MaskMatrix::layered(m, n, DEFAULT_DENSITY, 16).unwrap();
    let est = estimate_sigma2(&y, &mask).unwrap();
    assert!((0.9..=1.1).contains(&est.value), "{}", est.value);
    assert!(!est.fallback);

    let doubled = Spectrum { data: y.data.mapv(|c| c * 2.0), source: None };
    let est2 = estimate_sigma2(&doubled, &mask).unwrap();
    assert!((est2.value / est.value - 4.0).abs() < 1e-12);

    let all = estimate_sigma2(&y, &MaskMatrix::ones(m, n)).unwrap();
    assert!(all.fallback);
    assert_eq!(all.value, 1.0);
}

#[test]
fn statistic_and_noncentrality_oracles() {
    assert_eq!(test_statistic(&Residual { components: vec![0.0; 5] }, 1.0).unwrap(), (0.0, 5));
    assert_eq!(test_statistic(&Residual { components: vec![3.0] }, 1.0).unwrap(), (9.0, 1));
    assert!(test_statistic(&Residual { components: vec![3.0] }, 0.0).is_err());

    let comps: Vec<f64> = grid(17, 1, 40).iter().copied().collect();
    let direct: f64 = comps.iter().map(|c| c * c / 2.5).sum();
    let (t, dof) = test_statistic(&Residual { components: comps.clone() }, 2.5).unwrap();
    assert!((t - direct).abs() < 1e-12 && dof == 40);

    assert_eq!(noncentrality(&[0.0; 8], 1.0).unwrap(), 0.0);
    let lam = noncentrality(&comps, 2.5).unwrap();
    assert!((lam - direct).abs() < 1e-12);
    let doubled: Vec<f64> = comps.iter().map(|c| 2.0 * c).collect();
    assert!((noncentrality(&doubled, 2.5).unwrap() / lam - 4.0).abs() < 1e-12);
}

#[test]
fn central_closed_form() {
    let p = nc_chi2_cdf(2.0, 2.0, 0.0).unwrap();
    assert!((p - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    assert!((p - 0.6321205588).abs() < 1e-10);
    assert!(nc_chi2_cdf(f64::NAN, 2.0, 0.0).is_err());
    assert!(nc_chi2_cdf(1.0, 2.0, f64::INFINITY).is_err());
}

#[test]
fn noncentral_monte_carlo() {
    let (k, lambda) = (4usize, 2.5f64);
    let shift = (lambda / k as f64).sqrt();
    let draws = 1_000_000;
    let xs = [1.0, 3.0, 5.0, 10.0];
    let mut hits = [0usize; 4];
    let mut r = rng::seeded(18);
    for _ in 0..draws {
        let s: f64 = (0..k)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut r);
                (z + shift).powi(2)
            })
            .sum();
        for (h, &x) in hits.iter_mut().zip(&xs) {
            if s <= x {
                *h += 1;
            }
        }
    }
    for (h, &x) in hits.iter().zip(&xs) {
        let mc = *h as f64 / draws as f64;
        let se = (mc * (1.0 - mc) / draws as f64).sqrt();
        let p = nc_chi2_cdf(x, k as f64, lambda).unwrap();
        assert!((p - mc).abs() < 3.0 * se, "x={x}: {p} vs {mc} (se {se})");
    }
}

#[test]
fn central_reduction_on_grid() {
    for i in 0..100 {
        let k = 1 + (i % 10) as u32 * 7;
        let x = 0.05 + 0.9 * i as f64;
        let want = ChiSquared::new(k as f64).unwrap().cdf(x);
        let got = nc_chi2_cdf(x, k as f64, 0.0).unwrap();
        assert!((got - want).abs() < 1e-12, "k={k} x={x}: {got} vs {want}");
        assert!((chi2_cdf(x, k as f64).unwrap() - want).abs() < 1e-12);
    }
}

#[test]
fn freshly_watermarked_graph_is_detected() {
    for t in 0..5 {
        let (kg, ent) = instance(rng::derive(20, t));
        let keys = ring(kg.n_entities(), rng::derive(21, t));
        let out = redundant_embed(kg.graph(), &ent, &keys, &EmbedOptions::default()).unwrap();
        let res = detect(kg.graph(), &out.entities, &keys, DEFAULT_ALPHA, &DetectOptions::default()).unwrap();
        assert!(res.decision);
        assert!(res.min_ln_p < DEFAULT_ALPHA.ln() - 20.0, "min p {}", res.min_p);
        assert_eq!(res.decision, res.min_p < res.corrected_alpha);
        assert!(res.communities.iter().all(|c| (0.0..=1.0).contains(&c.p)));
    }
}

#[test]
fn unwatermarked_graphs_rarely_fire() {
    let trials = 1000;
    let mut fired = 0;
    for t in 0..trials {
        let (kg, ent) = instance(rng::derive(30, t % 50));
        let keys = ring(kg.n_entities(), rng::derive(31, t));
        let res = detect(kg.graph(), &ent, &keys, DEFAULT_ALPHA, &DetectOptions::default()).unwrap();
        if res.decision {
            fired += 1;
        }
    }
    let a = DEFAULT_ALPHA;
    let na = a * trials as f64;
    let band = a * (1.0 + 3.0 * na.sqrt() / na);
    assert!(fired as f64 / trials as f64 <= band, "{fired} false positives in {trials}");
}

#[test]
fn wrong_key_ring_is_rejected() {
    let trials = 200;
    let mut rejected = 0;
    for t in 0..trials {
        let (kg, ent) = instance(rng::derive(40, t % 20));
        let n = kg.n_entities();
        let out = redundant_embed(kg.graph(), &ent, &ring(n, rng::derive(41, t)), &EmbedOptions::default()).unwrap();
        let res = detect(kg.graph(), &out.entities, &ring(n, rng::derive(42, t)), DEFAULT_ALPHA, &DetectOptions::default())
            .unwrap();
        if !res.decision {
            rejected += 1;
        }
    }
    assert!(rejected * 100 >= 99 * trials, "{rejected}/{trials} rejected");
}

#[test]
fn detect_errors() {
    let (kg, ent) = instance(50);
    assert!(detect(kg.graph(), &ent, &[], DEFAULT_ALPHA, &DetectOptions::default()).is_err());
    let keys = ring(kg.n_entities(), 51);
    assert!(detect(kg.graph(), &ent, &keys, 1.5, &DetectOptions::default()).is_err());
    let opts = DetectOptions { community_size: Some(1), ..DetectOptions::default() };
    assert!(detect(kg.graph(), &ent, &keys, DEFAULT_ALPHA, &opts).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cdf_is_monotone(k in 1u32..60, lambda in 0.0f64..80.0, x in 0.0f64..150.0, dx in 0.0f64..20.0, dl in 0.0f64..20.0) {
        let k = k as f64;
        let base = nc_chi2_ln_cdf(x, k, lambda).unwrap();
        prop_assert!(nc_chi2_ln_cdf(x + dx, k, lambda).unwrap() >= base - 1e-12);
        prop_assert!(nc_chi2_ln_cdf(x, k, lambda + dl).unwrap() <= base + 1e-12);
        let p = nc_chi2_cdf(x, k, lambda).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn test_is_scale_invariant(seed in any::<u64>(), c in 0.01f64..100.0) {
        let (m, n) = (16, 12);
        let key = KeySettings::default().key(seed, MaskMatrix::layered(m, n, 0.05, seed ^ 3).unwrap());
        let reference = reference_spectrum(&key).unwrap();
        let y = fft2(&grid(seed ^ 5, m, n)).unwrap();
        let scale = |s: &Spectrum| Spectrum { data: s.data.mapv(|v| v * c), source: None };
        let a = test_region(&y, &reference, &key.mask, &key.mask).unwrap();
        let b = test_region(&scale(&y), &scale(&reference), &key.mask, &key.mask).unwrap();
        prop_assert!((a.0 - b.0).abs() <= 1e-10 * a.0.max(1.0));
        prop_assert_eq!(a.1, b.1);
        prop_assert!((a.2 - b.2).abs() <= 1e-10 * a.2.max(1.0));
        prop_assert!((a.3.exp() - b.3.exp()).abs() <= 1e-10);
    }
}
