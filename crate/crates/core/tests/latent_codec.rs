use kgmark::codec::{decode_block, encode_block, gaussian_kl, train_toy_vae, VaeConfig, VaeInit};
use kgmark::rng;
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn block_strategy() -> impl Strategy<Value = Array2<f64>> {
    (2usize..12, 2usize..12, any::<u64>(), 0.01f64..100.0, -50.0f64..50.0).prop_map(|(r, c, seed, scale, shift)| {
        rng::normal_grid(&mut rng::seeded(seed), r, c, scale).mapv(|v| v + shift)
    })
}

#[test]
fn round_trip_random_block() {
    let block = rng::normal_grid(&mut rng::seeded(1), 40, 16, 3.0);
    let grid = encode_block(&block, 0, (0..40).collect()).unwrap();
    let back = decode_block(&grid);
    let err = (&back - &block).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(err < 1e-12, "{err}");
}

#[test]
fn zero_grid_decodes_to_mean() {
    let block = rng::normal_grid(&mut rng::seeded(2), 5, 4, 1.0);
    let grid = encode_block(&block, 0, (0..5).collect()).unwrap();
    let flat = grid.with_data(Array2::zeros((5, 4))).unwrap();
    let out = decode_block(&flat);
    assert!(out.iter().all(|&v| v == grid.stats.mean));
}

#[test]
fn constant_block_is_flagged() {
    let block = Array2::from_elem((3, 3), 2.5);
    let grid = encode_block(&block, 0, vec![0, 1, 2]).unwrap();
    assert!(grid.stats.degenerate);
    assert_eq!(decode_block(&grid), block);
}

#[test]
fn identity_vae_fits_overcomplete() {
    let blocks: Vec<Array2<f64>> = (0..10).map(|i| rng::normal_grid(&mut rng::seeded(10 + i), 3, 4, 1.0)).collect();
    // near-zero posterior noise, otherwise the sampled latents act as a
    // ridge penalty and pull the decoder off the identity
    let cfg = VaeConfig {
        latent_dim: 12,
        kl_weight: 0.0,
        init: VaeInit::Identity,
        init_logvar: -30.0,
        epochs: 50,
        ..VaeConfig::default()
    };
    let out = train_toy_vae(&blocks, &cfg).unwrap();
    let mse = out.model.reconstruction_mse(&blocks);
    assert!(mse < 1e-6, "{mse}");
}

proptest! {
    #[test]
    fn codec_is_exact(block in block_strategy()) {
        let rows = block.nrows();
        let grid = encode_block(&block, 0, (0..rows).collect()).unwrap();
        let back = decode_block(&grid);
        let tol = 1e-12 * block.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!((&back - &block).iter().all(|v| v.abs() < tol));
    }

    #[test]
    fn whitened_grid_is_standardized(block in block_strategy()) {
        let rows = block.nrows();
        let grid = encode_block(&block, 0, (0..rows).collect()).unwrap();
        prop_assume!(!grid.stats.degenerate);
        let n = grid.data.len() as f64;
        let mean = grid.data.sum() / n;
        let var = grid.data.mapv(|v| (v - mean) * (v - mean)).sum() / n;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn kl_is_non_negative(mu in prop::collection::vec(-10.0f64..10.0, 1..20), seed in any::<u64>()) {
        let lv = rng::normal_grid(&mut rng::seeded(seed), 1, mu.len(), 3.0).into_shape_with_order(mu.len()).unwrap();
        prop_assert!(gaussian_kl(&Array1::from(mu), &lv) >= 0.0);
    }
}
