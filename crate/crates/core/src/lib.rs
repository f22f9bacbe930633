//! Frequency-domain watermarking of knowledge-graph embeddings through a
//! diffusion latent space.
//!
//! The pipeline maps each community of a canonically aligned graph to a
//! latent grid, inverts it to the terminal diffusion state with DDIM,
//! overwrites a Hermitian-symmetric set of Fourier coefficients with those
//! of a keyed Gaussian signature, and samples back. Detection repeats the
//! inversion on a candidate graph and tests the masked residual with a
//! noncentral chi-squared likelihood test.

pub mod attacks;
pub mod chi2;
pub mod codec;
pub mod detector;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod kg;
pub mod lawmm;
pub mod par;
pub mod rng;
pub mod spectral;
pub mod synthetic;

pub use error::{Error, Result};

/// Significance level used throughout unless overridden.
pub const DEFAULT_ALPHA: f64 = 5e-5;
/// DDIM inference steps at the reference operating point.
pub const DEFAULT_STEPS: usize = 75;
/// Watermark mask density at the reference operating point.
pub const DEFAULT_DENSITY: f64 = 0.015;
