//! Fourier-domain signatures, masks and spectral embedding on latent grids.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rustfft::FftPlanner;

use crate::diffusion::{PredictorKind, ScheduleSpec};
use crate::error::{config, shape, Error, Result};
use crate::rng;

/// Largest imaginary residue tolerated when inverting a Hermitian spectrum.
pub const REAL_TOLERANCE: f64 = 1e-9;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Full 2D DFT layout, unnormalized forward transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub data: Array2<Complex64>,
    /// Community the grid came from, when known.
    pub source: Option<usize>,
}

impl Spectrum {
    pub fn dim(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

fn transform(data: &mut Array2<Complex64>, inverse: bool) {
    let (m, n) = data.dim();
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let (row_fft, col_fft) = if inverse {
            (p.plan_fft_inverse(n), p.plan_fft_inverse(m))
        } else {
            (p.plan_fft_forward(n), p.plan_fft_forward(m))
        };
        for mut row in data.rows_mut() {
            let mut buf: Vec<Complex64> = row.to_vec();
            row_fft.process(&mut buf);
            row.iter_mut().zip(buf).for_each(|(r, b)| *r = b);
        }
        let mut buf = vec![Complex64::default(); m];
        for mut col in data.columns_mut() {
            buf.iter_mut().zip(col.iter()).for_each(|(b, c)| *b = *c);
            col_fft.process(&mut buf);
            col.iter_mut().zip(&buf).for_each(|(c, b)| *c = *b);
        }
    });
    if inverse {
        let scale = 1.0 / (m * n) as f64;
        data.mapv_inplace(|c| c * scale);
    }
}

fn check_grid(grid: &Array2<f64>) -> Result<()> {
    let (m, n) = grid.dim();
    if m < 2 || n < 2 {
        return shape(format!("grid must be at least 2x2, got {m}x{n}"));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("grid contains non-finite values".into()));
    }
    Ok(())
}

pub fn fft2(grid: &Array2<f64>) -> Result<Spectrum> {
    check_grid(grid)?;
    let mut data = grid.mapv(|x| Complex64::new(x, 0.0));
    transform(&mut data, false);
    Ok(Spectrum { data, source: None })
}

/// Complex inverse transform without discarding the imaginary part.
pub fn ifft2_complex(spec: &Spectrum) -> Result<Array2<Complex64>> {
    let (m, n) = spec.dim();
    if m < 2 || n < 2 {
        return shape(format!("spectrum must be at least 2x2, got {m}x{n}"));
    }
    if spec.data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::Numeric("spectrum contains non-finite values".into()));
    }
    let mut data = spec.data.clone();
    transform(&mut data, true);
    Ok(data)
}

/// Real inverse transform. Fails if the input was not Hermitian enough to
/// give a real grid.
pub fn ifft2(spec: &Spectrum) -> Result<Array2<f64>> {
    let data = ifft2_complex(spec)?;
    let scale = data.iter().map(|c| c.re.abs()).fold(1.0, f64::max);
    let worst = data.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    if worst > REAL_TOLERANCE * scale {
        return Err(Error::Numeric(format!("inverse transform has imaginary residue {worst:e}")));
    }
    Ok(data.mapv(|c| c.re))
}

/// Alias of [`fft2`] for candidate grids at detection time.
pub fn extract_spectrum(grid: &Array2<f64>) -> Result<Spectrum> {
    fft2(grid)
}

/// Conjugate-symmetric partner of a DFT index.
pub fn partner(i: usize, j: usize, m: usize, n: usize) -> (usize, usize) {
    ((m - i) % m, (n - j) % n)
}

/// One Hermitian pair (or self-conjugate cell), named by its
/// lexicographically smaller member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Unit {
    pub row: usize,
    pub col: usize,
    pub self_conjugate: bool,
}

impl Unit {
    pub fn cells(&self, m: usize, n: usize) -> usize {
        let _ = (m, n);
        if self.self_conjugate {
            1
        } else {
            2
        }
    }

    pub fn partner(&self, m: usize, n: usize) -> (usize, usize) {
        partner(self.row, self.col, m, n)
    }

    pub fn is_dc(&self) -> bool {
        self.row == 0 && self.col == 0
    }
}

/// All Hermitian units of an `m x n` grid in row-major order of their
/// representative.
pub fn hermitian_units(m: usize, n: usize) -> Vec<Unit> {
    let mut out = Vec::with_capacity(m * n / 2 + 2);
    for i in 0..m {
        for j in 0..n {
            let p = partner(i, j, m, n);
            if (i, j) <= p {
                out.push(Unit { row: i, col: j, self_conjugate: (i, j) == p });
            }
        }
    }
    out
}

/// Wrapped frequency magnitude along an axis of length `len`.
pub fn wrapped(k: usize, len: usize) -> usize {
    k.min(len - k)
}

/// Binary Hermitian-symmetric mask over DFT cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    bits: Array2<bool>,
    count: usize,
}

impl MaskMatrix {
    pub fn new(bits: Array2<bool>) -> Result<Self> {
        let (m, n) = bits.dim();
        if m == 0 || n == 0 {
            return shape("empty mask");
        }
        for ((i, j), &b) in bits.indexed_iter() {
            if b != bits[partner(i, j, m, n)] {
                return Err(Error::Contract(format!("mask not Hermitian-symmetric at ({i}, {j})")));
            }
        }
        let count = bits.iter().filter(|&&b| b).count();
        Ok(Self { bits, count })
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Self { bits: Array2::from_elem((m, n), false), count: 0 }
    }

    pub fn ones(m: usize, n: usize) -> Self {
        Self { bits: Array2::from_elem((m, n), true), count: m * n }
    }

    pub fn from_units(m: usize, n: usize, units: &[Unit]) -> Self {
        let mut bits = Array2::from_elem((m, n), false);
        for u in units {
            bits[[u.row, u.col]] = true;
            bits[u.partner(m, n)] = true;
        }
        let count = bits.iter().filter(|&&b| b).count();
        Self { bits, count }
    }

    pub fn bits(&self) -> &Array2<bool> {
        &self.bits
    }

    pub fn dim(&self) -> (usize, usize) {
        self.bits.dim()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[[i, j]]
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn density(&self) -> f64 {
        self.count as f64 / self.bits.len() as f64
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Masked Hermitian units, row-major.
    pub fn units(&self) -> Vec<Unit> {
        let (m, n) = self.dim();
        hermitian_units(m, n).into_iter().filter(|u| self.bits[[u.row, u.col]]).collect()
    }

    pub fn as_f64(&self) -> Array2<f64> {
        self.bits.mapv(|b| if b { 1.0 } else { 0.0 })
    }

    pub fn union(&self, other: &MaskMatrix) -> Result<MaskMatrix> {
        if self.dim() != other.dim() {
            return shape("mask union of different shapes");
        }
        let bits = Zip::from(&self.bits).and(&other.bits).map_collect(|&a, &b| a || b);
        MaskMatrix::new(bits)
    }

    /// Uniformly chosen Hermitian units until at least `ceil(density m n)`
    /// cells are set.
    pub fn random_symmetric(m: usize, n: usize, density: f64, seed: u64, exclude_dc: bool) -> Result<Self> {
        check_density(density)?;
        let mut units: Vec<Unit> = hermitian_units(m, n).into_iter().filter(|u| !(exclude_dc && u.is_dc())).collect();
        units.shuffle(&mut rng::seeded(seed));
        let target = target_cells(m, n, density);
        let mut chosen = Vec::new();
        let mut cells = 0;
        for u in units {
            if cells >= target {
                break;
            }
            cells += u.cells(m, n);
            chosen.push(u);
        }
        if cells < target {
            return config(format!("density {density} not reachable on {m}x{n}"));
        }
        Ok(Self::from_units(m, n, &chosen))
    }

    /// Two-layer mask. The first half of the units sits on the lowest
    /// entity-axis frequencies (row 0 first), which only depend on column
    /// sums of the grid and so survive reordering of its rows; the rest is
    /// drawn uniformly from strictly higher entity-axis frequencies.
    /// [`MaskMatrix::split`] recovers the two layers.
    pub fn layered(m: usize, n: usize, density: f64, seed: u64) -> Result<Self> {
        check_density(density)?;
        let target = target_cells(m, n, density);
        let total_units = target.div_ceil(2).max(1);
        let n_phi = total_units.div_ceil(2);
        let n_psi = total_units - n_phi;

        let mut rng = rng::seeded(seed);
        let mut by_row: Vec<Vec<Unit>> = vec![Vec::new(); m / 2 + 1];
        for u in hermitian_units(m, n).into_iter().filter(|u| !u.is_dc()) {
            by_row[wrapped(u.row, m)].push(u);
        }
        let mut phi = Vec::new();
        let mut next_row = 0;
        while phi.len() < n_phi && next_row < by_row.len() {
            let mut row = std::mem::take(&mut by_row[next_row]);
            row.shuffle(&mut rng);
            let need = n_phi - phi.len();
            if row.len() <= need {
                phi.extend(row);
            } else {
                // partial row: the unused units are not reused by the
                // upper layer so the split stays unambiguous
                phi.extend(row.into_iter().take(need));
            }
            next_row += 1;
        }
        let mut rest: Vec<Unit> = by_row[next_row..].iter().flatten().copied().collect();
        if phi.len() < n_phi || rest.len() < n_psi {
            return config(format!("density {density} not reachable on {m}x{n}"));
        }
        rest.shuffle(&mut rng);
        phi.extend(rest.into_iter().take(n_psi));
        Ok(Self::from_units(m, n, &phi))
    }

    /// Split into the low layer (first half of the units ordered by
    /// wrapped entity-axis frequency, then wrapped feature-axis frequency,
    /// then index) and the high layer (the rest).
    pub fn split(&self) -> (MaskMatrix, MaskMatrix) {
        let (m, n) = self.dim();
        let mut units = self.units();
        units.sort_by_key(|u| (wrapped(u.row, m), wrapped(u.col, n), u.row, u.col));
        let k = units.len().div_ceil(2);
        (Self::from_units(m, n, &units[..k]), Self::from_units(m, n, &units[k..]))
    }

    /// Run lengths over row-major bits, starting with a (possibly empty)
    /// run of zeros and alternating.
    pub fn to_rle(&self) -> Vec<usize> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0;
        for &b in self.bits.iter() {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn from_rle(m: usize, n: usize, runs: &[usize]) -> Result<Self> {
        let total: usize = runs.iter().sum();
        if total != m * n {
            return Err(Error::Format(format!("mask runs cover {total} cells, expected {}", m * n)));
        }
        let mut flat = Vec::with_capacity(total);
        for (k, &len) in runs.iter().enumerate() {
            flat.extend(std::iter::repeat_n(k % 2 == 1, len));
        }
        let bits = Array2::from_shape_vec((m, n), flat).map_err(|e| Error::Format(e.to_string()))?;
        Self::new(bits)
    }
}

fn check_density(density: f64) -> Result<()> {
    if !(density > 0.0 && density < 1.0) {
        return config(format!("density {density} outside (0, 1)"));
    }
    Ok(())
}

pub fn target_cells(m: usize, n: usize, density: f64) -> usize {
    ((density * (m * n) as f64) - 1e-9).ceil().max(1.0) as usize
}

pub fn mask_density(mask: &MaskMatrix) -> f64 {
    mask.density()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    pub spatial: Array2<f64>,
    pub sigma2: f64,
    pub seed: u64,
}

pub fn gen_signature(seed: u64, sigma2: f64, m: usize, n: usize) -> Result<Signature> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return config(format!("signature variance must be positive, got {sigma2}"));
    }
    if m == 0 || n == 0 {
        return shape("signature shape must be non-empty");
    }
    let spatial = rng::normal_grid(&mut rng::seeded(seed), m, n, sigma2.sqrt());
    Ok(Signature { spatial, sigma2, seed })
}

/// Secret material needed to embed and detect: signature seed and variance,
/// mask, and the diffusion settings used on both sides.
#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkKey {
    pub seed: u64,
    pub sigma2: f64,
    pub mask: MaskMatrix,
    pub schedule: ScheduleSpec,
    pub embed_steps: usize,
    pub detect_steps: usize,
    pub alpha_correction: f64,
    pub predictor: PredictorKind,
}

impl WatermarkKey {
    pub fn new(seed: u64, mask: MaskMatrix) -> Self {
        Self {
            seed,
            sigma2: 1.0,
            mask,
            schedule: ScheduleSpec::default(),
            embed_steps: crate::DEFAULT_STEPS,
            detect_steps: crate::DEFAULT_STEPS,
            alpha_correction: 0.05,
            predictor: PredictorKind::Linear,
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.mask.dim()
    }

    pub fn signature(&self) -> Result<Signature> {
        let (m, n) = self.dim();
        gen_signature(self.seed, self.sigma2, m, n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_steps == 0 || self.detect_steps == 0 {
            return config("key step counts must be at least 1");
        }
        if self.embed_steps > self.schedule.steps || self.detect_steps > self.schedule.steps {
            return config("key step counts exceed schedule length");
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return config("key sigma2 must be positive");
        }
        if self.mask.is_empty() {
            return config("key mask is empty");
        }
        Ok(())
    }
}

fn check_pair(z: &Array2<f64>, sig: &Signature, mask_dim: (usize, usize)) -> Result<()> {
    if z.dim() != sig.spatial.dim() || z.dim() != mask_dim {
        return shape(format!(
            "grid {:?}, signature {:?}, mask {:?}",
            z.dim(),
            sig.spatial.dim(),
            mask_dim
        ));
    }
    Ok(())
}

/// Replace the masked coefficients of `F(z)` with those of `targets`.
pub fn replace_masked(z: &Array2<f64>, targets: &Spectrum, mask: &MaskMatrix) -> Result<Array2<f64>> {
    if z.dim() != targets.dim() || z.dim() != mask.dim() {
        return shape("replace_masked: shape mismatch");
    }
    let mut spec = fft2(z)?;
    Zip::from(&mut spec.data).and(&targets.data).and(mask.bits()).for_each(|y, &t, &b| {
        if b {
            *y = t;
        }
    });
    ifft2(&spec)
}

/// `F^-1(F(z) (1 - M) + F(S) M)`.
pub fn embed_watermark(z: &Array2<f64>, sig: &Signature, mask: &MaskMatrix) -> Result<Array2<f64>> {
    check_pair(z, sig, mask.dim())?;
    replace_masked(z, &fft2(&sig.spatial)?, mask)
}

/// Convex spectral blend with a real weight per cell. The weights must be
/// Hermitian-symmetric for the result to be real.
pub fn soft_embed(z: &Array2<f64>, sig_spec: &Spectrum, weights: &Array2<f64>) -> Result<Array2<f64>> {
    if z.dim() != sig_spec.dim() || z.dim() != weights.dim() {
        return shape("soft_embed: shape mismatch");
    }
    let mut spec = fft2(z)?;
    Zip::from(&mut spec.data).and(&sig_spec.data).and(weights).for_each(|y, &s, &w| {
        *y = *y * (1.0 - w) + s * w;
    });
    ifft2(&spec)
}

/// Largest number of `hold` or `set` cells in any column that carries a
/// `set` cell, over the columns `embed_on_rows` solves.
pub fn column_constraints(hold: &MaskMatrix, set: &MaskMatrix) -> usize {
    let (m, n) = set.dim();
    (0..=n / 2)
        .filter(|&kc| (0..m).any(|kr| set.get(kr, kc)))
        .map(|kc| (0..m).filter(|&kr| set.get(kr, kc) || hold.get(kr, kc)).count())
        .max()
        .unwrap_or(0)
}

/// Change only the given rows of `z` so that its spectrum takes the target
/// values on `set` while cells of `hold` keep their current values. Each
/// feature-axis frequency is solved independently for the minimum-norm
/// correction; the result is exact whenever the per-column constraint
/// count does not exceed the row count.
pub fn embed_on_rows(
    z: &Array2<f64>,
    targets: &Spectrum,
    hold: &MaskMatrix,
    set: &MaskMatrix,
    rows: &[usize],
) -> Result<Array2<f64>> {
    let (m, n) = z.dim();
    if targets.dim() != (m, n) || hold.dim() != (m, n) || set.dim() != (m, n) {
        return shape("embed_on_rows: shape mismatch");
    }
    if rows.is_empty() || rows.iter().any(|&r| r >= m) {
        return Err(Error::Index("embed_on_rows: bad row set".into()));
    }
    let y = fft2(z)?;
    let mut g = Array2::<Complex64>::zeros((m, n));
    let tau = std::f64::consts::TAU;
    for kc in 0..=n / 2 {
        let mut kr_list = Vec::new();
        let mut rhs = Vec::new();
        let mut any_set = false;
        for kr in 0..m {
            if set.get(kr, kc) {
                any_set = true;
                kr_list.push(kr);
                rhs.push(targets.data[[kr, kc]] - y.data[[kr, kc]]);
            } else if hold.get(kr, kc) {
                kr_list.push(kr);
                rhs.push(Complex64::default());
            }
        }
        if !any_set {
            continue;
        }
        let e = DMatrix::from_fn(kr_list.len(), rows.len(), |a, b| {
            Complex64::from_polar(1.0, -tau * ((kr_list[a] * rows[b]) % m) as f64 / m as f64)
        });
        let pinv = e
            .svd(true, true)
            .pseudo_inverse(1e-12)
            .map_err(|msg| Error::Numeric(msg.to_string()))?;
        let sol = pinv * DVector::from_vec(rhs);
        let self_col = kc == 0 || 2 * kc == n;
        for (b, &r) in rows.iter().enumerate() {
            if self_col {
                g[[r, kc]] = Complex64::new(sol[b].re, 0.0);
            } else {
                g[[r, kc]] = sol[b];
                g[[r, n - kc]] = sol[b].conj();
            }
        }
    }
    let mut out = z.clone();
    PLANNER.with(|p| {
        let inv = p.borrow_mut().plan_fft_inverse(n);
        for &r in rows {
            let mut buf: Vec<Complex64> = g.row(r).to_vec();
            inv.process(&mut buf);
            for (c, v) in buf.iter().enumerate() {
                out[[r, c]] += v.re / n as f64;
            }
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(seed: u64, m: usize, n: usize) -> Array2<f64> {
        rng::normal_grid(&mut rng::seeded(seed), m, n, 1.0)
    }

    #[test]
    fn constant_and_impulse() {
        let s = fft2(&Array2::from_elem((4, 6), 2.5)).unwrap();
        for ((i, j), c) in s.data.indexed_iter() {
            let expect = if (i, j) == (0, 0) { 2.5 * 24.0 } else { 0.0 };
            assert!((c.re - expect).abs() < 1e-10 && c.im.abs() < 1e-10);
        }
        let mut imp = Array2::zeros((5, 3));
        imp[[0, 0]] = 1.0;
        let s = fft2(&imp).unwrap();
        assert!(s.data.iter().all(|c| (c.re - 1.0).abs() < 1e-12 && c.im.abs() < 1e-12));
    }

    #[test]
    fn round_trip_and_rejects() {
        let g = grid(1, 7, 10);
        let back = ifft2(&fft2(&g).unwrap()).unwrap();
        assert!(Zip::from(&g).and(&back).all(|a, b| (a - b).abs() < 1e-10));
        assert!(fft2(&Array2::zeros((1, 4))).is_err());
        let mut bad = g.clone();
        bad[[0, 0]] = f64::NAN;
        assert!(fft2(&bad).is_err());
    }

    #[test]
    fn units_cover_grid() {
        for (m, n) in [(2, 2), (3, 4), (5, 5), (8, 6)] {
            let cells: usize = hermitian_units(m, n).iter().map(|u| u.cells(m, n)).sum();
            assert_eq!(cells, m * n);
        }
    }

    #[test]
    fn density_counts() {
        let mut bits = Array2::from_elem((3, 4), false);
        bits[[0, 0]] = true;
        bits[[1, 1]] = true;
        bits[[2, 3]] = true;
        let m = MaskMatrix::new(bits).unwrap();
        assert_eq!(mask_density(&m), 0.25);
        assert_eq!(MaskMatrix::ones(3, 4).density(), 1.0);

        let r = MaskMatrix::random_symmetric(64, 64, 0.015, 7, true).unwrap();
        assert!(r.count() == 62 || r.count() == 63, "{}", r.count());
        assert!(!r.get(0, 0));
    }

    #[test]
    fn asymmetric_rejected() {
        let mut bits = Array2::from_elem((4, 4), false);
        bits[[1, 2]] = true;
        assert!(matches!(MaskMatrix::new(bits), Err(Error::Contract(_))));
    }

    #[test]
    fn rle_round_trip() {
        let r = MaskMatrix::random_symmetric(10, 8, 0.2, 3, false).unwrap();
        assert_eq!(MaskMatrix::from_rle(10, 8, &r.to_rle()).unwrap(), r);
        assert!(MaskMatrix::from_rle(10, 8, &[3]).is_err());
        let ones = MaskMatrix::ones(2, 3);
        assert_eq!(ones.to_rle(), vec![0, 6]);
    }

    #[test]
    fn layered_split_recovers_layers() {
        let mask = MaskMatrix::layered(100, 64, 0.015, 11).unwrap();
        let (phi, psi) = mask.split();
        assert_eq!(phi.count() + psi.count(), mask.count());
        assert!(phi.units().iter().all(|u| u.row == 0));
        assert!(psi.units().iter().all(|u| u.row != 0));
        assert!(!mask.get(0, 0));
        assert!(mask.count().abs_diff(96) <= 2);
    }

    #[test]
    fn layered_overflows_to_next_rows() {
        let mask = MaskMatrix::layered(16, 8, 0.3, 2).unwrap();
        let (phi, psi) = mask.split();
        let max_phi = phi.units().iter().map(|u| wrapped(u.row, 16)).max().unwrap();
        let min_psi = psi.units().iter().map(|u| wrapped(u.row, 16)).min().unwrap();
        assert!(max_phi < min_psi);
    }

    #[test]
    fn full_and_empty_masks() {
        let z = grid(2, 8, 8);
        let sig = gen_signature(5, 1.0, 8, 8).unwrap();
        let full = embed_watermark(&z, &sig, &MaskMatrix::ones(8, 8)).unwrap();
        assert!(Zip::from(&full).and(&sig.spatial).all(|a, b| (a - b).abs() < 1e-10));
        let none = embed_watermark(&z, &sig, &MaskMatrix::zeros(8, 8)).unwrap();
        assert!(Zip::from(&none).and(&z).all(|a, b| (a - b).abs() < 1e-10));
    }

    #[test]
    fn row_restricted_embedding_hits_targets() {
        let (m, n) = (40, 16);
        let z = grid(3, m, n);
        let mask = MaskMatrix::layered(m, n, 0.05, 4).unwrap();
        let (phi, psi) = mask.split();
        let sig = gen_signature(8, 1.0, m, n).unwrap();
        let target = fft2(&sig.spatial).unwrap();
        let z1 = replace_masked(&z, &target, &phi).unwrap();
        let rows: Vec<usize> = (0..10).map(|i| i * 3).collect();
        let z2 = embed_on_rows(&z1, &target, &phi, &psi, &rows).unwrap();
        let got = fft2(&z2).unwrap();
        for ((i, j), &b) in mask.bits().indexed_iter() {
            if b {
                assert!((got.data[[i, j]] - target.data[[i, j]]).norm() < 1e-9);
            }
        }
        for r in 0..m {
            if !rows.contains(&r) {
                assert_eq!(z2.row(r), z1.row(r));
            }
        }
    }

    #[test]
    fn signature_rules() {
        let a = gen_signature(9, 1.0, 4, 4).unwrap();
        assert_eq!(a, gen_signature(9, 1.0, 4, 4).unwrap());
        assert!(gen_signature(9, 0.0, 4, 4).is_err());
        let big = gen_signature(1, 1.0, 64, 64).unwrap();
        let mean = big.spatial.mean().unwrap();
        let var = big.spatial.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4095.0;
        assert!((0.9..=1.1).contains(&var));
    }
}
