//! Random inputs: mean-shifted RBF Gaussian random fields, Karhunen-Loève
//! sources for `N(0, (−Δ)^{−s})`, and the discrete fractional-order prior.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::grid::{Grid2D, ScalarField};
use crate::solver::spectral::{modes_to_field, SineMode};
use crate::{Error, Result};

pub type SeededRng = ChaCha8Rng;

/// Generator for `(seed, stream)`. Streams are independent ChaCha sequences,
/// so record `k` of a dataset can be regenerated without the others.
pub fn seeded_rng(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RbfPrior {
    pub a0: f64,
    pub l: f64,
    pub jitter: f64,
}

impl Default for RbfPrior {
    fn default() -> Self {
        Self {
            a0: 5.0,
            l: 0.3,
            jitter: 1e-10,
        }
    }
}

impl RbfPrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.l > 0.0) || !(self.jitter >= 0.0) || !self.a0.is_finite() {
            return Err(Error::Precondition(format!("invalid RBF prior {self:?}")));
        }
        Ok(())
    }
}

pub fn rbf_kernel(p: [f64; 2], q: [f64; 2], l: f64) -> f64 {
    let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
    (-d2 / (2.0 * l * l)).exp()
}

/// `K_ij = exp(−|p_i − p_j|² / 2l²)`.
pub fn rbf_covariance(points: &[[f64; 2]], l: f64) -> Result<DMatrix<f64>> {
    if !(l > 0.0) {
        return Err(Error::Precondition(format!(
            "length scale must be positive, got {l}"
        )));
    }
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        for j in 0..i {
            let v = rbf_kernel(points[i], points[j], l);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Cholesky factor of `K + jitter·I`, escalating the jitter by ×10 up to 1e-6.
/// Returns the lower factor and the jitter that worked.
pub fn cholesky_with_jitter(k: &DMatrix<f64>, jitter: f64) -> Result<(DMatrix<f64>, f64)> {
    let mut j = jitter;
    loop {
        let mut shifted = k.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += j;
        }
        if let Some(chol) = shifted.cholesky() {
            return Ok((chol.l(), j));
        }
        j = if j == 0.0 { 1e-12 } else { j * 10.0 };
        if j > 1e-6 * (1.0 + 1e-9) {
            return Err(Error::Factorization { jitter: j / 10.0 });
        }
    }
}

/// Coarse lattice used when the target grid is too large to factorize.
pub const COARSE_LATTICE: usize = 34;
/// Largest point count factorized directly.
pub const MAX_DENSE_POINTS: usize = 1600;
/// Guard against nonphysical coefficients: fields with `min ≤` this are redrawn.
pub const POSITIVITY_FLOOR: f64 = 0.1;
const MAX_REDRAWS: usize = 1000;

/// Cached factorization for repeated draws of the centred field `L z` on a
/// lattice, returned on the target grid (bilinear interpolation when the two
/// differ).
#[derive(Debug, Clone)]
pub struct GrfSampler {
    prior: RbfPrior,
    target: Grid2D,
    lattice: Grid2D,
    factor: DMatrix<f64>,
    jitter: f64,
}

impl GrfSampler {
    pub fn new(target: Grid2D, prior: RbfPrior) -> Result<Self> {
        let lattice = if target.len() <= MAX_DENSE_POINTS {
            target
        } else {
            Grid2D::square(COARSE_LATTICE)?
        };
        Self::on_lattice(target, lattice, prior)
    }

    pub fn on_lattice(target: Grid2D, lattice: Grid2D, prior: RbfPrior) -> Result<Self> {
        prior.validate()?;
        let k = rbf_covariance(&lattice.points(), prior.l)?;
        let (factor, jitter) = cholesky_with_jitter(&k, prior.jitter)?;
        Ok(Self {
            prior,
            target,
            lattice,
            factor,
            jitter,
        })
    }

    pub fn prior(&self) -> &RbfPrior {
        &self.prior
    }

    pub fn lattice(&self) -> Grid2D {
        self.lattice
    }

    pub fn target(&self) -> Grid2D {
        self.target
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Zero-mean draw `L z` on the lattice.
    pub fn sample_lattice(&self, rng: &mut impl Rng) -> ScalarField {
        let n = self.lattice.len();
        let z = DVector::from_iterator(n, (0..n).map(|_| standard_normal(rng)));
        let v = &self.factor * z;
        ScalarField::new(self.lattice, v.as_slice().to_vec()).expect("lattice shape")
    }

    /// Zero-mean draw on the target grid.
    pub fn sample_centered(&self, rng: &mut impl Rng) -> ScalarField {
        let m = self.sample_lattice(rng);
        if self.lattice == self.target {
            m
        } else {
            m.resample(self.target)
        }
    }

    /// `a₀ + L z` on the target grid, redrawn while `min ≤ POSITIVITY_FLOOR`.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<ScalarField> {
        for _ in 0..MAX_REDRAWS {
            let mut field = self.sample_centered(rng);
            field
                .values_mut()
                .iter_mut()
                .for_each(|v| *v += self.prior.a0);
            if field.min() > POSITIVITY_FLOOR {
                return Ok(field);
            }
        }
        Err(Error::Precondition(format!(
            "no GRF draw above {POSITIVITY_FLOOR} in {MAX_REDRAWS} attempts"
        )))
    }
}

pub fn sample_grf_rbf(grid: Grid2D, prior: &RbfPrior, rng: &mut impl Rng) -> Result<ScalarField> {
    GrfSampler::new(grid, *prior)?.sample(rng)
}

/// Truncated KL prior for `N(0, (−Δ)^{−s})` with Dirichlet conditions on the
/// unit square.
#[derive(Debug, Clone, PartialEq)]
pub struct KlPrior {
    s: f64,
    modes: Vec<(u32, u32)>,
}

impl KlPrior {
    pub fn new(s: f64, k: usize) -> Result<Self> {
        if !(s > 1.0) {
            return Err(Error::Precondition(format!(
                "covariance exponent must exceed 1, got {s}"
            )));
        }
        if k == 0 {
            return Err(Error::Precondition(
                "KL truncation rank must be at least 1".into(),
            ));
        }
        // every mode with m² + n² ≤ r² where r² bounds the k-th smallest
        let side = (k as f64).sqrt().ceil() as u32 + 1;
        let mut modes: Vec<(u32, u32)> = Vec::new();
        let r2 = 2 * side * side;
        let reach = (r2 as f64).sqrt().ceil() as u32;
        for m in 1..=reach {
            for n in 1..=reach {
                if m * m + n * n <= r2 {
                    modes.push((m, n));
                }
            }
        }
        modes.sort_by_key(|&(m, n)| (m * m + n * n, m, n));
        modes.truncate(k);
        Ok(Self { s, modes })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn rank(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[(u32, u32)] {
        &self.modes
    }

    pub fn eigenvalue(m: u32, n: u32) -> f64 {
        PI * PI * ((m * m + n * n) as f64)
    }

    /// Covariance eigenvalues `γ_k = λ_k^{−s}`, nonincreasing.
    pub fn gammas(&self) -> Vec<f64> {
        self.modes
            .iter()
            .map(|&(m, n)| Self::eigenvalue(m, n).powf(-self.s))
            .collect()
    }

    /// Trace of the full covariance, `Σ_k γ_k` over all modes.
    pub fn total_variance(&self) -> f64 {
        // direct sum on a large box plus the integral of the quarter-plane tail
        let big = 1500u32;
        let mut acc = 0.0;
        for m in 1..=big {
            for n in 1..=big {
                acc += Self::eigenvalue(m, n).powf(-self.s);
            }
        }
        let r = big as f64;
        // modes outside the box, approximated by the annulus beyond radius r
        let tail =
            0.5 * PI * PI.powf(-2.0 * self.s) * r.powf(2.0 - 2.0 * self.s) / (2.0 * self.s - 2.0);
        acc + tail
    }

    /// Variance discarded by the truncation, `Σ_{k>K} γ_k`.
    pub fn truncation_tail(&self) -> f64 {
        self.total_variance() - self.gammas().iter().sum::<f64>()
    }

    pub fn sample_modes(&self, rng: &mut impl Rng) -> Vec<SineMode> {
        self.modes
            .iter()
            .map(|&(m, n)| {
                let gamma = Self::eigenvalue(m, n).powf(-self.s);
                SineMode::new(m, n, gamma.sqrt() * standard_normal(rng))
            })
            .collect()
    }
}

/// `f = Σ_{k≤K} √γ_k ζ_k φ_k` evaluated nodally, exactly zero on the boundary.
pub fn sample_kl_laplacian(grid: Grid2D, prior: &KlPrior, rng: &mut impl Rng) -> ScalarField {
    modes_to_field(grid, &prior.sample_modes(rng)).with_zero_boundary()
}

/// Candidate fractional orders `eps + k(1 − 2eps)/nparts`, `k = 0..=nparts`.
pub fn alpha_lattice(eps: f64, nparts: usize) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps < 0.5) || nparts == 0 {
        return Err(Error::Precondition(format!(
            "alpha lattice needs 0 < eps < 1/2 and nparts ≥ 1, got {eps}, {nparts}"
        )));
    }
    let step = (1.0 - 2.0 * eps) / nparts as f64;
    Ok((0..=nparts)
        .map(|k| {
            if k == nparts {
                1.0 - eps
            } else {
                eps + k as f64 * step
            }
        })
        .collect())
}

pub fn sample_alpha(eps: f64, nparts: usize, rng: &mut impl Rng) -> Result<f64> {
    let lattice = alpha_lattice(eps, nparts)?;
    Ok(lattice[rng.random_range(0..=nparts)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    #[test]
    fn kernel_values() {
        let k = rbf_covariance(&[[0.1, 0.2], [0.4, 0.2]], 0.3).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert!((k[(0, 1)] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((k[(0, 1)] - 0.606_530_66).abs() < 1e-8);
        assert_eq!(k[(0, 1)], k[(1, 0)]);
        assert!(rbf_covariance(&[[0.0, 0.0]], 0.0).is_err());
    }

    #[test]
    fn small_lattice_is_positive_definite() {
        let g = Grid2D::square(3).unwrap();
        let k = rbf_covariance(&g.points(), 0.3).unwrap();
        let eig = SymmetricEigen::new(k.clone());
        assert!(eig.eigenvalues.iter().all(|&l| l > 0.0));
        let (l, used) = cholesky_with_jitter(&k, 1e-10).unwrap();
        assert_eq!(used, 1e-10);
        let back = &l * l.transpose();
        assert!((back - k).abs().max() < 1e-9);
    }

    #[test]
    fn duplicated_points_need_jitter() {
        let pts = [[0.5, 0.5], [0.5, 0.5], [0.2, 0.7]];
        let k = rbf_covariance(&pts, 0.3).unwrap();
        let (_, used) = cholesky_with_jitter(&k, 0.0).unwrap();
        assert!(used > 0.0 && used <= 1e-6);
    }

    #[test]
    fn reproducible_per_seed_and_stream() {
        let g = Grid2D::square(9).unwrap();
        let prior = RbfPrior::default();
        let a = sample_grf_rbf(g, &prior, &mut seeded_rng(7, 3)).unwrap();
        let b = sample_grf_rbf(g, &prior, &mut seeded_rng(7, 3)).unwrap();
        let c = sample_grf_rbf(g, &prior, &mut seeded_rng(7, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn grf_mean_and_covariance() {
        let g = Grid2D::square(7).unwrap();
        let prior = RbfPrior::default();
        let sampler = GrfSampler::new(g, prior).unwrap();
        let mut rng = seeded_rng(11, 0);
        let (p, q) = (g.index(2, 3), g.index(4, 3));
        let n = 5000;
        let (mut sp, mut sq, mut spq, mut spp) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let a = sampler.sample(&mut rng).unwrap();
            let (x, y) = (a.values()[p] - 5.0, a.values()[q] - 5.0);
            sp += x;
            sq += y;
            spq += x * y;
            spp += x * x;
        }
        let nf = n as f64;
        // 3σ/√N with unit marginal variance
        assert!((sp / nf).abs() < 3.0 / nf.sqrt(), "mean {}", 5.0 + sp / nf);
        let cov = spq / nf - (sp / nf) * (sq / nf);
        let expect = rbf_kernel(g.points()[p], g.points()[q], 0.3);
        assert!((cov - expect).abs() < 0.05, "cov {cov} vs {expect}");
        let var = spp / nf - (sp / nf).powi(2);
        assert!((var - 1.0).abs() < 0.06, "var {var}");
    }

    #[test]
    fn coarse_path_for_large_grids() {
        let g = Grid2D::square(101).unwrap();
        let sampler = GrfSampler::new(g, RbfPrior::default()).unwrap();
        assert_eq!(sampler.lattice(), Grid2D::square(COARSE_LATTICE).unwrap());
        let a = sampler.sample(&mut seeded_rng(1, 0)).unwrap();
        assert_eq!(a.grid(), g);
        assert!(a.min() > POSITIVITY_FLOOR);
    }

    #[test]
    fn kl_modes_are_ordered() {
        let prior = KlPrior::new(2.0, 64).unwrap();
        assert_eq!(prior.rank(), 64);
        assert_eq!(prior.modes()[0], (1, 1));
        let g = prior.gammas();
        assert!(g.windows(2).all(|w| w[1] <= w[0]));
        // no skipped mode: everything below the largest kept eigenvalue is present
        let (mm, nn) = *prior.modes().last().unwrap();
        let cut = mm * mm + nn * nn;
        let below = (1..40u32)
            .flat_map(|m| (1..40u32).map(move |n| (m, n)))
            .filter(|&(m, n)| m * m + n * n < cut)
            .count();
        assert!(below <= 64);
        // tail fraction from an independent 3000×3000 lattice sum: 0.018904
        let frac = prior.truncation_tail() / prior.total_variance();
        assert!((frac - 0.018_904).abs() < 1e-5, "tail fraction {frac}");
    }

    #[test]
    fn kl_total_variance_against_direct_sum() {
        let prior = KlPrior::new(2.0, 1).unwrap();
        // brute-force lattice sum on a larger box; both carry an O(r⁻²) remainder
        let mut direct = 0.0;
        for m in 1..=4000u32 {
            for n in 1..=4000u32 {
                direct += KlPrior::eigenvalue(m, n).powi(-2);
            }
        }
        assert!((prior.total_variance() - direct).abs() < 1e-6 * direct);
    }

    #[test]
    fn kl_first_mode() {
        let g = Grid2D::square(11).unwrap();
        let prior = KlPrior::new(2.0, 1).unwrap();
        let mut rng = seeded_rng(5, 0);
        let f = sample_kl_laplacian(g, &prior, &mut rng);
        let zeta = standard_normal(&mut seeded_rng(5, 0));
        let scale = (2.0 * PI * PI).powf(-1.0) * zeta;
        let expect = ScalarField::from_fn(g, |x, y| scale * 2.0 * (PI * x).sin() * (PI * y).sin());
        for (a, b) in f.values().iter().zip(expect.with_zero_boundary().values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn kl_boundary_and_variance() {
        let g = Grid2D::square(11).unwrap();
        let prior = KlPrior::new(2.0, 64).unwrap();
        let mut rng = seeded_rng(9, 1);
        let centre = g.index(5, 5);
        let n = 5000;
        let mut acc = 0.0;
        for _ in 0..n {
            let f = sample_kl_laplacian(g, &prior, &mut rng);
            for j in 0..g.ny() {
                for i in 0..g.nx() {
                    if g.is_boundary(i, j) {
                        assert_eq!(f.at(i, j), 0.0);
                    }
                }
            }
            acc += f.values()[centre].powi(2);
        }
        let var = acc / n as f64;
        let expect: f64 = prior
            .modes()
            .iter()
            .zip(prior.gammas())
            .map(|(&(m, n), gamma)| {
                gamma * (2.0 * (m as f64 * PI * 0.5).sin() * (n as f64 * PI * 0.5).sin()).powi(2)
            })
            .sum();
        assert!((var - expect).abs() < 0.1 * expect, "{var} vs {expect}");
    }

    #[test]
    fn alpha_lattice_endpoints() {
        let lat = alpha_lattice(0.001, 20).unwrap();
        assert_eq!(lat.len(), 21);
        assert_eq!(lat[0], 0.001);
        assert_eq!(lat[20], 0.999);
        assert!((lat[10] - 0.5).abs() < 1e-15);
        assert!(alpha_lattice(0.5, 20).is_err());
        assert!(alpha_lattice(0.1, 0).is_err());
    }

    #[test]
    fn alpha_frequencies_pass_chi_square() {
        let mut rng = seeded_rng(2024, 0);
        let lat = alpha_lattice(0.001, 20).unwrap();
        let mut counts = [0usize; 21];
        let n = 100_000;
        for _ in 0..n {
            let a = sample_alpha(0.001, 20, &mut rng).unwrap();
            assert!((0.001..=0.999).contains(&a));
            let k = lat.iter().position(|&v| v == a).unwrap();
            counts[k] += 1;
        }
        let e = n as f64 / 21.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 99th percentile of χ² with 20 degrees of freedom
        assert!(chi2 < 37.566, "chi2 {chi2}");
    }
}
