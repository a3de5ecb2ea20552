//! Iterative regularizing ensemble Kalman method for the scalar order α.
//!
//! With `Σ = σ² I` the `M × M` system `(C^{GG} + μΣ) x = r` is solved
//! through the `J × J` Woodbury identity, since `C^{GG} = D Dᵀ / (J − 1)`
//! for the centred prediction matrix `D`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::forward::ForwardMap;
use crate::sensors::Observation;
use subdiff::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrekmConfig {
    pub ensemble: usize,
    pub max_iter: usize,
    pub nu: f64,
    pub tau: f64,
    pub mu0: f64,
    pub lower: f64,
    pub upper: f64,
    /// Give up on the μ search after this many doublings.
    pub max_doublings: usize,
}

impl Default for IrekmConfig {
    fn default() -> Self {
        Self {
            ensemble: 100,
            max_iter: 50,
            nu: 0.6,
            tau: 2.0,
            mu0: 1.0,
            lower: 0.001,
            upper: 0.999,
            max_doublings: 200,
        }
    }
}

impl IrekmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Precondition(what));
        if self.ensemble < 2 {
            return bad(format!(
                "ensemble needs at least 2 members, got {}",
                self.ensemble
            ));
        }
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return bad(format!("nu must lie in (0, 1), got {}", self.nu));
        }
        if !(self.tau > 1.0 / self.nu) {
            return bad(format!(
                "tau {} must exceed 1/nu = {}",
                self.tau,
                1.0 / self.nu
            ));
        }
        if !(self.mu0 > 0.0) {
            return bad(format!("mu0 must be positive, got {}", self.mu0));
        }
        if !(self.lower < self.upper) {
            return bad(format!(
                "empty clipping interval [{}, {}]",
                self.lower, self.upper
            ));
        }
        Ok(())
    }

    pub fn clip(&self, a: f64) -> f64 {
        self.upper.min(self.lower.max(a))
    }
}

/// Noise level of the discrepancy principle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaMode {
    /// `δ = |d − G(α†)|_Σ`, needs the truth.
    Synthetic,
    /// `δ = √M`, the expected whitened noise norm.
    Practical,
}

pub fn synthetic_delta(fwd: &dyn ForwardMap, obs: &Observation, truth: &[f64]) -> Result<f64> {
    obs.misfit(&fwd.eval(truth)?)
}

pub fn practical_delta(obs: &Observation) -> f64 {
    (obs.len() as f64).sqrt()
}

/// Ensemble statistics of one iteration.
pub struct EnsembleStats {
    /// `M × J`, column `j` is `G_j − Ḡ`.
    pub d: DMatrix<f64>,
    /// `Dᵀ D`.
    pub gram: DMatrix<f64>,
    /// `α_j − ᾱ`.
    pub centred: DVector<f64>,
    pub mean_alpha: f64,
    pub mean_g: DVector<f64>,
    pub sigma: f64,
}

impl EnsembleStats {
    pub fn new(alphas: &[f64], predictions: &[Vec<f64>], sigma: f64) -> Result<Self> {
        let j = alphas.len();
        if j < 2 || predictions.len() != j {
            return Err(Error::Shape(format!(
                "{} members with {} predictions",
                j,
                predictions.len()
            )));
        }
        let m = predictions[0].len();
        if predictions.iter().any(|g| g.len() != m) {
            return Err(Error::Shape("predictions differ in length".into()));
        }
        let g = DMatrix::from_fn(m, j, |r, c| predictions[c][r]);
        let mean_g = g.column_mean();
        let mut d = g;
        for mut col in d.column_iter_mut() {
            col -= &mean_g;
        }
        let mean_alpha = alphas.iter().sum::<f64>() / j as f64;
        let centred = DVector::from_iterator(j, alphas.iter().map(|a| a - mean_alpha));
        let gram = d.transpose() * &d;
        Ok(Self {
            d,
            gram,
            centred,
            mean_alpha,
            mean_g,
            sigma,
        })
    }

    fn members(&self) -> usize {
        self.centred.len()
    }

    /// `C^{αG}` as a row, for checks on small problems.
    pub fn cov_alpha_g(&self) -> DVector<f64> {
        &self.d * &self.centred / (self.members() - 1) as f64
    }

    /// Dense `C^{GG}`, for checks on small problems.
    pub fn cov_gg(&self) -> DMatrix<f64> {
        &self.d * self.d.transpose() / (self.members() - 1) as f64
    }

    /// `Dᵀ (C^{GG} + μΣ)^{-1} R` for the columns of `R`, from `W = Dᵀ R`:
    /// `(W − K (K + γ(J−1) I)^{-1} W) / γ` with `γ = μσ²`, `K = DᵀD`.
    fn project_inverse(&self, mu: f64, w: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let gamma = mu * self.sigma * self.sigma;
        let jm1 = (self.members() - 1) as f64;
        let mut sys = self.gram.clone();
        for k in 0..sys.nrows() {
            sys[(k, k)] += gamma * jm1;
        }
        let chol = sys.cholesky()?;
        let inner = chol.solve(w);
        let out = (w - &self.gram * inner) / gamma;
        out.iter().all(|v| v.is_finite()).then_some(out)
    }

    /// `(C^{GG} + μΣ)^{-1} r`.
    pub fn apply_inverse(&self, mu: f64, r: &DVector<f64>) -> Option<DVector<f64>> {
        let gamma = mu * self.sigma * self.sigma;
        let w = DMatrix::from_column_slice(self.members(), 1, (self.d.transpose() * r).as_slice());
        let gamma_jm1 = gamma * (self.members() - 1) as f64;
        let mut sys = self.gram.clone();
        for k in 0..sys.nrows() {
            sys[(k, k)] += gamma_jm1;
        }
        let inner = sys.cholesky()?.solve(&w);
        let x = (r - &self.d * inner.column(0)) / gamma;
        x.iter().all(|v| v.is_finite()).then_some(x)
    }

    /// Does `μ` satisfy `μ |Σ^{1/2} (C^{GG} + μΣ)^{-1} r| ≥ ν |Σ^{-1/2} r|`?
    /// `None` when the system could not be solved.
    pub fn mu_admissible(&self, mu: f64, r: &DVector<f64>, nu: f64) -> Option<bool> {
        let x = self.apply_inverse(mu, r)?;
        Some(mu * self.sigma * x.norm() >= nu * r.norm() / self.sigma)
    }

    /// `μ = 2^N μ₀` for the first admissible `N`; also returns `N`.
    pub fn select_mu(&self, r: &DVector<f64>, cfg: &IrekmConfig) -> Result<(f64, usize)> {
        let mut mu = cfg.mu0;
        for n in 0..=cfg.max_doublings {
            if self.mu_admissible(mu, r, cfg.nu) == Some(true) {
                return Ok((mu, n));
            }
            mu *= 2.0;
        }
        Err(Error::Inversion(format!(
            "no admissible regularization parameter within {} doublings of {}",
            cfg.max_doublings, cfg.mu0
        )))
    }

    /// Kalman increments `C^{αG} (C^{GG} + μΣ)^{-1} (d − G_j)` for every member.
    pub fn increments(&self, mu: f64, data: &DVector<f64>) -> Option<Vec<f64>> {
        let j = self.members();
        // column c of R is d − G_c = (d − Ḡ) − D_c
        let rbar = data - &self.mean_g;
        let w_bar = self.d.transpose() * &rbar;
        let mut w = -self.gram.clone();
        for mut col in w.column_iter_mut() {
            col += &w_bar;
        }
        let projected = self.project_inverse(mu, &w)?;
        let scale = 1.0 / (j - 1) as f64;
        Some(
            projected
                .column_iter()
                .map(|col| scale * self.centred.dot(&col))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrekmStep {
    pub iteration: usize,
    pub mean: f64,
    /// `|d − Ḡ|_Σ`.
    pub discrepancy: f64,
    /// Regularization used for the update that follows, if one was made.
    pub mu: Option<f64>,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrekmResult {
    pub estimate: f64,
    /// Number of ensemble updates performed.
    pub iterations: usize,
    /// The discrepancy principle was met.
    pub converged: bool,
    pub warning: Option<String>,
    pub delta: f64,
    pub history: Vec<IrekmStep>,
    pub ensemble: Vec<f64>,
}

/// Members drawn from the uniform prior on the clipping interval.
pub fn initial_ensemble(cfg: &IrekmConfig, rng: &mut impl Rng) -> Vec<f64> {
    (0..cfg.ensemble)
        .map(|_| rng.random_range(cfg.lower..cfg.upper))
        .collect()
}

pub fn irekm_invert(
    fwd: &dyn ForwardMap,
    obs: &Observation,
    cfg: &IrekmConfig,
    delta: f64,
    rng: &mut impl Rng,
) -> Result<IrekmResult> {
    cfg.validate()?;
    irekm_from(fwd, obs, cfg, delta, initial_ensemble(cfg, rng))
}

/// The iteration from a given initial ensemble. Member predictions are
/// evaluated in parallel; the update itself is serial.
pub fn irekm_from(
    fwd: &dyn ForwardMap,
    obs: &Observation,
    cfg: &IrekmConfig,
    delta: f64,
    mut ensemble: Vec<f64>,
) -> Result<IrekmResult> {
    cfg.validate()?;
    if !(delta > 0.0) {
        return Err(Error::Precondition(format!(
            "noise level delta must be positive, got {delta}"
        )));
    }
    if !(obs.sigma > 0.0) {
        return Err(Error::Precondition(
            "ensemble Kalman update needs sigma > 0".into(),
        ));
    }
    if fwd.input_len() != 1 || fwd.output_len() != obs.len() {
        return Err(Error::Shape(format!(
            "forward map {} -> {} does not fit a scalar parameter with {} data",
            fwd.input_len(),
            fwd.output_len(),
            obs.len()
        )));
    }
    if ensemble.len() < 2 {
        return Err(Error::Precondition(
            "ensemble needs at least 2 members".into(),
        ));
    }
    ensemble.iter_mut().for_each(|a| *a = cfg.clip(*a));
    let data = DVector::from_column_slice(&obs.data);
    let mut history = Vec::new();

    for n in 0..=cfg.max_iter {
        let predictions: Vec<Vec<f64>> = ensemble
            .par_iter()
            .map(|&a| fwd.eval(&[a]))
            .collect::<Result<_>>()?;
        let stats = EnsembleStats::new(&ensemble, &predictions, obs.sigma)?;
        let discrepancy = obs.misfit(stats.mean_g.as_slice())?;
        let spread = (stats.centred.norm_squared() / (ensemble.len() - 1) as f64).sqrt();
        let mut step = IrekmStep {
            iteration: n,
            mean: stats.mean_alpha,
            discrepancy,
            mu: None,
            spread,
        };
        if discrepancy <= cfg.tau * delta {
            history.push(step);
            return Ok(IrekmResult {
                estimate: stats.mean_alpha,
                iterations: n,
                converged: true,
                warning: None,
                delta,
                history,
                ensemble,
            });
        }
        if n == cfg.max_iter {
            history.push(step);
            break;
        }
        let rbar = &data - &stats.mean_g;
        let (mut mu, _) = stats.select_mu(&rbar, cfg)?;
        // a failed factorization escalates μ
        let mut tries = 0;
        let inc = loop {
            if let Some(inc) = stats.increments(mu, &data) {
                break inc;
            }
            tries += 1;
            if tries > cfg.max_doublings {
                return Err(Error::Inversion(
                    "ensemble update system stayed singular".into(),
                ));
            }
            mu *= 2.0;
        };
        step.mu = Some(mu);
        history.push(step);
        for (a, da) in ensemble.iter_mut().zip(inc) {
            *a = cfg.clip(*a + da);
        }
    }
    let last = history.last().expect("at least one iteration ran");
    let (d, estimate) = (last.discrepancy, last.mean);
    Ok(IrekmResult {
        estimate,
        iterations: cfg.max_iter,
        converged: false,
        warning: Some(format!(
            "discrepancy principle not met after {} iterations; misfit {d:.4e} against tau*delta {:.4e}",
            cfg.max_iter,
            cfg.tau * delta
        )),
        delta,
        history,
        ensemble,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::MapKind;
    use crate::sensors::SensorSet;
    use subdiff::grid::{Grid2D, TimeGrid};
    use subdiff::randfield::seeded_rng;

    /// `α ↦ (α, α², sin α)` observed on three sensors.
    struct Toy;

    impl ForwardMap for Toy {
        fn kind(&self) -> MapKind {
            MapKind::Fdm
        }
        fn input_len(&self) -> usize {
            1
        }
        fn output_len(&self) -> usize {
            3
        }
        fn eval(&self, m: &[f64]) -> Result<Vec<f64>> {
            let a = m[0];
            Ok(vec![a, a * a, a.sin()])
        }
    }

    fn toy_obs(truth: f64, sigma: f64) -> Observation {
        let g = Grid2D::square(3).unwrap();
        let t = TimeGrid::new(2, 1.0).unwrap();
        Observation {
            sensors: SensorSet::new(g, t, vec![1], vec![0, 1, 2]).unwrap(),
            data: Toy.eval(&[truth]).unwrap(),
            sigma,
        }
    }

    #[test]
    fn scalar_covariances_match_direct_formulas() {
        let alphas = [0.2, 0.5, 0.9];
        let preds: Vec<Vec<f64>> = alphas.iter().map(|&a| Toy.eval(&[a]).unwrap()).collect();
        let s = EnsembleStats::new(&alphas, &preds, 0.1).unwrap();
        let abar = (0.2 + 0.5 + 0.9) / 3.0;
        for r in 0..3 {
            let gbar: f64 = preds.iter().map(|g| g[r]).sum::<f64>() / 3.0;
            let cag: f64 = alphas
                .iter()
                .zip(&preds)
                .map(|(a, g)| (a - abar) * (g[r] - gbar))
                .sum::<f64>()
                / 2.0;
            assert!((s.cov_alpha_g()[r] - cag).abs() < 1e-15);
            for c in 0..3 {
                let gbar_c: f64 = preds.iter().map(|g| g[c]).sum::<f64>() / 3.0;
                let cgg: f64 = preds
                    .iter()
                    .map(|g| (g[r] - gbar) * (g[c] - gbar_c))
                    .sum::<f64>()
                    / 2.0;
                assert!((s.cov_gg()[(r, c)] - cgg).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn woodbury_matches_dense_solve() {
        let alphas = [0.1, 0.3, 0.35, 0.8];
        let preds: Vec<Vec<f64>> = alphas.iter().map(|&a| Toy.eval(&[a]).unwrap()).collect();
        let sigma = 0.05;
        let s = EnsembleStats::new(&alphas, &preds, sigma).unwrap();
        let data = DVector::from_vec(Toy.eval(&[0.6]).unwrap());
        let mu = 3.0;
        let dense = s.cov_gg() + DMatrix::identity(3, 3) * (mu * sigma * sigma);
        let lu = dense.lu();
        let inc = s.increments(mu, &data).unwrap();
        for (j, g) in preds.iter().enumerate() {
            let r = &data - DVector::from_column_slice(g);
            let want = s.cov_alpha_g().dot(&lu.solve(&r).unwrap());
            assert!(
                (inc[j] - want).abs() < 1e-9 * want.abs().max(1.0),
                "{} vs {want}",
                inc[j]
            );
        }
        let r = &data - &s.mean_g;
        let x = s.apply_inverse(mu, &r).unwrap();
        assert!((x - lu.solve(&r).unwrap()).norm() < 1e-8 * r.norm() / (sigma * sigma));
    }

    #[test]
    fn mu_is_the_first_crossing() {
        let cfg = IrekmConfig {
            mu0: 1e-6,
            ..Default::default()
        };
        let alphas = [0.2, 0.4, 0.45, 0.7, 0.9];
        let preds: Vec<Vec<f64>> = alphas.iter().map(|&a| Toy.eval(&[a]).unwrap()).collect();
        let s = EnsembleStats::new(&alphas, &preds, 0.01).unwrap();
        let r = DVector::from_vec(Toy.eval(&[0.6]).unwrap()) - &s.mean_g;
        let (mu, n) = s.select_mu(&r, &cfg).unwrap();
        assert!(n > 0);
        assert_eq!(mu, cfg.mu0 * 2f64.powi(n as i32));
        assert_eq!(s.mu_admissible(mu, &r, cfg.nu), Some(true));
        assert_eq!(s.mu_admissible(mu / 2.0, &r, cfg.nu), Some(false));
    }

    #[test]
    fn truth_initialized_ensemble_stops_at_once() {
        let obs = toy_obs(0.4, 0.01);
        let cfg = IrekmConfig {
            ensemble: 5,
            ..Default::default()
        };
        let res = irekm_from(&Toy, &obs, &cfg, 1.0, vec![0.4; 5]).unwrap();
        assert!(res.converged);
        assert_eq!(res.iterations, 0);
        assert!((res.estimate - 0.4).abs() < 1e-15);
        // the mean of identical predictions is exact up to rounding
        assert!(res.history[0].discrepancy < 1e-12);
    }

    #[test]
    fn recovers_the_toy_order_and_clips() {
        let obs = toy_obs(0.63, 0.001);
        let cfg = IrekmConfig {
            ensemble: 20,
            ..Default::default()
        };
        let delta = practical_delta(&obs);
        let res = irekm_invert(&Toy, &obs, &cfg, delta, &mut seeded_rng(2, 0)).unwrap();
        assert!(res.converged, "{:?}", res.warning);
        assert!((res.estimate - 0.63).abs() < 0.01, "{}", res.estimate);
        assert!(res
            .ensemble
            .iter()
            .all(|&a| (cfg.lower..=cfg.upper).contains(&a)));
    }

    #[test]
    fn max_iter_returns_last_mean_with_warning() {
        let obs = toy_obs(0.63, 0.001);
        let cfg = IrekmConfig {
            ensemble: 10,
            max_iter: 1,
            ..Default::default()
        };
        // an unreachable tolerance
        let res = irekm_invert(&Toy, &obs, &cfg, 1e-9, &mut seeded_rng(2, 0)).unwrap();
        assert!(!res.converged);
        assert!(res.warning.is_some());
        assert_eq!(res.history.len(), 2);
        assert_eq!(res.estimate, res.history[1].mean);
    }

    #[test]
    fn rejects_bad_settings() {
        let obs = toy_obs(0.5, 0.01);
        let mut rng = seeded_rng(0, 0);
        let bad_tau = IrekmConfig {
            tau: 1.5,
            ..Default::default()
        };
        assert!(irekm_invert(&Toy, &obs, &bad_tau, 1.0, &mut rng).is_err());
        assert!(irekm_invert(&Toy, &obs, &IrekmConfig::default(), 0.0, &mut rng).is_err());
        let noiseless = Observation { sigma: 0.0, ..obs };
        assert!(irekm_invert(&Toy, &noiseless, &IrekmConfig::default(), 1.0, &mut rng).is_err());
    }
}
