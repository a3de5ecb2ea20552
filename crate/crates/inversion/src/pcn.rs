//! Preconditioned Crank-Nicolson MCMC for the diffusion coefficient
//! `a = a₀ + m`, `m ∼ N(0, C)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::forward::ForwardMap;
use crate::sensors::Observation;
use subdiff::randfield::GrfSampler;
use subdiff::{Error, Result};

/// Source of prior draws `υ ∼ N(0, C)`.
pub trait PriorSampler {
    fn dim(&self) -> usize;
    fn draw(&self, rng: &mut dyn rand::RngCore) -> Vec<f64>;
}

/// Nodal draws on the sampler's lattice.
impl PriorSampler for GrfSampler {
    fn dim(&self) -> usize {
        self.lattice().len()
    }

    fn draw(&self, mut rng: &mut dyn rand::RngCore) -> Vec<f64> {
        self.sample_lattice(&mut rng).into_values()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcnConfig {
    pub beta: f64,
    pub n_iter: usize,
    pub burn_in: usize,
    /// Prior mean of the coefficient.
    pub a0: f64,
    /// Proposals with `min(a) ≤` this are rejected outright.
    pub positivity_floor: f64,
    pub store_samples: bool,
    /// Record the potential every this many steps.
    pub trace_every: usize,
}

impl Default for PcnConfig {
    fn default() -> Self {
        Self {
            beta: 0.005,
            n_iter: 10_000,
            burn_in: 2_000,
            a0: 5.0,
            positivity_floor: 0.05,
            store_samples: false,
            trace_every: 100,
        }
    }
}

impl PcnConfig {
    pub fn validate(&self) -> Result<()> {
        // β = 0 is allowed: the chain then never moves
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Precondition(format!(
                "beta must lie in [0, 1), got {}",
                self.beta
            )));
        }
        if self.burn_in >= self.n_iter {
            return Err(Error::Precondition(format!(
                "burn-in {} must be shorter than the chain {}",
                self.burn_in, self.n_iter
            )));
        }
        if self.trace_every == 0 {
            return Err(Error::Precondition("trace_every must be positive".into()));
        }
        Ok(())
    }
}

/// `Φ(g) = ½ |d − g|²_Σ`.
pub fn potential(fwd: &dyn ForwardMap, m: &[f64], obs: &Observation) -> Result<f64> {
    let r = obs.misfit(&fwd.eval(m)?)?;
    Ok(0.5 * r * r)
}

/// `min{1, exp(Φ(m) − Φ(m̃))}`, zero for an infinite proposal potential.
pub fn acceptance_probability(current: f64, proposed: f64) -> f64 {
    if proposed == f64::INFINITY {
        return 0.0;
    }
    (current - proposed).exp().min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainAbort {
    pub step: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcnResult {
    /// Mean of `m` over the retained samples.
    pub mean_m: Vec<f64>,
    /// `a₀ + mean_m`.
    pub mean_a: Vec<f64>,
    pub steps: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub retained: usize,
    pub final_m: Vec<f64>,
    pub final_potential: f64,
    /// `(step, Φ(m_step))`.
    pub potential_trace: Vec<(usize, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<Vec<f64>>>,
    /// Set when the potential failed; the fields above describe the chain up
    /// to that step.
    pub abort: Option<ChainAbort>,
}

/// The chain for an arbitrary potential of `m`.
pub fn pcn_chain(
    mut phi: impl FnMut(&[f64]) -> Result<f64>,
    prior: &dyn PriorSampler,
    cfg: &PcnConfig,
    m0: Vec<f64>,
    rng: &mut impl Rng,
) -> Result<PcnResult> {
    cfg.validate()?;
    let n = prior.dim();
    if m0.len() != n {
        return Err(Error::Shape(format!(
            "start has {} values, prior has {n}",
            m0.len()
        )));
    }
    let mut m = m0;
    let mut phi_m = phi(&m)?;
    if !phi_m.is_finite() {
        return Err(Error::Inversion(
            "the chain start has infinite potential".into(),
        ));
    }
    let keep = (1.0 - cfg.beta * cfg.beta).sqrt();
    let mut sum = vec![0.0; n];
    let mut retained = 0usize;
    let mut accepted = 0usize;
    let mut trace = vec![(0, phi_m)];
    let mut samples = cfg.store_samples.then(Vec::new);
    let mut abort = None;
    let mut steps = 0;
    let mut proposal = vec![0.0; n];

    for k in 1..=cfg.n_iter {
        let v = prior.draw(rng);
        for ((p, &mi), &vi) in proposal.iter_mut().zip(&m).zip(&v) {
            *p = keep * mi + cfg.beta * vi;
        }
        let phi_p = match phi(&proposal) {
            Ok(v) => v,
            Err(e) => {
                abort = Some(ChainAbort {
                    step: k,
                    reason: e.to_string(),
                });
                break;
            }
        };
        let rho = acceptance_probability(phi_m, phi_p);
        debug_assert!((0.0..=1.0).contains(&rho));
        let u: f64 = rng.random();
        if u < rho {
            std::mem::swap(&mut m, &mut proposal);
            phi_m = phi_p;
            accepted += 1;
        }
        steps = k;
        if k > cfg.burn_in {
            sum.iter_mut().zip(&m).for_each(|(s, &v)| *s += v);
            retained += 1;
            if let Some(s) = samples.as_mut() {
                s.push(m.clone());
            }
        }
        if k % cfg.trace_every == 0 {
            trace.push((k, phi_m));
        }
    }
    let mean_m: Vec<f64> = if retained > 0 {
        sum.iter().map(|s| s / retained as f64).collect()
    } else {
        m.clone()
    };
    Ok(PcnResult {
        mean_a: mean_m.iter().map(|v| cfg.a0 + v).collect(),
        mean_m,
        steps,
        accepted,
        acceptance_rate: if steps > 0 {
            accepted as f64 / steps as f64
        } else {
            0.0
        },
        retained,
        final_m: m,
        final_potential: phi_m,
        potential_trace: trace,
        samples,
        abort,
    })
}

/// The chain for `Φ(m) = ½|d − g(a₀ + m)|²_Σ`, with non-positive
/// coefficients rejected.
pub fn pcn_mcmc(
    fwd: &dyn ForwardMap,
    obs: &Observation,
    prior: &dyn PriorSampler,
    cfg: &PcnConfig,
    m0: Vec<f64>,
    rng: &mut impl Rng,
) -> Result<PcnResult> {
    if fwd.input_len() != prior.dim() || fwd.output_len() != obs.len() {
        return Err(Error::Shape(format!(
            "forward map {} -> {} against prior dimension {} and {} data",
            fwd.input_len(),
            fwd.output_len(),
            prior.dim(),
            obs.len()
        )));
    }
    let mut a = vec![0.0; prior.dim()];
    let phi = |m: &[f64]| -> Result<f64> {
        a.iter_mut().zip(m).for_each(|(a, &m)| *a = cfg.a0 + m);
        if a.iter().any(|&v| v <= cfg.positivity_floor) {
            return Ok(f64::INFINITY);
        }
        potential(fwd, &a, obs)
    };
    pcn_chain(phi, prior, cfg, m0, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::MapKind;
    use crate::sensors::SensorSet;
    use subdiff::grid::{Grid2D, TimeGrid};
    use subdiff::randfield::{seeded_rng, standard_normal};

    /// Independent unit normals.
    struct White(usize);

    impl PriorSampler for White {
        fn dim(&self) -> usize {
            self.0
        }
        fn draw(&self, mut rng: &mut dyn rand::RngCore) -> Vec<f64> {
            (0..self.0).map(|_| standard_normal(&mut rng)).collect()
        }
    }

    /// Identity on the coefficient values.
    struct Identity(usize);

    impl ForwardMap for Identity {
        fn kind(&self) -> MapKind {
            MapKind::Fdm
        }
        fn input_len(&self) -> usize {
            self.0
        }
        fn output_len(&self) -> usize {
            self.0
        }
        fn eval(&self, m: &[f64]) -> Result<Vec<f64>> {
            Ok(m.to_vec())
        }
    }

    fn obs(data: Vec<f64>, sigma: f64) -> Observation {
        let g = Grid2D::square(8).unwrap();
        let t = TimeGrid::new(2, 1.0).unwrap();
        let nodes = (0..data.len()).collect();
        Observation {
            sensors: SensorSet::new(g, t, vec![1], nodes).unwrap(),
            data,
            sigma,
        }
    }

    #[test]
    fn potential_examples() {
        let o = obs(vec![1.0, 2.0], 0.5);
        assert_eq!(potential(&Identity(2), &[1.0, 2.0], &o).unwrap(), 0.0);
        let single = obs(vec![0.0], 0.5);
        assert!((potential(&Identity(1), &[0.5], &single).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn potential_at_truth_has_chi_square_mean() {
        // Φ at the truth is ½ χ²_M, mean M/2
        let m = 50;
        let truth = vec![0.0; m];
        let trials = 2000;
        let mut rng = seeded_rng(4, 0);
        let mut total = 0.0;
        for _ in 0..trials {
            let d: Vec<f64> = (0..m).map(|_| 0.01 * standard_normal(&mut rng)).collect();
            total += potential(&Identity(m), &truth, &obs(d, 0.01)).unwrap();
        }
        let mean = total / trials as f64;
        // sd of the mean is sqrt(M/2 / trials) = 0.11
        assert!((mean - 25.0).abs() < 0.5, "{mean}");
    }

    #[test]
    fn acceptance_probability_bounds() {
        for (a, b) in [
            (0.0, 0.0),
            (1.0, 3.0),
            (3.0, 1.0),
            (1e300, 0.0),
            (0.0, 1e300),
            (2.0, f64::INFINITY),
        ] {
            let r = acceptance_probability(a, b);
            assert!((0.0..=1.0).contains(&r), "{a} {b} {r}");
        }
        assert_eq!(acceptance_probability(5.0, 5.0), 1.0);
        assert_eq!(acceptance_probability(0.0, f64::INFINITY), 0.0);
    }

    #[test]
    fn zero_potential_accepts_every_proposal() {
        let cfg = PcnConfig {
            beta: 0.3,
            n_iter: 500,
            burn_in: 100,
            ..Default::default()
        };
        let r = pcn_chain(
            |_| Ok(0.0),
            &White(4),
            &cfg,
            vec![0.0; 4],
            &mut seeded_rng(1, 0),
        )
        .unwrap();
        assert_eq!(r.accepted, 500);
        assert_eq!(r.acceptance_rate, 1.0);
        assert_eq!(r.retained, 400);
    }

    #[test]
    fn beta_zero_keeps_the_start() {
        let cfg = PcnConfig {
            beta: 0.0,
            n_iter: 50,
            burn_in: 10,
            ..Default::default()
        };
        let start = vec![0.3, -0.2, 1.0];
        let o = obs(vec![5.0, 5.0, 5.0], 0.1);
        let r = pcn_mcmc(
            &Identity(3),
            &o,
            &White(3),
            &cfg,
            start.clone(),
            &mut seeded_rng(1, 0),
        )
        .unwrap();
        assert_eq!(r.final_m, start);
        for ((m, s), a) in r.mean_m.iter().zip(&start).zip([5.3, 4.8, 6.0]) {
            assert!((m - s).abs() < 1e-14);
            assert!((cfg.a0 + s - a).abs() < 1e-14);
        }
        assert_eq!(r.accepted, 50);
    }

    #[test]
    fn non_positive_coefficients_are_rejected() {
        let cfg = PcnConfig {
            beta: 0.9,
            n_iter: 300,
            burn_in: 0,
            a0: 0.2,
            ..Default::default()
        };
        let o = obs(vec![0.2], 10.0);
        let r = pcn_mcmc(
            &Identity(1),
            &o,
            &White(1),
            &cfg,
            vec![0.0],
            &mut seeded_rng(3, 0),
        )
        .unwrap();
        assert!(r.accepted > 0 && r.accepted < 300);
        assert!(r.final_m[0] + 0.2 > cfg.positivity_floor);
    }

    #[test]
    fn prior_is_invariant_under_the_chain() {
        // Stationary start, many short chains, fast mixing: the marginal
        // variance after the run is the prior variance.
        let cfg = PcnConfig {
            beta: 0.5,
            n_iter: 40,
            burn_in: 39,
            ..Default::default()
        };
        let chains = 4000;
        let mut rng = seeded_rng(9, 0);
        let mut ss = [0.0; 2];
        for _ in 0..chains {
            let start = White(2).draw(&mut rng);
            let r = pcn_chain(|_| Ok(0.0), &White(2), &cfg, start, &mut rng).unwrap();
            for (s, v) in ss.iter_mut().zip(&r.final_m) {
                *s += v * v;
            }
        }
        for s in ss {
            let var = s / chains as f64;
            // sd of the estimate is sqrt(2/4000) = 0.022
            assert!((var - 1.0).abs() < 0.1, "{var}");
        }
    }

    #[test]
    fn concentrates_on_the_data() {
        // Gaussian likelihood on a white prior: posterior mean d/(1+σ²)
        let cfg = PcnConfig {
            beta: 0.2,
            n_iter: 60_000,
            burn_in: 10_000,
            a0: 0.0,
            positivity_floor: f64::NEG_INFINITY,
            ..Default::default()
        };
        let o = obs(vec![0.8], 0.5);
        let r = pcn_mcmc(
            &Identity(1),
            &o,
            &White(1),
            &cfg,
            vec![0.0],
            &mut seeded_rng(5, 0),
        )
        .unwrap();
        let exact = 0.8 / (1.0 + 0.25);
        assert!(
            (r.mean_m[0] - exact).abs() < 0.05,
            "{} vs {exact}",
            r.mean_m[0]
        );
    }

    #[test]
    fn forward_failure_keeps_the_position() {
        let cfg = PcnConfig {
            beta: 0.1,
            n_iter: 100,
            burn_in: 10,
            ..Default::default()
        };
        let mut calls = 0;
        let phi = |_: &[f64]| {
            calls += 1;
            if calls > 20 {
                Err(Error::Inversion("boom".into()))
            } else {
                Ok(0.0)
            }
        };
        let r = pcn_chain(phi, &White(2), &cfg, vec![0.0; 2], &mut seeded_rng(1, 0)).unwrap();
        let abort = r.abort.unwrap();
        assert_eq!(abort.step, 20);
        assert_eq!(r.steps, 19);
        assert_eq!(r.retained, 9);
    }
}
