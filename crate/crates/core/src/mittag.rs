//! One-parameter Mittag-Leffler function E_{α,1}(z) on the nonpositive real axis.
//!
//! Three evaluation routes are combined:
//!
//! * the Taylor series `Σ z^k / Γ(αk+1)` for small `|z|`, accepted only while
//!   the cancellation estimate `ε·Σ|t_k|` stays below the requested tolerance;
//! * the algebraic asymptotic expansion
//!   `E_{α,1}(-x) ≈ Σ_{k≥1} (-1)^{k-1} x^{-k} / Γ(1-αk)`, truncated at its
//!   smallest term, for large `|z|`;
//! * numerical inversion of the Laplace transform `s^{α-1}/(s^α+1)` along a
//!   parabolic Bromwich contour, which covers the band where neither series
//!   reaches the tolerance in double precision.
//!
//! For `α = 1` the function is `exp(z)` and is evaluated as such.

use num_complex::Complex64;

use crate::special::{ln_gamma, recip_gamma};
use crate::{Error, Result};

/// Evaluation policy for [`mittag_leffler`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MLEvalConfig {
    /// Relative accuracy target.
    pub series_tol: f64,
    /// `|z|` threshold between the power series and the asymptotic expansion.
    pub crossover: f64,
    /// Term cap for either expansion.
    pub max_terms: usize,
}

impl Default for MLEvalConfig {
    fn default() -> Self {
        Self {
            series_tol: 1e-12,
            crossover: 10.0,
            max_terms: 500,
        }
    }
}

impl MLEvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.series_tol > 0.0 && self.series_tol < 1e-6) {
            return Err(Error::Precondition(format!(
                "series_tol must lie in (0, 1e-6), got {}",
                self.series_tol
            )));
        }
        if !(self.crossover > 0.0) {
            return Err(Error::Precondition("crossover must be positive".into()));
        }
        if self.max_terms < 50 {
            return Err(Error::Precondition("max_terms must be at least 50".into()));
        }
        Ok(())
    }
}

/// Which route produced a value; exposed for diagnostics and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MLRoute {
    Series,
    Exponential,
    Asymptotic,
    Contour,
}

fn check_order(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!(
            "Mittag-Leffler order must lie in (0, 1], got {alpha}"
        )));
    }
    Ok(())
}

/// Outcome of summing the Taylor series.
struct SeriesSum {
    value: f64,
    abs_sum: f64,
}

fn series_term(alpha: f64, z: f64, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let kf = k as f64;
    let arg = alpha * kf + 1.0;
    let log_mag = kf * z.abs().ln();
    if log_mag < 600.0 && arg < 170.0 {
        z.powi(k as i32) * recip_gamma(arg)
    } else {
        let sign = if z < 0.0 && k % 2 == 1 { -1.0 } else { 1.0 };
        sign * (log_mag - ln_gamma(arg)).exp()
    }
}

fn sum_series(alpha: f64, z: f64, tol: f64, max_terms: usize) -> Result<SeriesSum> {
    if z == 0.0 {
        return Ok(SeriesSum {
            value: 1.0,
            abs_sum: 1.0,
        });
    }
    let mut sum = 1.0;
    let mut abs_sum = 1.0;
    let mut prev = 1.0_f64;
    for k in 1..=max_terms {
        let term = series_term(alpha, z, k);
        if !term.is_finite() {
            break;
        }
        sum += term;
        abs_sum += term.abs();
        let mag = term.abs();
        if mag <= tol * sum.abs() && mag <= prev {
            return Ok(SeriesSum {
                value: sum,
                abs_sum,
            });
        }
        prev = mag;
    }
    Err(Error::Evaluation {
        what: "Mittag-Leffler power series",
        terms: max_terms,
    })
}

/// Straight Taylor summation of E_{α,1}(z), stopping once a decreasing term
/// drops below `tol` relative to the running sum.
///
/// Accepts any real `z` and any `α ∈ (0, 1]`; no cancellation control is
/// applied, so large negative `z` loses digits.
pub fn mittag_leffler_series(alpha: f64, z: f64, tol: f64) -> Result<f64> {
    check_order(alpha)?;
    if !(tol > 0.0) {
        return Err(Error::Precondition(
            "series tolerance must be positive".into(),
        ));
    }
    sum_series(alpha, z, tol, MLEvalConfig::default().max_terms.max(2000)).map(|s| s.value)
}

/// Optimally truncated asymptotic expansion of E_{α,1}(-x). Returns the sum
/// and the magnitude of the first omitted term as error estimate.
fn asymptotic(alpha: f64, x: f64, max_terms: usize) -> Option<(f64, f64)> {
    let mut sum = 0.0;
    let mut last_mag = f64::INFINITY;
    let mut any_term = false;
    for k in 1..=max_terms {
        let r = recip_gamma(1.0 - alpha * k as f64);
        if r == 0.0 {
            continue;
        }
        let mag = (r.abs().ln() - k as f64 * x.ln()).exp();
        if !mag.is_finite() || mag >= last_mag {
            return any_term.then_some((sum, last_mag.min(mag)));
        }
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        sum += sign * r.signum() * mag;
        last_mag = mag;
        any_term = true;
    }
    any_term.then_some((sum, last_mag))
}

// Parabolic Bromwich contour s(u) = μ(1 + iu)², μ = πN/(12t), step h = 3/N
// (Weideman & Trefethen). Truncation error decays like exp(-2πN/3); the
// contour's growth factor exp(μt) bounds the roundoff, so N stays moderate.
const CONTOUR_NODES: usize = 24;

/// E_{α,1}(-x) for 0 < α < 1 by inverting the Laplace transform of
/// `t ↦ E_{α,1}(-t^α)` at `t = x^{1/α}`.
fn contour(alpha: f64, x: f64) -> f64 {
    let t = x.powf(1.0 / alpha);
    let n = CONTOUR_NODES as f64;
    let h = 3.0 / n;
    let mu = std::f64::consts::PI * n / (12.0 * t);
    let transform = |s: Complex64| s.powf(alpha - 1.0) / (s.powf(alpha) + 1.0);
    let mut acc = 0.0;
    for k in 0..=CONTOUR_NODES {
        let w = Complex64::new(1.0, k as f64 * h);
        let s = mu * w * w;
        let ds = Complex64::new(0.0, 2.0 * mu) * w;
        let term = (s * t).exp() * transform(s) * ds;
        let weight = if k == 0 { 1.0 } else { 2.0 };
        acc += weight * term.im;
    }
    acc * h / (2.0 * std::f64::consts::PI)
}

/// E_{α,1}(z) together with the route that produced it.
pub fn mittag_leffler_with_route(alpha: f64, z: f64, cfg: &MLEvalConfig) -> Result<(f64, MLRoute)> {
    check_order(alpha)?;
    cfg.validate()?;
    if !z.is_finite() {
        return Err(Error::Domain(format!("argument must be finite, got {z}")));
    }
    if z > 0.0 {
        return Err(Error::Domain(format!(
            "only nonpositive arguments are supported, got {z}"
        )));
    }
    if z == 0.0 {
        return Ok((1.0, MLRoute::Series));
    }
    let x = -z;
    if x <= cfg.crossover {
        if let Ok(s) = sum_series(alpha, z, cfg.series_tol * 1e-2, cfg.max_terms) {
            let rounding = 4.0 * f64::EPSILON * s.abs_sum;
            if rounding <= cfg.series_tol * s.value.abs() {
                return Ok((s.value, MLRoute::Series));
            }
        }
    }
    if alpha == 1.0 {
        return Ok((z.exp(), MLRoute::Exponential));
    }
    if x > cfg.crossover {
        if let Some((value, err)) = asymptotic(alpha, x, cfg.max_terms) {
            if err <= cfg.series_tol * value.abs() {
                return Ok((value, MLRoute::Asymptotic));
            }
        }
    }
    let value = contour(alpha, x);
    if value.is_finite() {
        Ok((value, MLRoute::Contour))
    } else {
        Err(Error::Evaluation {
            what: "Mittag-Leffler contour integral",
            terms: CONTOUR_NODES,
        })
    }
}

/// E_{α,1}(z) for `0 < α ≤ 1` and `z ≤ 0`.
pub fn mittag_leffler(alpha: f64, z: f64, cfg: &MLEvalConfig) -> Result<f64> {
    mittag_leffler_with_route(alpha, z, cfg).map(|(v, _)| v)
}

/// Asymptotic expansion alone, for consistency checks against the other
/// routes. Errors if the optimal truncation error exceeds `tol`.
pub fn mittag_leffler_asymptotic(alpha: f64, z: f64, tol: f64, max_terms: usize) -> Result<f64> {
    check_order(alpha)?;
    if !(z < 0.0) {
        return Err(Error::Domain("asymptotic expansion needs z < 0".into()));
    }
    match asymptotic(alpha, -z, max_terms) {
        Some((value, err)) if err <= tol * value.abs() => Ok(value),
        _ => Err(Error::Evaluation {
            what: "Mittag-Leffler asymptotic expansion",
            terms: max_terms,
        }),
    }
}

/// Contour route alone (0 < α < 1, z < 0).
pub fn mittag_leffler_contour(alpha: f64, z: f64) -> Result<f64> {
    check_order(alpha)?;
    if alpha == 1.0 || !(z < 0.0) {
        return Err(Error::Domain(
            "contour route needs 0 < α < 1 and z < 0".into(),
        ));
    }
    Ok(contour(alpha, -z))
}
