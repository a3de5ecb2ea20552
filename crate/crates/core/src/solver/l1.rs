//! L1 quadrature weights for the Caputo derivative of order α ∈ (0, 1).

use crate::special::gamma;
use crate::{Error, Result};

pub(crate) fn check_fractional_order(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "fractional order must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// `b_j = (j+1)^{1-α} - j^{1-α}` for `j = 0 … n-1`.
pub fn l1_weights(alpha: f64, n: usize) -> Result<Vec<f64>> {
    check_fractional_order(alpha)?;
    if n == 0 {
        return Err(Error::Precondition("need at least one L1 weight".into()));
    }
    let p = 1.0 - alpha;
    Ok((0..n)
        .map(|j| ((j + 1) as f64).powf(p) - (j as f64).powf(p))
        .collect())
}

/// Scaling `d_α = τ^{-α} / Γ(2-α)` in front of the L1 sum.
pub fn l1_scale(alpha: f64, tau: f64) -> f64 {
    tau.powf(-alpha) / gamma(2.0 - alpha)
}

/// L1 approximation of the Caputo derivative at level `n` of a scalar history
/// `u[0..=n]`, used by tests on closed-form functions.
pub fn caputo_l1(alpha: f64, tau: f64, history: &[f64]) -> Result<f64> {
    let n = history.len() - 1;
    let b = l1_weights(alpha, n.max(1))?;
    let mut acc = 0.0;
    for j in 0..n {
        acc += b[j] * (history[n - j] - history[n - j - 1]);
    }
    Ok(l1_scale(alpha, tau) * acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_weights() {
        assert_eq!(l1_weights(0.37, 1).unwrap(), vec![1.0]);
        let b = l1_weights(0.5, 2).unwrap();
        assert!((b[1] - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        assert!((b[1] - 0.414_213_56).abs() < 1e-8);
    }

    #[test]
    fn decreasing_positive_sequence() {
        let b = l1_weights(0.3, 10).unwrap();
        // direct evaluation of the formula
        for (j, &w) in b.iter().enumerate() {
            let expect = ((j + 1) as f64).powf(0.7) - (j as f64).powf(0.7);
            assert_eq!(w, expect);
            assert!(w > 0.0);
        }
        assert!(b.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn rejects_bad_order() {
        assert!(l1_weights(0.0, 3).is_err());
        assert!(l1_weights(1.0, 3).is_err());
        assert!(l1_weights(0.5, 0).is_err());
    }

    #[test]
    fn caputo_of_linear_function_is_exact() {
        // D^α t = t^{1-α}/Γ(2-α); L1 is exact for piecewise linear data.
        let alpha = 0.4;
        let tau = 0.05;
        let hist: Vec<f64> = (0..=20).map(|n| n as f64 * tau).collect();
        let approx = caputo_l1(alpha, tau, &hist).unwrap();
        let exact = 1.0_f64.powf(1.0 - alpha) / gamma(2.0 - alpha);
        assert!((approx - exact).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn weights_telescope(alpha in 0.01f64..0.99, n in 1usize..400) {
            let b = l1_weights(alpha, n).unwrap();
            let total: f64 = b.iter().sum();
            let exact = (n as f64).powf(1.0 - alpha);
            prop_assert!((total - exact).abs() <= 1e-12 * exact);
            prop_assert!(b.windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
        }
    }
}
