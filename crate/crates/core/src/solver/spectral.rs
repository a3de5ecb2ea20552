//! Eigen-expansion solution for constant coefficients, used as an analytic
//! reference for the finite-difference solver.
//!
//! With `a`, `c` constant the Dirichlet eigenpairs on the unit square are
//! `φ_{mn} = 2 sin(mπx) sin(nπy)` and `λ_{mn} = a π²(m² + n²) − c`, and
//!
//! ```text
//! u(t) = Σ (u₀,φ) E_α(−λ t^α) φ + Σ (1 − E_α(−λ t^α)) / λ · (f,φ) φ.
//! ```

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::grid::{Grid2D, ScalarField};
use crate::mittag::{mittag_leffler, MLEvalConfig};
use crate::{Error, Result};

/// Coefficient of the basis function `φ_{mn} = 2 sin(mπx) sin(nπy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineMode {
    pub m: u32,
    pub n: u32,
    pub coef: f64,
}

impl SineMode {
    pub fn new(m: u32, n: u32, coef: f64) -> Self {
        Self { m, n, coef }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.coef * basis(self.m, self.n, x, y)
    }
}

/// `φ_{mn}(x, y) = 2 sin(mπx) sin(nπy)`, orthonormal in L²((0,1)²).
pub fn basis(m: u32, n: u32, x: f64, y: f64) -> f64 {
    2.0 * (m as f64 * PI * x).sin() * (n as f64 * PI * y).sin()
}

/// Nodal field of a finite sine expansion.
pub fn modes_to_field(grid: Grid2D, modes: &[SineMode]) -> ScalarField {
    ScalarField::from_fn(grid, |x, y| modes.iter().map(|md| md.eval(x, y)).sum())
}

#[allow(clippy::too_many_arguments)]
pub fn spectral_reference(
    alpha: f64,
    a_const: f64,
    c_const: f64,
    u0_modes: &[SineMode],
    f_modes: &[SineMode],
    t: f64,
    grid: Grid2D,
    cfg: &MLEvalConfig,
) -> Result<ScalarField> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!(
            "fractional order must lie in (0, 1], got {alpha}"
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
    }
    // Combine the two expansions mode by mode.
    let mut coeffs: BTreeMap<(u32, u32), (f64, f64)> = BTreeMap::new();
    for md in u0_modes {
        coeffs.entry((md.m, md.n)).or_default().0 += md.coef;
    }
    for md in f_modes {
        coeffs.entry((md.m, md.n)).or_default().1 += md.coef;
    }
    let mut combined = Vec::with_capacity(coeffs.len());
    for (&(m, n), &(cu, cf)) in &coeffs {
        if m == 0 || n == 0 {
            return Err(Error::Precondition("sine mode indices start at 1".into()));
        }
        let lambda = a_const * PI * PI * ((m * m + n * n) as f64) - c_const;
        if !(lambda > 0.0) {
            return Err(Error::Precondition(format!(
                "eigenvalue λ_{m}{n} = {lambda} is not positive"
            )));
        }
        let e = mittag_leffler(alpha, -lambda * t.powf(alpha), cfg)?;
        combined.push(SineMode::new(m, n, cu * e + (1.0 - e) / lambda * cf));
    }
    Ok(modes_to_field(grid, &combined))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::elliptic::{assemble_elliptic, pcg_shifted, FaceAverage, InteriorMap};
    use crate::solver::relative_l2;

    fn cfg() -> MLEvalConfig {
        MLEvalConfig::default()
    }

    #[test]
    fn initial_time_returns_initial_data() {
        let g = Grid2D::square(9).unwrap();
        let u0 = [SineMode::new(1, 1, 0.5), SineMode::new(2, 3, -1.25)];
        let u = spectral_reference(0.6, 2.0, -1.0, &u0, &[], 0.0, g, &cfg()).unwrap();
        let direct = modes_to_field(g, &u0);
        for (a, b) in u.values().iter().zip(direct.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_modes_give_zero() {
        let g = Grid2D::square(5).unwrap();
        let u = spectral_reference(0.5, 1.0, 0.0, &[], &[], 1.0, g, &cfg()).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_mode_coefficient() {
        let g = Grid2D::square(5).unwrap();
        let u = spectral_reference(
            0.5,
            1.0,
            0.0,
            &[SineMode::new(1, 1, 1.0)],
            &[],
            1.0,
            g,
            &cfg(),
        )
        .unwrap();
        let e = mittag_leffler(0.5, -2.0 * PI * PI, &cfg()).unwrap();
        // node (2,2) is the centre, where φ_11 = 2
        assert!((u.at(2, 2) - 2.0 * e).abs() < 1e-14);
    }

    #[test]
    fn long_time_limit_is_the_elliptic_steady_state() {
        let g = Grid2D::square(41).unwrap();
        let f_modes = [SineMode::new(1, 1, 1.0), SineMode::new(1, 2, 0.3)];
        let (a, c) = (1.5, -2.0);
        let u = spectral_reference(0.5, a, c, &[], &f_modes, 1e6, g, &cfg()).unwrap();

        let mat = assemble_elliptic(
            &ScalarField::constant(g, a),
            &ScalarField::constant(g, c),
            FaceAverage::Arithmetic,
        )
        .unwrap();
        let map = InteriorMap::new(g);
        let rhs = map.restrict(modes_to_field(g, &f_modes).values());
        let mut x = vec![0.0; rhs.len()];
        assert!(pcg_shifted(&mat, 0.0, &rhs, &mut x, 1e-12, 100_000).converged);
        let mut steady = vec![0.0; g.len()];
        map.prolong_into(&x, &mut steady);
        let err = relative_l2(u.values(), &steady).unwrap();
        assert!(err < 5e-3, "relative l2 {err}");
    }

    #[test]
    fn rejects_nonpositive_eigenvalue() {
        let g = Grid2D::square(5).unwrap();
        let r = spectral_reference(
            0.5,
            0.0,
            0.0,
            &[SineMode::new(1, 1, 1.0)],
            &[],
            1.0,
            g,
            &cfg(),
        );
        assert!(matches!(r, Err(Error::Precondition(_))));
    }
}
