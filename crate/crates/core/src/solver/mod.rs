//! Forward solver for the time-fractional subdiffusion problem
//!
//! ```text
//! ∂_t^α u − ∇·(a∇u) − c u = f   in Ω × (0, T]
//! u = 0 on ∂Ω,   u(·, 0) = u₀
//! ```
//!
//! discretized by the L1 scheme in time and a conservative five-point stencil
//! in space. Every implicit step solves the SPD system `(d_α I + A) uⁿ = rhs`
//! with Jacobi-preconditioned CG; the whole history is kept because the
//! Caputo memory term needs every previous level.

pub mod elliptic;
pub mod l1;
pub mod spectral;

pub use elliptic::{assemble_elliptic, pcg_shifted, CgReport, CsrMatrix, FaceAverage, InteriorMap};
pub use l1::{caputo_l1, l1_scale, l1_weights};
pub use spectral::{spectral_reference, SineMode};

use crate::grid::{Grid2D, ScalarField, SpaceTimeField, TimeGrid};
use crate::{Error, Result};

/// All data of one forward problem.
#[derive(Debug, Clone)]
pub struct SubdiffusionProblem {
    pub alpha: f64,
    pub a: ScalarField,
    pub c: ScalarField,
    pub f: ScalarField,
    pub u0: ScalarField,
    pub time: TimeGrid,
}

impl SubdiffusionProblem {
    pub fn grid(&self) -> Grid2D {
        self.a.grid()
    }

    pub fn validate(&self) -> Result<()> {
        l1::check_fractional_order(self.alpha)?;
        let g = self.grid();
        for (name, field) in [("c", &self.c), ("f", &self.f), ("u0", &self.u0)] {
            if field.grid() != g {
                return Err(Error::Shape(format!("{name} is not on the grid of a")));
            }
        }
        if let Some(v) = self.a.values().iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::Precondition(format!(
                "a must be positive, found {v}"
            )));
        }
        if let Some(v) = self.c.values().iter().find(|&&v| v > 0.0) {
            return Err(Error::Precondition(format!(
                "c must be nonpositive, found {v}"
            )));
        }
        Ok(())
    }
}

/// Linear-solver and discretization knobs.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub cg_tol: f64,
    /// Iteration cap is `max_iter_factor · nx · ny`.
    pub max_iter_factor: usize,
    pub face_average: FaceAverage,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            cg_tol: 1e-10,
            max_iter_factor: 10,
            face_average: FaceAverage::Arithmetic,
        }
    }
}

impl SolveOptions {
    pub fn with_tol(cg_tol: f64) -> Self {
        Self {
            cg_tol,
            ..Self::default()
        }
    }
}

/// Solve the full time history with default options and the given CG tolerance.
pub fn solve_subdiffusion_l1(problem: &SubdiffusionProblem, cg_tol: f64) -> Result<SpaceTimeField> {
    solve_with(problem, &SolveOptions::with_tol(cg_tol))
}

pub fn solve_with(problem: &SubdiffusionProblem, opts: &SolveOptions) -> Result<SpaceTimeField> {
    solve_levels(problem, opts, problem.time.nt() - 1)
}

/// March up to (and including) time level `last`. Levels beyond `last` in the
/// returned field are left at zero.
pub fn solve_levels(
    problem: &SubdiffusionProblem,
    opts: &SolveOptions,
    last: usize,
) -> Result<SpaceTimeField> {
    problem.validate()?;
    let grid = problem.grid();
    let time = problem.time;
    if last >= time.nt() {
        return Err(Error::Precondition(format!(
            "level {last} beyond the {} available",
            time.nt()
        )));
    }
    let mat = assemble_elliptic(&problem.a, &problem.c, opts.face_average)?;
    let map = InteriorMap::new(grid);
    let n_unknowns = map.len();
    let b = l1_weights(problem.alpha, time.nt() - 1)?;
    let d = l1_scale(problem.alpha, time.tau());
    let f = map.restrict(problem.f.values());
    let max_iter = opts.max_iter_factor * grid.len();

    let mut history: Vec<Vec<f64>> = Vec::with_capacity(last + 1);
    history.push(map.restrict(problem.u0.values()));
    let mut rhs = vec![0.0; n_unknowns];
    for n in 1..=last {
        // rhs = d [Σ_{j=1}^{n-1} (b_{n-j-1} - b_{n-j}) u^j + b_{n-1} u^0] + f
        for (r, &u0) in rhs.iter_mut().zip(&history[0]) {
            *r = b[n - 1] * u0;
        }
        for (j, uj) in history.iter().enumerate().take(n).skip(1) {
            let w = b[n - j - 1] - b[n - j];
            for (r, &u) in rhs.iter_mut().zip(uj) {
                *r += w * u;
            }
        }
        for (r, &fk) in rhs.iter_mut().zip(&f) {
            *r = d * *r + fk;
        }
        let mut x = history[n - 1].clone();
        let report = pcg_shifted(&mat, d * b[0], &rhs, &mut x, opts.cg_tol, max_iter);
        if !report.converged {
            return Err(Error::Solver {
                level: n,
                iterations: report.iterations,
                residual: report.relative_residual,
            });
        }
        history.push(x);
    }

    let mut out = SpaceTimeField::zeros(grid, time);
    for (n, u) in history.iter().enumerate() {
        map.prolong_into(u, out.level_mut(n));
    }
    Ok(out)
}

/// Relative discrete l2 error `sqrt(Σ|a−r|² / Σ|r|²)`.
pub fn relative_l2(approx: &[f64], reference: &[f64]) -> Result<f64> {
    if approx.len() != reference.len() {
        return Err(Error::Shape(format!(
            "relative l2 of {} values against {}",
            approx.len(),
            reference.len()
        )));
    }
    let (num, den) = approx
        .iter()
        .zip(reference)
        .fold((0.0, 0.0), |(n, d), (a, r)| {
            (n + (a - r) * (a - r), d + r * r)
        });
    if den == 0.0 {
        return Err(Error::Domain("reference field has zero norm".into()));
    }
    Ok((num / den).sqrt())
}
