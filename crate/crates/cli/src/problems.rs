//! The fixed problem data of the experiments.

use std::f64::consts::PI;

use subdiff::grid::{Grid2D, ScalarField, TimeGrid};
use subdiff::solver::SubdiffusionProblem;

/// `c = −xy − 4`
pub fn reaction(x: f64, y: f64) -> f64 {
    -x * y - 4.0
}

/// `u₀ = 6 sin(2πx) sin(3πy)`
pub fn initial_value(x: f64, y: f64) -> f64 {
    6.0 * (2.0 * PI * x).sin() * (3.0 * PI * y).sin()
}

/// `f = sin(3πx) sin(πy) + 6 exp(x² + y²)`
pub fn source(x: f64, y: f64) -> f64 {
    (3.0 * PI * x).sin() * (PI * y).sin() + 6.0 * (x * x + y * y).exp()
}

/// `u₀ = sin(πx) sin(πy)` of the `(a, f)` task.
pub fn initial_value_af(x: f64, y: f64) -> f64 {
    (PI * x).sin() * (PI * y).sin()
}

/// Problem with the fixed `c`, `u₀`, `f` shared by the `(α, a)` task, the
/// terminal task and every inversion experiment.
pub fn fixed_data_problem(
    grid: Grid2D,
    time: TimeGrid,
    alpha: f64,
    a: ScalarField,
) -> SubdiffusionProblem {
    SubdiffusionProblem {
        alpha,
        a,
        c: ScalarField::from_fn(grid, reaction),
        f: ScalarField::from_fn(grid, source),
        u0: ScalarField::from_fn(grid, initial_value),
        time,
    }
}

/// Problem of the `(a, f)` task: `c = 0`, `u₀ = sin πx sin πy`.
pub fn af_problem(
    time: TimeGrid,
    alpha: f64,
    a: ScalarField,
    f: ScalarField,
) -> SubdiffusionProblem {
    let grid = a.grid();
    SubdiffusionProblem {
        alpha,
        a,
        c: ScalarField::zeros(grid),
        f,
        u0: ScalarField::from_fn(grid, initial_value_af),
        time,
    }
}
