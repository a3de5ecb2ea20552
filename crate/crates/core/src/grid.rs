//! Uniform space and time grids and the nodal fields living on them.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Uniform tensor grid on the unit square, boundary nodes included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid2D {
    nx: usize,
    ny: usize,
}

impl Grid2D {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::Precondition(format!(
                "grid needs at least 3 nodes per axis, got {nx}x{ny}"
            )));
        }
        Ok(Self { nx, ny })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn hx(&self) -> f64 {
        1.0 / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        1.0 / (self.ny - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.hx()
    }

    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.hy()
    }

    /// Row-major flat index of node (i, j): x index fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    /// Node coordinates in flat index order.
    pub fn points(&self) -> Vec<[f64; 2]> {
        let mut pts = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            for i in 0..self.nx {
                pts.push([self.x(i), self.y(j)]);
            }
        }
        pts
    }
}

/// Uniform time levels `t_n = n·τ`, `n = 0 … nt-1`, with `t_{nt-1} = T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nt: usize,
    t_final: f64,
}

impl TimeGrid {
    pub fn new(nt: usize, t_final: f64) -> Result<Self> {
        if nt < 2 {
            return Err(Error::Precondition(format!(
                "need at least 2 time levels, got {nt}"
            )));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::Precondition(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        Ok(Self { nt, t_final })
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn tau(&self) -> f64 {
        self.t_final / (self.nt - 1) as f64
    }

    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.tau()
    }
}

/// Nodal values of a function on a [`Grid2D`], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "field has {} values for a {}x{} grid",
                values.len(),
                grid.nx(),
                grid.ny()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Precondition(format!("non-finite field value {v}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid2D, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny() {
            let y = grid.y(j);
            for i in 0..grid.nx() {
                values.push(f(grid.x(i), y));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Copy with every boundary node set to zero.
    pub fn with_zero_boundary(&self) -> Self {
        let mut out = self.clone();
        for j in 0..self.grid.ny() {
            for i in 0..self.grid.nx() {
                if self.grid.is_boundary(i, j) {
                    out.values[self.grid.index(i, j)] = 0.0;
                }
            }
        }
        out
    }

    /// Bilinear interpolation at an arbitrary point of the unit square.
    pub fn interpolate(&self, x: f64, y: f64) -> f64 {
        let g = self.grid;
        let fx = (x.clamp(0.0, 1.0) / g.hx()).min((g.nx() - 1) as f64);
        let fy = (y.clamp(0.0, 1.0) / g.hy()).min((g.ny() - 1) as f64);
        let i0 = (fx.floor() as usize).min(g.nx() - 2);
        let j0 = (fy.floor() as usize).min(g.ny() - 2);
        let tx = fx - i0 as f64;
        let ty = fy - j0 as f64;
        let v00 = self.at(i0, j0);
        let v10 = self.at(i0 + 1, j0);
        let v01 = self.at(i0, j0 + 1);
        let v11 = self.at(i0 + 1, j0 + 1);
        (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11)
    }

    /// Resample onto another grid by bilinear interpolation.
    pub fn resample(&self, target: Grid2D) -> Self {
        if target == self.grid {
            return self.clone();
        }
        Self::from_fn(target, |x, y| self.interpolate(x, y))
    }
}

/// Space-time nodal field indexed `[time][y][x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    grid: Grid2D,
    time: TimeGrid,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(grid: Grid2D, time: TimeGrid) -> Self {
        Self {
            grid,
            time,
            values: vec![0.0; grid.len() * time.nt()],
        }
    }

    pub fn from_values(grid: Grid2D, time: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * time.nt() {
            return Err(Error::Shape(format!(
                "space-time field needs {} values, got {}",
                grid.len() * time.nt(),
                values.len()
            )));
        }
        Ok(Self { grid, time, values })
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn time(&self) -> TimeGrid {
        self.time
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn level(&self, n: usize) -> &[f64] {
        let m = self.grid.len();
        &self.values[n * m..(n + 1) * m]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut [f64] {
        let m = self.grid.len();
        &mut self.values[n * m..(n + 1) * m]
    }

    pub fn slice(&self, n: usize) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.level(n).to_vec(),
        }
    }

    pub fn terminal(&self) -> ScalarField {
        self.slice(self.time.nt() - 1)
    }

    #[inline]
    pub fn at(&self, n: usize, i: usize, j: usize) -> f64 {
        self.values[n * self.grid.len() + self.grid.index(i, j)]
    }
}
