//! Conservative five-point discretization of `-∇·(a∇u) - c u` on interior
//! nodes with homogeneous Dirichlet data, plus a Jacobi-preconditioned CG.

use crate::grid::{Grid2D, ScalarField};
use crate::{Error, Result};

/// How the diffusion coefficient is averaged onto cell faces.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum FaceAverage {
    #[default]
    Arithmetic,
    Harmonic,
}

impl FaceAverage {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            FaceAverage::Arithmetic => 0.5 * (a + b),
            FaceAverage::Harmonic => 2.0 * a * b / (a + b),
        }
    }
}

/// Symmetric sparse matrix in CSR layout over the interior unknowns.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .find(|&k| self.cols[k] == r)
                    .map_or(0.0, |k| self.vals[k])
            })
            .collect()
    }

    /// `y = (A + shift·I) x`
    pub fn mul_shifted(&self, shift: f64, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut acc = shift * x[r];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
    }

    pub fn mul(&self, x: &[f64], y: &mut [f64]) {
        self.mul_shifted(0.0, x, y);
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        (self.row_ptr[r]..self.row_ptr[r + 1])
            .find(|&k| self.cols[k] == c)
            .map_or(0.0, |k| self.vals[k])
    }
}

/// Interior-node numbering for a grid: maps flat node index to unknown index.
#[derive(Debug, Clone)]
pub struct InteriorMap {
    grid: Grid2D,
}

impl InteriorMap {
    pub fn new(grid: Grid2D) -> Self {
        Self { grid }
    }

    pub fn len(&self) -> usize {
        (self.grid.nx() - 2) * (self.grid.ny() - 2)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn unknown(&self, i: usize, j: usize) -> usize {
        (j - 1) * (self.grid.nx() - 2) + (i - 1)
    }

    /// Restrict nodal values to interior unknowns.
    pub fn restrict(&self, nodal: &[f64]) -> Vec<f64> {
        let g = self.grid;
        let mut out = Vec::with_capacity(self.len());
        for j in 1..g.ny() - 1 {
            for i in 1..g.nx() - 1 {
                out.push(nodal[g.index(i, j)]);
            }
        }
        out
    }

    /// Scatter interior unknowns into a nodal array; boundary entries are set to 0.
    pub fn prolong_into(&self, interior: &[f64], nodal: &mut [f64]) {
        let g = self.grid;
        nodal.iter_mut().for_each(|v| *v = 0.0);
        let mut k = 0;
        for j in 1..g.ny() - 1 {
            for i in 1..g.nx() - 1 {
                nodal[g.index(i, j)] = interior[k];
                k += 1;
            }
        }
    }
}

/// Assemble the SPD matrix of `-∇·(a∇u) - c u` with Dirichlet rows eliminated.
pub fn assemble_elliptic(
    a: &ScalarField,
    c: &ScalarField,
    average: FaceAverage,
) -> Result<CsrMatrix> {
    let grid = a.grid();
    if c.grid() != grid {
        return Err(Error::Shape("a and c live on different grids".into()));
    }
    if let Some(v) = a.values().iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::Precondition(format!(
            "diffusion coefficient must be positive, found {v}"
        )));
    }
    if let Some(v) = c.values().iter().find(|&&v| v > 0.0) {
        return Err(Error::Precondition(format!(
            "reaction coefficient must be nonpositive, found {v}"
        )));
    }
    let map = InteriorMap::new(grid);
    let (nx, ny) = (grid.nx(), grid.ny());
    let ihx2 = 1.0 / (grid.hx() * grid.hx());
    let ihy2 = 1.0 / (grid.hy() * grid.hy());
    let n = map.len();
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(5 * n);
    let mut vals = Vec::with_capacity(5 * n);
    row_ptr.push(0);
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let ac = a.at(i, j);
            let w = average.apply(ac, a.at(i - 1, j)) * ihx2;
            let e = average.apply(ac, a.at(i + 1, j)) * ihx2;
            let s = average.apply(ac, a.at(i, j - 1)) * ihy2;
            let nn = average.apply(ac, a.at(i, j + 1)) * ihy2;
            let diag = w + e + s + nn - c.at(i, j);
            // column order ascending: south, west, centre, east, north
            if j > 1 {
                cols.push(map.unknown(i, j - 1));
                vals.push(-s);
            }
            if i > 1 {
                cols.push(map.unknown(i - 1, j));
                vals.push(-w);
            }
            cols.push(map.unknown(i, j));
            vals.push(diag);
            if i < nx - 2 {
                cols.push(map.unknown(i + 1, j));
                vals.push(-e);
            }
            if j < ny - 2 {
                cols.push(map.unknown(i, j + 1));
                vals.push(-nn);
            }
            row_ptr.push(cols.len());
        }
    }
    Ok(CsrMatrix {
        n,
        row_ptr,
        cols,
        vals,
    })
}

/// Statistics from one CG solve.
#[derive(Debug, Clone, Copy)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `(A + shift·I) x = b` by Jacobi-preconditioned conjugate gradients,
/// starting from the contents of `x`. Stops at `‖r‖ ≤ tol·‖b‖`.
pub fn pcg_shifted(
    a: &CsrMatrix,
    shift: f64,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> CgReport {
    let n = a.dim();
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / (d + shift)).collect();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return CgReport {
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let mut r = vec![0.0; n];
    a.mul_shifted(shift, x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt() / b_norm;
    let mut it = 0;
    while res > tol && it < max_iter {
        a.mul_shifted(shift, &p, &mut q);
        let step = rz / dot(&p, &q);
        for k in 0..n {
            x[k] += step * p[k];
            r[k] -= step * q[k];
        }
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
        res = dot(&r, &r).sqrt() / b_norm;
        it += 1;
    }
    CgReport {
        iterations: it,
        relative_residual: res,
        converged: res <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn grid(n: usize) -> Grid2D {
        Grid2D::square(n).unwrap()
    }

    #[test]
    fn laplacian_discrete_eigenvalue() {
        let g = grid(17);
        let h = g.hx();
        let a = ScalarField::constant(g, 1.0);
        let c = ScalarField::zeros(g);
        let mat = assemble_elliptic(&a, &c, FaceAverage::Arithmetic).unwrap();
        let map = InteriorMap::new(g);
        let mode = ScalarField::from_fn(g, |x, y| (PI * x).sin() * (PI * y).sin());
        let v = map.restrict(mode.values());
        let mut av = vec![0.0; v.len()];
        mat.mul(&v, &mut av);
        let lambda = 2.0 * 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        for (x, y) in v.iter().zip(&av) {
            assert!(
                (y - lambda * x).abs() < 1e-9 * lambda,
                "{y} vs {}",
                lambda * x
            );
        }
    }

    #[test]
    fn reaction_shifts_the_diagonal() {
        let g = grid(6);
        let a = ScalarField::constant(g, 1.0);
        let lap = assemble_elliptic(&a, &ScalarField::zeros(g), FaceAverage::Arithmetic).unwrap();
        let shifted =
            assemble_elliptic(&a, &ScalarField::constant(g, -4.0), FaceAverage::Arithmetic)
                .unwrap();
        for r in 0..lap.dim() {
            for c in 0..lap.dim() {
                let expect = lap.get(r, c) + if r == c { 4.0 } else { 0.0 };
                assert!((shifted.get(r, c) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_positive_definite_for_random_coefficients() {
        let g = grid(9);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = ScalarField::from_fn(g, |x, y| 1.0 + x * y + 0.5 * (3.0 * x).sin().abs());
        let mat = assemble_elliptic(&a, &ScalarField::zeros(g), FaceAverage::Arithmetic).unwrap();
        for r in 0..mat.dim() {
            for c in 0..mat.dim() {
                assert_eq!(mat.get(r, c), mat.get(c, r));
            }
        }
        for _ in 0..20 {
            let x: Vec<f64> = (0..mat.dim())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let mut ax = vec![0.0; x.len()];
            mat.mul(&x, &mut ax);
            assert!(dot(&x, &ax) > 0.0);
        }
    }

    #[test]
    fn harmonic_average_differs_for_rough_coefficients() {
        let g = grid(5);
        let a = ScalarField::from_fn(g, |x, _| if x < 0.5 { 1.0 } else { 100.0 });
        let c = ScalarField::zeros(g);
        let ar = assemble_elliptic(&a, &c, FaceAverage::Arithmetic).unwrap();
        let hm = assemble_elliptic(&a, &c, FaceAverage::Harmonic).unwrap();
        assert!(ar
            .diagonal()
            .iter()
            .zip(hm.diagonal())
            .any(|(x, y)| (x - y).abs() > 1.0));
    }

    #[test]
    fn rejects_invalid_coefficients() {
        let g = grid(5);
        let mut a = ScalarField::constant(g, 1.0);
        a.values_mut()[7] = 0.0;
        assert!(matches!(
            assemble_elliptic(&a, &ScalarField::zeros(g), FaceAverage::Arithmetic),
            Err(Error::Precondition(_))
        ));
        let c = ScalarField::constant(g, 0.5);
        assert!(
            assemble_elliptic(&ScalarField::constant(g, 1.0), &c, FaceAverage::Arithmetic).is_err()
        );
    }

    #[test]
    fn pcg_solves_poisson() {
        let g = grid(21);
        let a = ScalarField::from_fn(g, |x, y| 2.0 + x - y);
        let mat = assemble_elliptic(&a, &ScalarField::constant(g, -1.0), FaceAverage::Arithmetic)
            .unwrap();
        let xs: Vec<f64> = (0..mat.dim())
            .map(|k| ((k * 7) % 13) as f64 - 6.0)
            .collect();
        let mut b = vec![0.0; xs.len()];
        mat.mul_shifted(3.0, &xs, &mut b);
        let mut x = vec![0.0; xs.len()];
        let rep = pcg_shifted(&mat, 3.0, &b, &mut x, 1e-12, 10_000);
        assert!(rep.converged);
        let err = xs
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "max err {err}");
    }
}
