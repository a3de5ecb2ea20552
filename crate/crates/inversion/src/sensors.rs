//! Observation operator: which nodes and time levels are measured, and the
//! noisy data drawn there.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use subdiff::grid::{Grid2D, SpaceTimeField, TimeGrid};
use subdiff::{Error, Result};

/// Sensor values are ordered level by level, nodes in grid order within a
/// level.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSet {
    grid: Grid2D,
    time: TimeGrid,
    levels: Vec<usize>,
    nodes: Vec<usize>,
}

impl SensorSet {
    pub fn new(
        grid: Grid2D,
        time: TimeGrid,
        levels: Vec<usize>,
        nodes: Vec<usize>,
    ) -> Result<Self> {
        if levels.is_empty() || nodes.is_empty() {
            return Err(Error::Precondition("sensor set is empty".into()));
        }
        if let Some(&l) = levels.iter().find(|&&l| l >= time.nt()) {
            return Err(Error::Precondition(format!(
                "time level {l} outside 0..{}",
                time.nt()
            )));
        }
        if let Some(&k) = nodes.iter().find(|&&k| k >= grid.len()) {
            return Err(Error::Precondition(format!(
                "node {k} outside the {} grid nodes",
                grid.len()
            )));
        }
        Ok(Self {
            grid,
            time,
            levels,
            nodes,
        })
    }

    /// Every node at the final time.
    pub fn terminal(grid: Grid2D, time: TimeGrid) -> Self {
        Self {
            grid,
            time,
            levels: vec![time.nt() - 1],
            nodes: (0..grid.len()).collect(),
        }
    }

    /// Nodes with both coordinates in `[lo, hi]`, at every time level.
    pub fn window(grid: Grid2D, time: TimeGrid, lo: f64, hi: f64) -> Result<Self> {
        let eps = 1e-12;
        let inside = |v: f64| v >= lo - eps && v <= hi + eps;
        let nodes = (0..grid.ny())
            .flat_map(|j| (0..grid.nx()).map(move |i| (i, j)))
            .filter(|&(i, j)| inside(grid.x(i)) && inside(grid.y(j)))
            .map(|(i, j)| grid.index(i, j))
            .collect();
        Self::new(grid, time, (0..time.nt()).collect(), nodes)
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn time(&self) -> TimeGrid {
        self.time
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.levels.len() * self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_terminal_only(&self) -> bool {
        self.levels == [self.time.nt() - 1]
    }

    /// Restriction of a solution to the sensors.
    pub fn extract(&self, u: &SpaceTimeField) -> Result<Vec<f64>> {
        if u.grid() != self.grid || u.time() != self.time {
            return Err(Error::Shape(
                "solution grid differs from the sensor grid".into(),
            ));
        }
        Ok(self
            .levels
            .iter()
            .flat_map(|&l| {
                let level = u.level(l);
                self.nodes.iter().map(move |&k| level[k])
            })
            .collect())
    }

    /// Sensor coordinates as `(x, y)` rows, or `(x, y, t)` with `with_time`.
    pub fn coords(&self, with_time: bool) -> Array2<f64> {
        let pts = self.grid.points();
        let cols = if with_time { 3 } else { 2 };
        let n = self.nodes.len();
        Array2::from_shape_fn((self.len(), cols), |(r, c)| {
            let node = self.nodes[r % n];
            match c {
                2 => self.time.t(self.levels[r / n]),
                _ => pts[node][c],
            }
        })
    }
}

/// Data `d = g(m) + η` with `η ∼ N(0, σ² I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub sensors: SensorSet,
    pub data: Vec<f64>,
    pub sigma: f64,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Whitened residual norm `|Σ^{-1/2}(d − g)|`.
    pub fn misfit(&self, g: &[f64]) -> Result<f64> {
        if g.len() != self.data.len() {
            return Err(Error::Shape(format!(
                "prediction has {} values for {} data",
                g.len(),
                self.data.len()
            )));
        }
        if self.sigma <= 0.0 {
            return Err(Error::Precondition(
                "whitened misfit needs sigma > 0".into(),
            ));
        }
        let ss: f64 = self
            .data
            .iter()
            .zip(g)
            .map(|(d, g)| (d - g) * (d - g))
            .sum();
        Ok(ss.sqrt() / self.sigma)
    }
}

pub fn observe(
    u: &SpaceTimeField,
    sensors: &SensorSet,
    sigma: f64,
    rng: &mut impl Rng,
) -> Result<Observation> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Precondition(format!(
            "noise level must be non-negative, got {sigma}"
        )));
    }
    let mut data = sensors.extract(u)?;
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("valid normal");
        data.iter_mut().for_each(|d| *d += noise.sample(rng));
    }
    Ok(Observation {
        sensors: sensors.clone(),
        data,
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use subdiff::randfield::seeded_rng;

    fn field(grid: Grid2D, time: TimeGrid) -> SpaceTimeField {
        let values = (0..grid.len() * time.nt()).map(|k| k as f64).collect();
        SpaceTimeField::from_values(grid, time, values).unwrap()
    }

    #[test]
    fn terminal_and_window_layout() {
        let g = Grid2D::square(5).unwrap();
        let t = TimeGrid::new(3, 1.0).unwrap();
        let u = field(g, t);
        let s = SensorSet::terminal(g, t);
        assert_eq!(s.extract(&u).unwrap(), u.level(2).to_vec());
        assert!(s.is_terminal_only());

        let w = SensorSet::window(g, t, 0.25, 0.75).unwrap();
        assert_eq!(w.nodes().len(), 9);
        assert_eq!(w.len(), 27);
        let d = w.extract(&u).unwrap();
        // second level, first window node (1, 1)
        assert_eq!(d[9], (25 + g.index(1, 1)) as f64);
        let c = w.coords(true);
        assert_eq!(c.row(9).to_vec(), vec![0.25, 0.25, 0.5]);
    }

    #[test]
    fn rejects_bad_indices() {
        let g = Grid2D::square(4).unwrap();
        let t = TimeGrid::new(3, 1.0).unwrap();
        assert!(SensorSet::new(g, t, vec![3], vec![0]).is_err());
        assert!(SensorSet::new(g, t, vec![0], vec![16]).is_err());
        assert!(SensorSet::new(g, t, vec![], vec![1]).is_err());
    }

    #[test]
    fn noiseless_data_is_the_restriction() {
        let g = Grid2D::square(4).unwrap();
        let t = TimeGrid::new(2, 1.0).unwrap();
        let u = field(g, t);
        let s = SensorSet::terminal(g, t);
        let obs = observe(&u, &s, 0.0, &mut seeded_rng(1, 0)).unwrap();
        assert_eq!(obs.data, s.extract(&u).unwrap());
        assert!(observe(&u, &s, -1.0, &mut seeded_rng(1, 0)).is_err());
    }

    #[test]
    fn noise_standard_deviation() {
        // 10⁵ sensors: 2 levels of a 224² grid
        let g = Grid2D::square(224).unwrap();
        let t = TimeGrid::new(2, 1.0).unwrap();
        let u = SpaceTimeField::zeros(g, t);
        let s = SensorSet::new(g, t, vec![0, 1], (0..g.len()).collect()).unwrap();
        assert!(s.len() >= 100_000);
        let sigma = 0.001;
        let obs = observe(&u, &s, sigma, &mut seeded_rng(7, 0)).unwrap();
        let n = obs.len() as f64;
        let mean = obs.data.iter().sum::<f64>() / n;
        let sd = (obs.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd / sigma - 1.0).abs() < 0.02, "sd {sd}");
    }
}
