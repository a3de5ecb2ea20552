//! Training data for the three surrogate tasks.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use subdiff::grid::{Grid2D, TimeGrid};
use subdiff::{Error, Result};

/// Which operator is learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// `(α, a) ↦ u(x, y, t)`, a two-branch MIONet.
    AlphaA,
    /// `(a, f) ↦ u(x, y, t)`, a two-branch MIONet.
    AF,
    /// `a ↦ u(x, y, T)`, a DeepONet.
    ATerminal,
}

impl Task {
    pub fn tag(self) -> &'static str {
        match self {
            Self::AlphaA => "alpha_a",
            Self::AF => "a_f",
            Self::ATerminal => "a_terminal",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "alpha_a" => Ok(Self::AlphaA),
            "a_f" => Ok(Self::AF),
            "a_terminal" => Ok(Self::ATerminal),
            other => Err(Error::Precondition(format!(
                "unknown task {other:?} (expected alpha_a, a_f or a_terminal)"
            ))),
        }
    }

    /// Input width of each branch for `sensors` coefficient samples.
    pub fn branch_inputs(self, sensors: usize) -> Vec<usize> {
        match self {
            Self::AlphaA => vec![1, sensors],
            Self::AF => vec![sensors, sensors],
            Self::ATerminal => vec![sensors],
        }
    }

    pub fn trunk_input(self) -> usize {
        match self {
            Self::ATerminal => 2,
            _ => 3,
        }
    }

    pub fn is_space_time(self) -> bool {
        self.trunk_input() == 3
    }
}

/// One input/output pair. Coordinates are shared by the whole dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub alpha: Option<f64>,
    pub a_sensors: Vec<f64>,
    pub f_sensors: Option<Vec<f64>>,
    /// Solution values at every dataset coordinate.
    pub targets: Vec<f64>,
}

impl DatasetRecord {
    fn branch_values(&self, task: Task, branch: usize) -> Result<&[f64]> {
        let missing =
            |what: &str| Error::Precondition(format!("{} record lacks {what}", task.tag()));
        Ok(match (task, branch) {
            (Task::AlphaA, 0) => {
                std::slice::from_ref(self.alpha.as_ref().ok_or_else(|| missing("alpha"))?)
            }
            (Task::AF, 1) => self
                .f_sensors
                .as_deref()
                .ok_or_else(|| missing("f sensors"))?,
            _ => &self.a_sensors,
        })
    }
}

/// Every node of a grid, ordered `[t][y][x]` like the field dumps, as
/// `(x, y, t)` rows; with `time = None` the rows are `(x, y)`.
pub fn grid_coords(grid: Grid2D, time: Option<TimeGrid>) -> Array2<f64> {
    let pts = grid.points();
    match time {
        None => Array2::from_shape_fn((pts.len(), 2), |(r, c)| pts[r][c]),
        Some(tg) => {
            let n = pts.len();
            Array2::from_shape_fn((n * tg.nt(), 3), |(r, c)| match c {
                2 => tg.t(r / n),
                _ => pts[r % n][c],
            })
        }
    }
}

/// The space(-time) grid behind a dataset's coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub nx: usize,
    pub ny: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nt: Option<usize>,
    #[serde(default = "unit")]
    pub t_final: f64,
}

fn unit() -> f64 {
    1.0
}

impl Lattice {
    pub fn new(grid: Grid2D, time: Option<TimeGrid>) -> Self {
        Self {
            nx: grid.nx(),
            ny: grid.ny(),
            nt: time.map(|t| t.nt()),
            t_final: time.map_or(1.0, |t| t.t_final()),
        }
    }

    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::new(self.nx, self.ny)
    }

    pub fn time(&self) -> Result<Option<TimeGrid>> {
        self.nt
            .map(|nt| TimeGrid::new(nt, self.t_final))
            .transpose()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nt.unwrap_or(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self) -> Result<Array2<f64>> {
        Ok(grid_coords(self.grid()?, self.time()?))
    }

    /// Piecewise (bi/tri)linear interpolation of nodal `values` ordered like
    /// [`grid_coords`]; `coord` is `(x, y)` or `(x, y, t)`.
    pub fn interpolate(&self, values: &[f64], coord: &[f64]) -> f64 {
        let locate = |v: f64, n: usize, len: f64| {
            let f = (v.clamp(0.0, len) / len * (n - 1) as f64).min((n - 1) as f64);
            let i = (f.floor() as usize).min(n.saturating_sub(2));
            (i, f - i as f64)
        };
        let (i, tx) = locate(coord[0], self.nx, 1.0);
        let (j, ty) = locate(coord[1], self.ny, 1.0);
        let plane = self.nx * self.ny;
        let bilinear = |level: usize| {
            let v = |di: usize, dj: usize| values[level * plane + (j + dj) * self.nx + i + di];
            (1.0 - ty) * ((1.0 - tx) * v(0, 0) + tx * v(1, 0))
                + ty * ((1.0 - tx) * v(0, 1) + tx * v(1, 1))
        };
        match self.nt {
            Some(nt) if coord.len() > 2 => {
                let (n, tt) = locate(coord[2], nt, self.t_final);
                (1.0 - tt) * bilinear(n) + tt * bilinear(n + 1)
            }
            _ => bilinear(0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OperatorDataset {
    pub task: Task,
    pub coords: Array2<f64>,
    /// Set when the coordinates are every node of a grid.
    pub lattice: Option<Lattice>,
    pub train: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
}

impl OperatorDataset {
    pub fn new(
        task: Task,
        coords: Array2<f64>,
        train: Vec<DatasetRecord>,
        test: Vec<DatasetRecord>,
    ) -> Result<Self> {
        let ds = Self {
            task,
            coords,
            lattice: None,
            train,
            test,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Dataset whose coordinates are the nodes of `lattice`.
    pub fn on_lattice(
        task: Task,
        lattice: Lattice,
        train: Vec<DatasetRecord>,
        test: Vec<DatasetRecord>,
    ) -> Result<Self> {
        let mut ds = Self::new(task, lattice.coords()?, train, test)?;
        ds.lattice = Some(lattice);
        Ok(ds)
    }

    pub fn sensors(&self) -> usize {
        self.train.first().map_or(0, |r| r.a_sensors.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Precondition(
                "dataset has no training records".into(),
            ));
        }
        if self.coords.ncols() != self.task.trunk_input() {
            return Err(Error::Shape(format!(
                "{} coordinates have {} columns, task needs {}",
                self.task.tag(),
                self.coords.ncols(),
                self.task.trunk_input()
            )));
        }
        let dims = self.task.branch_inputs(self.sensors());
        for r in self.train.iter().chain(&self.test) {
            if r.targets.len() != self.coords.nrows() {
                return Err(Error::Shape(format!(
                    "record has {} targets for {} coordinates",
                    r.targets.len(),
                    self.coords.nrows()
                )));
            }
            for (b, &d) in dims.iter().enumerate() {
                if r.branch_values(self.task, b)?.len() != d {
                    return Err(Error::Shape(format!("branch {b} input is not {d} wide")));
                }
            }
        }
        Ok(())
    }

    /// Raw (unnormalized) branch input matrices, one row per record.
    pub fn branch_matrices(&self, records: &[DatasetRecord]) -> Result<Vec<Array2<f64>>> {
        branch_matrices(self.task, records)
    }

    pub fn target_matrix(records: &[DatasetRecord]) -> Array2<f64> {
        let cols = records.first().map_or(0, |r| r.targets.len());
        let mut m = Array2::zeros((records.len(), cols));
        for (i, r) in records.iter().enumerate() {
            m.row_mut(i)
                .iter_mut()
                .zip(&r.targets)
                .for_each(|(d, &s)| *d = s);
        }
        m
    }
}

pub fn branch_matrices(task: Task, records: &[DatasetRecord]) -> Result<Vec<Array2<f64>>> {
    let width = records.first().map_or(0, |r| r.a_sensors.len());
    task.branch_inputs(width)
        .iter()
        .enumerate()
        .map(|(b, &d)| {
            let mut m = Array2::zeros((records.len(), d));
            for (i, r) in records.iter().enumerate() {
                let v = r.branch_values(task, b)?;
                if v.len() != d {
                    return Err(Error::Shape(format!("branch {b} input is not {d} wide")));
                }
                m.row_mut(i)
                    .iter_mut()
                    .zip(v)
                    .for_each(|(dst, &s)| *dst = s);
            }
            Ok(m)
        })
        .collect()
}

/// Per-branch affine input scaling `(v − shift) / scale`, fitted on the
/// training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNormalization {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNormalization {
    pub fn identity(branches: usize) -> Self {
        Self {
            shift: vec![0.0; branches],
            scale: vec![1.0; branches],
        }
    }

    /// Mean and standard deviation of all entries of each branch matrix.
    pub fn fit(inputs: &[Array2<f64>]) -> Self {
        let mut shift = Vec::new();
        let mut scale = Vec::new();
        for m in inputs {
            let n = m.len().max(1) as f64;
            let mean = m.sum() / n;
            let var = m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            shift.push(mean);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { shift, scale }
    }

    pub fn apply(&self, inputs: &[Array2<f64>]) -> Vec<Array2<f64>> {
        inputs
            .iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(m, (&s, &c))| m.mapv(|v| (v - s) / c))
            .collect()
    }
}

/// How network outputs map to solution values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// The network output is the solution.
    None,
    /// Solution = training mean at each lattice node + scale × network output.
    #[default]
    MeanField,
}

/// `u(x) = mean(x) + scale · G(x)`, the mean interpolated on a lattice. The
/// identity has no lattice and unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputNormalization {
    pub lattice: Option<Lattice>,
    pub mean: Vec<f64>,
    pub scale: f64,
}

impl OutputNormalization {
    pub fn identity() -> Self {
        Self {
            lattice: None,
            mean: Vec::new(),
            scale: 1.0,
        }
    }

    /// Nodal mean of the targets and the standard deviation of what is left.
    pub fn fit_mean_field(lattice: Lattice, targets: &Array2<f64>) -> Result<Self> {
        if targets.ncols() != lattice.len() || targets.nrows() == 0 {
            return Err(Error::Shape(format!(
                "{:?} targets for a lattice of {} nodes",
                targets.dim(),
                lattice.len()
            )));
        }
        let mean = targets
            .mean_axis(ndarray::Axis(0))
            .expect("non-empty")
            .to_vec();
        let n = targets.len() as f64;
        let mut ss = 0.0;
        for row in targets.rows() {
            ss += row
                .iter()
                .zip(&mean)
                .map(|(u, m)| (u - m) * (u - m))
                .sum::<f64>();
        }
        let sd = (ss / n).sqrt();
        Ok(Self {
            lattice: Some(lattice),
            mean,
            scale: if sd > 0.0 { sd } else { 1.0 },
        })
    }

    pub fn is_identity(&self) -> bool {
        self.mean.is_empty() && self.scale == 1.0
    }

    /// The mean at arbitrary coordinates.
    pub fn offset(&self, coords: ArrayView2<f64>) -> Vec<f64> {
        match &self.lattice {
            Some(l) if !self.mean.is_empty() => coords
                .rows()
                .into_iter()
                .map(|c| l.interpolate(&self.mean, c.as_slice().expect("contiguous rows")))
                .collect(),
            _ => vec![0.0; coords.nrows()],
        }
    }

    /// Map raw network outputs (`B × P`) to solution values in place.
    pub fn apply(&self, out: &mut Array2<f64>, offset: &[f64]) {
        for mut row in out.rows_mut() {
            row.iter_mut()
                .zip(offset)
                .for_each(|(v, &m)| *v = m + self.scale * *v);
        }
    }
}
