//! Parameter-to-observation maps `g = O ∘ F`, by finite differences or by a
//! trained operator network. The inversion algorithms only see [`ForwardMap`].

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::sensors::SensorSet;
use subdiff::grid::{Grid2D, ScalarField};
use subdiff::solver::{solve_levels, SolveOptions, SubdiffusionProblem};
use subdiff::{Error, Result};
use subdiff_onet::{Mlp, Surrogate, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Fdm,
    Surrogate,
}

pub trait ForwardMap: Sync {
    fn kind(&self) -> MapKind;
    /// 1 for the order α, the lattice size for a coefficient field.
    fn input_len(&self) -> usize;
    /// Number of sensor values `M`.
    fn output_len(&self) -> usize;
    fn eval(&self, m: &[f64]) -> Result<Vec<f64>>;
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!(
            "forward map takes {want} inputs, got {got}"
        )));
    }
    Ok(())
}

/// `α ↦ O(u)` with every other datum of `base` held fixed.
pub struct FdmAlphaMap {
    base: SubdiffusionProblem,
    sensors: SensorSet,
    opts: SolveOptions,
    last: usize,
}

impl FdmAlphaMap {
    pub fn new(base: SubdiffusionProblem, sensors: SensorSet, opts: SolveOptions) -> Result<Self> {
        base.validate()?;
        if base.grid() != sensors.grid() || base.time != sensors.time() {
            return Err(Error::Shape(
                "problem and sensors use different grids".into(),
            ));
        }
        let last = *sensors
            .levels()
            .iter()
            .max()
            .expect("sensor set is non-empty");
        Ok(Self {
            base,
            sensors,
            opts,
            last,
        })
    }
}

impl ForwardMap for FdmAlphaMap {
    fn kind(&self) -> MapKind {
        MapKind::Fdm
    }

    fn input_len(&self) -> usize {
        1
    }

    fn output_len(&self) -> usize {
        self.sensors.len()
    }

    fn eval(&self, m: &[f64]) -> Result<Vec<f64>> {
        check_len(m.len(), 1)?;
        let mut p = self.base.clone();
        p.alpha = m[0];
        self.sensors
            .extract(&solve_levels(&p, &self.opts, self.last)?)
    }
}

/// `a ↦ O(u)`: nodal coefficient values on `lattice`, interpolated to the
/// solver grid.
pub struct FdmCoefficientMap {
    base: SubdiffusionProblem,
    lattice: Grid2D,
    sensors: SensorSet,
    opts: SolveOptions,
    last: usize,
}

impl FdmCoefficientMap {
    pub fn new(
        base: SubdiffusionProblem,
        lattice: Grid2D,
        sensors: SensorSet,
        opts: SolveOptions,
    ) -> Result<Self> {
        let inner = FdmAlphaMap::new(base, sensors, opts)?;
        Ok(Self {
            base: inner.base,
            lattice,
            sensors: inner.sensors,
            opts: inner.opts,
            last: inner.last,
        })
    }

    pub fn lattice(&self) -> Grid2D {
        self.lattice
    }
}

impl ForwardMap for FdmCoefficientMap {
    fn kind(&self) -> MapKind {
        MapKind::Fdm
    }

    fn input_len(&self) -> usize {
        self.lattice.len()
    }

    fn output_len(&self) -> usize {
        self.sensors.len()
    }

    fn eval(&self, m: &[f64]) -> Result<Vec<f64>> {
        check_len(m.len(), self.lattice.len())?;
        let a = ScalarField::new(self.lattice, m.to_vec())?;
        let mut p = self.base.clone();
        p.a = a.resample(p.grid());
        self.sensors
            .extract(&solve_levels(&p, &self.opts, self.last)?)
    }
}

#[derive(Debug, Clone)]
enum SurrogateInput {
    Alpha,
    Coefficient {
        lattice: Grid2D,
        sensor_lattice: Grid2D,
    },
}

/// A trained network with all but one branch frozen. The frozen branch
/// outputs and the trunk features at the sensors are folded into one
/// `M × p` matrix, so an evaluation is one branch pass and a mat-vec.
#[derive(Debug, Clone)]
pub struct SurrogateMap {
    input: SurrogateInput,
    branch: Mlp,
    shift: f64,
    scale: f64,
    features: Array2<f64>,
    /// Output mean at the sensors plus the scaled bias.
    offset: Array1<f64>,
}

impl SurrogateMap {
    fn build(
        surrogate: &Surrogate,
        variable: usize,
        fixed: &[(usize, Vec<f64>)],
        sensors: &SensorSet,
        input: SurrogateInput,
    ) -> Result<Self> {
        let task = surrogate.task;
        if !task.is_space_time() && !sensors.is_terminal_only() {
            return Err(Error::Precondition(
                "a terminal-time surrogate can only observe the final level".into(),
            ));
        }
        let net = &surrogate.net;
        let coords = sensors.coords(task.is_space_time());
        let mut features = net.trunk_features(coords.view())?;
        for (b, raw) in fixed {
            let x = Array2::from_shape_vec((1, raw.len()), raw.clone()).expect("row vector");
            let x = x.mapv(|v| (v - surrogate.norm.shift[*b]) / surrogate.norm.scale[*b]);
            let out = net.branches[*b].forward(x.view())?;
            features *= &out.row(0);
        }
        let out = &surrogate.out_norm;
        features *= out.scale;
        let offset = Array1::from(out.offset(coords.view())) + out.scale * net.b0;
        Ok(Self {
            input,
            branch: net.branches[variable].clone(),
            shift: surrogate.norm.shift[variable],
            scale: surrogate.norm.scale[variable],
            features,
            offset,
        })
    }

    /// `α ↦ O(u)` from a `(α, a)` network with `a` fixed at `a_sensors`.
    pub fn alpha(surrogate: &Surrogate, a_sensors: &[f64], sensors: &SensorSet) -> Result<Self> {
        if surrogate.task != Task::AlphaA {
            return Err(Error::Precondition(format!(
                "an α map needs an alpha_a network, got {}",
                surrogate.task.tag()
            )));
        }
        Self::build(
            surrogate,
            0,
            &[(1, a_sensors.to_vec())],
            sensors,
            SurrogateInput::Alpha,
        )
    }

    /// `a ↦ O(u)` from a terminal network, or from a `(α, a)` network with α
    /// fixed. Inputs live on `lattice` and are interpolated to the network's
    /// `sensor_lattice`.
    pub fn coefficient(
        surrogate: &Surrogate,
        fixed_alpha: Option<f64>,
        lattice: Grid2D,
        sensor_lattice: Grid2D,
        sensors: &SensorSet,
    ) -> Result<Self> {
        let want = surrogate.net.branches.last().map(Mlp::input_dim);
        if want != Some(sensor_lattice.len()) {
            return Err(Error::Shape(format!(
                "network reads {want:?} coefficient sensors, lattice has {}",
                sensor_lattice.len()
            )));
        }
        let input = SurrogateInput::Coefficient {
            lattice,
            sensor_lattice,
        };
        match (surrogate.task, fixed_alpha) {
            (Task::ATerminal, None) => Self::build(surrogate, 0, &[], sensors, input),
            (Task::AlphaA, Some(alpha)) => {
                Self::build(surrogate, 1, &[(0, vec![alpha])], sensors, input)
            }
            (task, _) => Err(Error::Precondition(format!(
                "a coefficient map needs a_terminal (no α) or alpha_a (with α), got {}",
                task.tag()
            ))),
        }
    }

    fn branch_input(&self, m: &[f64]) -> Result<Vec<f64>> {
        match &self.input {
            SurrogateInput::Alpha => {
                check_len(m.len(), 1)?;
                Ok(m.to_vec())
            }
            SurrogateInput::Coefficient {
                lattice,
                sensor_lattice,
            } => {
                check_len(m.len(), lattice.len())?;
                Ok(ScalarField::new(*lattice, m.to_vec())?
                    .resample(*sensor_lattice)
                    .into_values())
            }
        }
    }

    /// Branch pass for one input.
    fn code(&self, m: &[f64]) -> Result<Array1<f64>> {
        let raw = self.branch_input(m)?;
        let x = Array2::from_shape_vec((1, raw.len()), raw).expect("row vector");
        let x = x.mapv(|v| (v - self.shift) / self.scale);
        let out = self.branch.forward(ArrayView2::from(&x))?;
        Ok(out.row(0).to_owned())
    }
}

impl ForwardMap for SurrogateMap {
    fn kind(&self) -> MapKind {
        MapKind::Surrogate
    }

    fn input_len(&self) -> usize {
        match &self.input {
            SurrogateInput::Alpha => 1,
            SurrogateInput::Coefficient { lattice, .. } => lattice.len(),
        }
    }

    fn output_len(&self) -> usize {
        self.features.nrows()
    }

    fn eval(&self, m: &[f64]) -> Result<Vec<f64>> {
        let code = self.code(m)?;
        Ok((self.features.dot(&code) + &self.offset).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;
    use subdiff::grid::TimeGrid;
    use subdiff::randfield::seeded_rng;
    use subdiff_onet::{Architecture, InputNormalization, Lattice, OutputNormalization};

    /// Net with non-trivial input and output scaling; the output mean lives on
    /// the 5×5 grid (times `t` for space-time tasks).
    fn surrogate(task: Task, sensors: usize, t: TimeGrid) -> Surrogate {
        let arch = Architecture {
            branch_hidden: vec![6],
            trunk_hidden: vec![5],
            p: 4,
            activation: Default::default(),
        };
        let mut net = arch.build(task, sensors, 3).unwrap();
        net.b0 = 0.3;
        let branches = task.branch_inputs(sensors).len();
        let mut norm = InputNormalization::identity(branches);
        norm.shift[branches - 1] = 5.0;
        norm.scale[branches - 1] = 2.0;
        let g = Grid2D::square(5).unwrap();
        let lattice = Lattice::new(g, task.is_space_time().then_some(t));
        let out_norm = OutputNormalization {
            lattice: Some(lattice),
            mean: (0..lattice.len()).map(|k| (0.7 * k as f64).sin()).collect(),
            scale: 1.7,
        };
        Surrogate {
            task,
            net,
            norm,
            out_norm,
        }
    }

    #[test]
    fn folded_alpha_map_matches_the_network() {
        let g = Grid2D::square(5).unwrap();
        let t = TimeGrid::new(4, 1.0).unwrap();
        let sensors = SensorSet::window(g, t, 0.25, 0.75).unwrap();
        let s = surrogate(Task::AlphaA, 9, t);
        let a: Vec<f64> = (0..9).map(|k| 4.0 + 0.1 * k as f64).collect();
        let map = SurrogateMap::alpha(&s, &a, &sensors).unwrap();
        let alpha = 0.37;
        let direct = s
            .predict(
                &[
                    ndarray::array![[alpha]],
                    Array2::from_shape_vec((1, 9), a).unwrap(),
                ],
                sensors.coords(true).view(),
            )
            .unwrap();
        let folded = map.eval(&[alpha]).unwrap();
        for (x, y) in folded.iter().zip(direct.index_axis(Axis(0), 0)) {
            assert!((x - y).abs() < 1e-13);
        }
        assert_eq!(map.output_len(), sensors.len());
        assert!(map.eval(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn coefficient_map_interpolates_to_the_sensor_lattice() {
        let g = Grid2D::square(5).unwrap();
        let t = TimeGrid::new(3, 1.0).unwrap();
        let sensors = SensorSet::terminal(g, t);
        let lattice = Grid2D::square(4).unwrap();
        let sensor_lattice = Grid2D::square(3).unwrap();
        let s = surrogate(Task::ATerminal, 9, t);
        let map = SurrogateMap::coefficient(&s, None, lattice, sensor_lattice, &sensors).unwrap();
        let mut rng = seeded_rng(1, 0);
        let a: Vec<f64> = (0..16)
            .map(|_| 5.0 + rand::Rng::random::<f64>(&mut rng))
            .collect();
        let on_sensors = ScalarField::new(lattice, a.clone())
            .unwrap()
            .resample(sensor_lattice);
        let direct = s
            .predict(
                &[Array2::from_shape_vec((1, 9), on_sensors.into_values()).unwrap()],
                sensors.coords(false).view(),
            )
            .unwrap();
        let folded = map.eval(&a).unwrap();
        for (x, y) in folded.iter().zip(direct.iter()) {
            assert!((x - y).abs() < 1e-13);
        }
        // wrong task or wrong sensor count
        assert!(
            SurrogateMap::coefficient(&s, Some(0.5), lattice, sensor_lattice, &sensors).is_err()
        );
        assert!(SurrogateMap::coefficient(&s, None, lattice, lattice, &sensors).is_err());
        let window = SensorSet::window(g, t, 0.25, 0.75).unwrap();
        assert!(SurrogateMap::coefficient(&s, None, lattice, sensor_lattice, &window).is_err());
    }
}
