//! Dataset generation for the three surrogate tasks and its on-disk layout.
//!
//! A dataset directory holds `dataset.json` plus row-major f64le blobs:
//! `alpha.bin` (`N`), `a_sensors.bin` (`N × S`), `f_sensors.bin` (`N × S`,
//! `a_f` only) and `targets.bin` (`N × P`). Rows are the training records
//! followed by the test records; coordinates are rebuilt from the grid.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::problems::{af_problem, fixed_data_problem};
use subdiff::grid::{Grid2D, ScalarField, TimeGrid};
use subdiff::io::{read_f64le, read_json, write_f64le, write_json};
use subdiff::randfield::{
    sample_alpha, sample_kl_laplacian, seeded_rng, GrfSampler, KlPrior, RbfPrior,
};
use subdiff::solver::{solve_with, SolveOptions};
use subdiff::{Error, Result};
use subdiff_onet::{DatasetRecord, Lattice, OperatorDataset, Task};

/// Record streams live above the low stream numbers used for training epochs,
/// so one seed can drive both without reusing a stream.
pub const RECORD_STREAM_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub task: Task,
    pub n: usize,
    pub nt: usize,
    pub t_final: f64,
    pub sensors: usize,
    pub prior: RbfPrior,
    pub kl_s: f64,
    pub kl_modes: usize,
    pub alpha_eps: f64,
    pub alpha_parts: usize,
    /// Order used by the tasks that do not vary α.
    pub fixed_alpha: f64,
    pub cg_tol: f64,
}

impl DataSpec {
    pub fn grid(&self) -> Result<Grid2D> {
        Grid2D::square(self.n)
    }

    pub fn time(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.nt, self.t_final)
    }

    pub fn sensor_grid(&self) -> Result<Grid2D> {
        Grid2D::square(self.sensors)
    }

    /// Output nodes: the solver grid, times the time levels for space-time tasks.
    pub fn lattice(&self) -> Result<Lattice> {
        let time = self.task.is_space_time().then(|| self.time()).transpose()?;
        Ok(Lattice::new(self.grid()?, time))
    }
}

/// Everything needed to draw records; built once and shared by the workers.
pub struct Generator {
    spec: DataSpec,
    grid: Grid2D,
    time: TimeGrid,
    sensors: Grid2D,
    grf: GrfSampler,
    kl: Option<KlPrior>,
    opts: SolveOptions,
}

impl Generator {
    pub fn new(spec: DataSpec) -> Result<Self> {
        let grid = spec.grid()?;
        let grf = GrfSampler::new(grid, spec.prior)?;
        let kl = match spec.task {
            Task::AF => Some(KlPrior::new(spec.kl_s, spec.kl_modes)?),
            _ => None,
        };
        Ok(Self {
            grid,
            time: spec.time()?,
            sensors: spec.sensor_grid()?,
            grf,
            kl,
            opts: SolveOptions::with_tol(spec.cg_tol),
            spec,
        })
    }

    pub fn spec(&self) -> &DataSpec {
        &self.spec
    }

    /// Record `k` of the dataset drawn with `seed`.
    pub fn record(&self, seed: u64, k: u64) -> Result<DatasetRecord> {
        let mut rng = seeded_rng(seed, RECORD_STREAM_BASE + k);
        let s = &self.spec;
        let alpha = match s.task {
            Task::AlphaA => sample_alpha(s.alpha_eps, s.alpha_parts, &mut rng)?,
            _ => s.fixed_alpha,
        };
        let a = self.grf.sample(&mut rng)?;
        let a_sensors = a.resample(self.sensors).into_values();
        let (problem, f_sensors) = match (&s.task, &self.kl) {
            (Task::AF, Some(kl)) => {
                let f = sample_kl_laplacian(self.grid, kl, &mut rng);
                let fs = f.resample(self.sensors).into_values();
                (af_problem(self.time, alpha, a, f), Some(fs))
            }
            _ => (fixed_data_problem(self.grid, self.time, alpha, a), None),
        };
        let u = solve_with(&problem, &self.opts)?;
        let targets = match s.task {
            Task::ATerminal => u.terminal().into_values(),
            _ => u.into_values(),
        };
        Ok(DatasetRecord {
            alpha: (s.task == Task::AlphaA).then_some(alpha),
            a_sensors,
            f_sensors,
            targets,
        })
    }

    /// The coefficient of record `k` on the solver grid (same draw as `record`).
    pub fn coefficient(&self, seed: u64, k: u64) -> Result<ScalarField> {
        let mut rng = seeded_rng(seed, RECORD_STREAM_BASE + k);
        if self.spec.task == Task::AlphaA {
            sample_alpha(self.spec.alpha_eps, self.spec.alpha_parts, &mut rng)?;
        }
        self.grf.sample(&mut rng)
    }
}

pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        b = b.num_threads(t);
    }
    b.build()
        .map_err(|e| Error::Precondition(format!("thread pool: {e}")))
}

/// Draw `n_train + n_test` records in parallel; record `k` always uses stream
/// `k`, so the result does not depend on the pool size.
pub fn generate(
    spec: &DataSpec,
    n_train: usize,
    n_test: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<OperatorDataset> {
    if n_train == 0 {
        return Err(Error::Precondition("n_train must be positive".into()));
    }
    let gen = Generator::new(spec.clone())?;
    let pool = thread_pool(threads)?;
    let total = (n_train + n_test) as u64;
    let mut records: Vec<DatasetRecord> = pool.install(|| {
        (0..total)
            .into_par_iter()
            .map(|k| gen.record(seed, k))
            .collect::<Result<Vec<_>>>()
    })?;
    let test = records.split_off(n_train);
    OperatorDataset::on_lattice(spec.task, spec.lattice()?, records, test)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub spec: DataSpec,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// Random stream of each record, training records first.
    pub record_streams: Vec<u64>,
    pub points: usize,
    pub sensor_count: usize,
}

pub const DATASET_FORMAT: &str = "subdiff-dataset/1";

fn flatten<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    rows.flat_map(|r| r.iter().copied()).collect()
}

pub fn write_dataset(dir: &Path, spec: &DataSpec, seed: u64, ds: &OperatorDataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let all: Vec<&DatasetRecord> = ds.train.iter().chain(&ds.test).collect();
    if spec.task == Task::AlphaA {
        let alpha: Vec<f64> = all.iter().map(|r| r.alpha.unwrap_or(f64::NAN)).collect();
        write_f64le(&dir.join("alpha.bin"), &alpha)?;
    }
    write_f64le(
        &dir.join("a_sensors.bin"),
        &flatten(all.iter().map(|r| r.a_sensors.as_slice())),
    )?;
    if spec.task == Task::AF {
        let f = flatten(all.iter().map(|r| r.f_sensors.as_deref().unwrap_or(&[])));
        write_f64le(&dir.join("f_sensors.bin"), &f)?;
    }
    write_f64le(
        &dir.join("targets.bin"),
        &flatten(all.iter().map(|r| r.targets.as_slice())),
    )?;
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        spec: spec.clone(),
        seed,
        n_train: ds.train.len(),
        n_test: ds.test.len(),
        record_streams: (0..all.len() as u64)
            .map(|k| RECORD_STREAM_BASE + k)
            .collect(),
        points: ds.coords.nrows(),
        sensor_count: ds.sensors(),
    };
    write_json(&dir.join("dataset.json"), &manifest)
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, OperatorDataset)> {
    let path = dir.join("dataset.json");
    let m: DatasetManifest = read_json(&path)?;
    let fail = |reason: String| Error::Format {
        path: path.clone(),
        reason,
    };
    if m.format != DATASET_FORMAT {
        return Err(fail(format!("unknown dataset format {}", m.format)));
    }
    let n = m.n_train + m.n_test;
    let s = m.sensor_count;
    let chunks = |name: &str, width: usize| -> Result<Vec<Vec<f64>>> {
        let v = read_f64le(&dir.join(name))?;
        if v.len() != n * width {
            return Err(Error::Format {
                path: dir.join(name),
                reason: format!("{} values, expected {n} × {width}", v.len()),
            });
        }
        Ok(v.chunks(width.max(1)).map(<[f64]>::to_vec).collect())
    };
    let task = m.spec.task;
    let alpha = match task {
        Task::AlphaA => Some(chunks("alpha.bin", 1)?),
        _ => None,
    };
    let a = chunks("a_sensors.bin", s)?;
    let f = match task {
        Task::AF => Some(chunks("f_sensors.bin", s)?),
        _ => None,
    };
    let targets = chunks("targets.bin", m.points)?;
    let mut records: Vec<DatasetRecord> = a
        .into_iter()
        .zip(targets)
        .enumerate()
        .map(|(k, (a_sensors, targets))| DatasetRecord {
            alpha: alpha.as_ref().map(|v| v[k][0]),
            a_sensors,
            f_sensors: f.as_ref().map(|v| v[k].clone()),
            targets,
        })
        .collect();
    let test = records.split_off(m.n_train);
    let ds = OperatorDataset::on_lattice(task, m.spec.lattice()?, records, test)?;
    Ok((m, ds))
}
