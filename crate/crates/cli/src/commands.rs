//! The commands behind the binary: solve, gen-data, train, invert, bench and
//! eval. Each writes its artifacts under an output directory and returns a
//! summary; timing lives only in `wall_time_seconds` fields and `bench`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datagen::{generate, read_dataset, write_dataset};
use crate::error::{config_error, CliError, CliResult, Stage};
use crate::preset::Preset;
use crate::problems::{af_problem, fixed_data_problem};
use subdiff::grid::{Grid2D, ScalarField, SpaceTimeField, TimeGrid};
use subdiff::io::{
    dump_scalar, dump_spacetime, load_field, write_dump, write_json, FieldManifest, LoadedField,
};
use subdiff::randfield::{sample_kl_laplacian, seeded_rng, GrfSampler, KlPrior};
use subdiff::solver::{relative_l2, solve_with, SolveOptions, SubdiffusionProblem};
use subdiff_inversion::{
    irekm_invert, observe, pcn_mcmc, practical_delta, synthetic_delta, DeltaMode, FdmAlphaMap,
    FdmCoefficientMap, ForwardMap, Observation, SensorSet, SurrogateMap,
};
use subdiff_onet::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, SaveOptions};
use subdiff_onet::{HistoryRow, Task, Trainer};

/// Stream of the coefficient shared by the inversion experiments.
pub const TRUTH_STREAM: u64 = 1 << 48;
/// Noise of experiment `k` uses `NOISE_STREAM + k`.
pub const NOISE_STREAM: u64 = (1 << 48) + (1 << 20);
/// Ensemble or chain of experiment `k` uses `SAMPLER_STREAM + k`.
pub const SAMPLER_STREAM: u64 = (1 << 48) + (1 << 21);
/// Coefficients fed to `bench`.
pub const BENCH_STREAM: u64 = (1 << 48) + (1 << 22);
/// Random data of `solve`.
pub const SOLVE_STREAM: u64 = (1 << 48) + (1 << 23);

fn grid_of(p: &Preset) -> CliResult<(Grid2D, TimeGrid)> {
    Ok((
        Grid2D::square(p.data.n).config()?,
        TimeGrid::new(p.data.nt, p.data.t_final).config()?,
    ))
}

fn opts(p: &Preset) -> SolveOptions {
    SolveOptions::with_tol(p.data.cg_tol)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(e.into()))
}

/// The coefficient every inversion experiment tries to recover.
pub fn experiment_coefficient(p: &Preset) -> CliResult<ScalarField> {
    let (grid, _) = grid_of(p)?;
    GrfSampler::new(grid, p.data.prior)
        .config()?
        .sample(&mut seeded_rng(p.seed, TRUTH_STREAM))
        .config()
}

// ---------------------------------------------------------------- solve

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    /// `a ≡ 1`, `c ≡ 0`, `f ≡ 0`, `u₀ = sin πx sin πy`.
    Smoke,
    /// The fixed `c`, `u₀`, `f` of the `(α, a)` and inversion experiments.
    Fixed,
    /// The `(a, f)` task with a KL source.
    AF,
}

#[derive(Debug, Clone)]
pub struct SolveArgs {
    pub problem: ProblemKind,
    pub alpha: Option<f64>,
    /// Coefficient dump on the solver grid; drawn from the prior otherwise.
    pub coefficient: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub problem: ProblemKind,
    pub alpha: f64,
    pub field: PathBuf,
    pub relative_l2_vs_reference: Option<f64>,
    pub wall_time_seconds: f64,
}

fn read_scalar(path: &Path, grid: Grid2D) -> CliResult<ScalarField> {
    match load_field(path).io()?.1 {
        LoadedField::Scalar(f) if f.grid() == grid => Ok(f),
        _ => Err(config_error(format!(
            "{} is not a scalar field on the {}×{} grid",
            path.display(),
            grid.nx(),
            grid.ny()
        ))),
    }
}

pub fn solve(p: &Preset, args: &SolveArgs) -> CliResult<SolveSummary> {
    let start = Instant::now();
    let (grid, time) = grid_of(p)?;
    let mut rng = seeded_rng(p.seed, SOLVE_STREAM);
    let alpha = args.alpha.unwrap_or(p.data.fixed_alpha);
    let coefficient = |rng: &mut _| -> CliResult<ScalarField> {
        match &args.coefficient {
            Some(path) => read_scalar(path, grid),
            None => GrfSampler::new(grid, p.data.prior)
                .config()?
                .sample(rng)
                .config(),
        }
    };
    let problem = match args.problem {
        ProblemKind::Smoke => {
            let a = match &args.coefficient {
                Some(path) => read_scalar(path, grid)?,
                None => ScalarField::from_fn(grid, |_, _| 1.0),
            };
            SubdiffusionProblem {
                alpha,
                a,
                c: ScalarField::zeros(grid),
                f: ScalarField::zeros(grid),
                u0: ScalarField::from_fn(grid, crate::problems::initial_value_af),
                time,
            }
        }
        ProblemKind::Fixed => fixed_data_problem(grid, time, alpha, coefficient(&mut rng)?),
        ProblemKind::AF => {
            let a = coefficient(&mut rng)?;
            let kl = KlPrior::new(p.data.kl_s, p.data.kl_modes).config()?;
            let f = sample_kl_laplacian(grid, &kl, &mut rng);
            af_problem(time, alpha, a, f)
        }
    };
    problem.validate().config()?;
    let u = solve_with(&problem, &opts(p)).solver()?;
    create_dir(&args.out)?;
    let params = json!({"problem": args.problem, "alpha": alpha, "preset": p.name});
    dump_scalar(&args.out, "a", &problem.a, Some(p.seed), params.clone()).io()?;
    let field = dump_spacetime(&args.out, "u", &u, Some(p.seed), params).io()?;
    let relative_l2_vs_reference = match &args.reference {
        Some(r) => {
            let (_, reference) = load_field(r).io()?;
            Some(relative_l2(u.values(), reference.values()).config()?)
        }
        None => None,
    };
    let summary = SolveSummary {
        problem: args.problem,
        alpha,
        field,
        relative_l2_vs_reference,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&args.out.join("solve.json"), &summary).io()?;
    Ok(summary)
}

// ---------------------------------------------------------------- gen-data

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub task: Task,
    pub n_train: usize,
    pub n_test: usize,
    pub dir: PathBuf,
    pub wall_time_seconds: f64,
}

pub fn gen_data(p: &Preset, task: Task, out: &Path) -> CliResult<GenSummary> {
    let start = Instant::now();
    let spec = p.data_spec(task);
    let (n_train, n_test) = (p.n_train(task), p.data.n_test);
    if n_train == 0 {
        return Err(config_error("dataset needs at least one training record"));
    }
    let ds = generate(&spec, n_train, n_test, p.seed, p.threads).solver()?;
    write_dataset(out, &spec, p.seed, &ds).io()?;
    Ok(GenSummary {
        task,
        n_train,
        n_test,
        dir: out.to_path_buf(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub data: PathBuf,
    /// Continue from this checkpoint instead of a fresh network.
    pub resume: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub task: Task,
    pub checkpoint: PathBuf,
    pub epochs_trained: usize,
    pub final_train_loss: Option<f64>,
    pub final_test_rel_l2: Option<f64>,
    pub wall_time_seconds: f64,
}

pub fn write_history(path: &Path, rows: &[HistoryRow]) -> CliResult<()> {
    let mut w =
        csv::Writer::from_path(path).map_err(|e| CliError::Io(std::io::Error::other(e).into()))?;
    let io = |e: csv::Error| CliError::Io(std::io::Error::other(e).into());
    w.write_record(["epoch", "train_loss", "test_rel_l2"])
        .map_err(io)?;
    for r in rows {
        let test = r.test_rel_l2.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.epoch.to_string(), r.train_loss.to_string(), test])
            .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(e.into()))
}

pub fn train(
    p: &Preset,
    args: &TrainArgs,
    mut on_epoch: impl FnMut(&HistoryRow),
) -> CliResult<TrainSummary> {
    let start = Instant::now();
    let (manifest, ds) = read_dataset(&args.data).io()?;
    let task = ds.task;
    let settings = p.net(task);
    let mut cfg = settings.train.clone();
    cfg.seed = p.seed;
    let mut trainer = match &args.resume {
        None => Trainer::new(&ds, &settings.architecture, cfg.clone()).training()?,
        Some(path) => {
            let ck = load_checkpoint(path).io()?;
            if ck.header.task != task {
                return Err(config_error(format!(
                    "checkpoint is a {} network, dataset is {}",
                    ck.header.task.tag(),
                    task.tag()
                )));
            }
            let adam = ck
                .adam
                .ok_or_else(|| config_error("checkpoint has no optimizer state to resume from"))?;
            cfg.seed = ck.header.seed;
            Trainer {
                surrogate: ck.surrogate,
                adam,
                cfg: cfg.clone(),
                epochs_done: ck.header.epochs_trained,
            }
        }
    };
    let history = trainer.run(&ds, &mut on_epoch).training()?;
    create_dir(&args.out)?;
    write_history(&args.out.join("history.csv"), &history)?;
    let s = manifest.spec.sensors;
    let checkpoint = save_checkpoint(
        &args.out,
        task.tag(),
        &trainer.surrogate,
        SaveOptions {
            sensor_lattice: Some([s, s]),
            seed: cfg.seed,
            epochs_trained: trainer.epochs_done,
            adam: Some((&trainer.adam, cfg.adam)),
            meta: json!({"preset": p.name, "dataset_seed": manifest.seed, "grid": [manifest.spec.n, manifest.spec.nt]}),
        },
    )
    .io()?;
    let summary = TrainSummary {
        task,
        checkpoint,
        epochs_trained: trainer.epochs_done,
        final_train_loss: history.last().map(|r| r.train_loss),
        final_test_rel_l2: history.iter().rev().find_map(|r| r.test_rel_l2),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&args.out.join("train.json"), &summary).io()?;
    Ok(summary)
}

// ---------------------------------------------------------------- forward maps

/// Forward model of an inversion: the finite-difference solver or a trained
/// network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ForwardChoice {
    Fdm,
    Checkpoint(PathBuf),
}

impl ForwardChoice {
    pub fn parse(s: &str) -> Self {
        match s {
            "fdm" => Self::Fdm,
            path => Self::Checkpoint(PathBuf::from(path)),
        }
    }

    fn load(&self) -> CliResult<Option<Checkpoint>> {
        match self {
            Self::Fdm => Ok(None),
            Self::Checkpoint(path) => Ok(Some(load_checkpoint(path).io()?)),
        }
    }
}

fn sensor_lattice(ck: &Checkpoint) -> CliResult<Grid2D> {
    let [nx, ny] = ck
        .header
        .sensor_lattice
        .ok_or_else(|| config_error("checkpoint does not record its sensor lattice"))?;
    Grid2D::new(nx, ny).config()
}

/// Label in the paper's table layout.
fn forward_label(ck: &Option<Checkpoint>) -> String {
    match ck {
        None => "MCMC+FDM".into(),
        Some(c) if c.header.task == Task::ATerminal => "MCMC+G_NN^a".into(),
        Some(c) => format!("MCMC+G_NN^({})", c.header.task.tag().replace('_', ",")),
    }
}

/// `α ↦ O(u)` with `a` fixed.
fn alpha_map(
    p: &Preset,
    ck: &Option<Checkpoint>,
    a: &ScalarField,
    sensors: &SensorSet,
) -> CliResult<Box<dyn ForwardMap>> {
    let (grid, time) = grid_of(p)?;
    Ok(match ck {
        None => {
            let base = fixed_data_problem(grid, time, p.data.fixed_alpha, a.clone());
            Box::new(FdmAlphaMap::new(base, sensors.clone(), opts(p)).config()?)
        }
        Some(ck) => {
            let a_sensors = a.resample(sensor_lattice(ck)?).into_values();
            Box::new(SurrogateMap::alpha(&ck.surrogate, &a_sensors, sensors).config()?)
        }
    })
}

/// `a ↦ O(u)` with α fixed, the coefficient given on `lattice`.
fn coefficient_map(
    p: &Preset,
    ck: &Option<Checkpoint>,
    lattice: Grid2D,
    sensors: &SensorSet,
) -> CliResult<Box<dyn ForwardMap>> {
    let (grid, time) = grid_of(p)?;
    let alpha = p.data.fixed_alpha;
    Ok(match ck {
        None => {
            let base = fixed_data_problem(
                grid,
                time,
                alpha,
                ScalarField::from_fn(grid, |_, _| p.data.prior.a0),
            );
            Box::new(FdmCoefficientMap::new(base, lattice, sensors.clone(), opts(p)).config()?)
        }
        Some(ck) => {
            let fixed = (ck.header.task == Task::AlphaA).then_some(alpha);
            Box::new(
                SurrogateMap::coefficient(
                    &ck.surrogate,
                    fixed,
                    lattice,
                    sensor_lattice(ck)?,
                    sensors,
                )
                .config()?,
            )
        }
    })
}

// ---------------------------------------------------------------- invert

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Irekm,
    Pcn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Observe {
    /// Every node at the final time.
    Terminal,
    /// Nodes in the interior window at every time level.
    Interior,
}

#[derive(Debug, Clone)]
pub struct InvertArgs {
    pub method: Method,
    pub forward: Vec<ForwardChoice>,
    pub observe: Observe,
    /// True order for a single `irekm` run.
    pub alpha: Option<f64>,
    /// Run the noise × truth (irekm) or noise × forward (pcn) table.
    pub sweep: bool,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionReport {
    pub method: Method,
    pub forward_map: String,
    pub label: String,
    pub observe: Observe,
    pub sigma: f64,
    pub data_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub discrepancy_trace: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub potential_trace: Vec<(usize, f64)>,
    pub estimate_file: Option<PathBuf>,
    pub relative_l2_vs_truth: f64,
    pub wall_time_seconds: f64,
}

fn noisy_data(
    p: &Preset,
    u: &SpaceTimeField,
    sensors: &SensorSet,
    sigma: f64,
    k: u64,
) -> CliResult<Observation> {
    observe(u, sensors, sigma, &mut seeded_rng(p.seed, NOISE_STREAM + k)).config()
}

/// One α recovery from terminal data. `k` numbers the experiment's streams.
pub fn run_irekm(
    p: &Preset,
    forward: &ForwardChoice,
    truth: f64,
    sigma: f64,
    k: u64,
    out: Option<&Path>,
) -> CliResult<InversionReport> {
    let start = Instant::now();
    let (grid, time) = grid_of(p)?;
    let a = experiment_coefficient(p)?;
    let sensors = SensorSet::terminal(grid, time);
    let u = solve_with(&fixed_data_problem(grid, time, truth, a.clone()), &opts(p)).solver()?;
    let obs = noisy_data(p, &u, &sensors, sigma, k)?;
    let ck = forward.load()?;
    let map = alpha_map(p, &ck, &a, &sensors)?;
    let delta = match p.inversion.delta {
        // realized noise norm: measured against the data generator, not the map being inverted
        DeltaMode::Synthetic => {
            let fdm = alpha_map(p, &None, &a, &sensors)?;
            synthetic_delta(fdm.as_ref(), &obs, &[truth]).inversion()?
        }
        DeltaMode::Practical => practical_delta(&obs),
    };
    let cfg = &p.inversion.irekm;
    let r = irekm_invert(
        map.as_ref(),
        &obs,
        cfg,
        delta,
        &mut seeded_rng(p.seed, SAMPLER_STREAM + k),
    )
    .inversion()?;
    let estimate_file = match out {
        Some(dir) => {
            // terminal solution at the recovered order, next to the truth's
            let fit =
                solve_with(&fixed_data_problem(grid, time, r.estimate, a), &opts(p)).solver()?;
            let params = json!({"alpha": r.estimate, "truth_alpha": truth, "sigma": sigma});
            dump_scalar(
                dir,
                "u_terminal_truth",
                &u.terminal(),
                Some(p.seed),
                json!({"alpha": truth}),
            )
            .io()?;
            Some(
                dump_scalar(
                    dir,
                    "u_terminal_estimate",
                    &fit.terminal(),
                    Some(p.seed),
                    params,
                )
                .io()?,
            )
        }
        None => None,
    };
    Ok(InversionReport {
        method: Method::Irekm,
        forward_map: format!("{:?}", map.kind()).to_lowercase(),
        label: forward_label(&ck).replace("MCMC", "IREKM"),
        observe: Observe::Terminal,
        sigma,
        data_count: obs.len(),
        truth_alpha: Some(truth),
        estimate_alpha: Some(r.estimate),
        delta: Some(delta),
        iterations: Some(r.iterations),
        converged: Some(r.converged),
        warning: r.warning.clone(),
        discrepancy_trace: r.history.iter().map(|s| s.discrepancy).collect(),
        samples: None,
        acceptance_rate: None,
        potential_trace: Vec::new(),
        estimate_file,
        relative_l2_vs_truth: (r.estimate - truth).abs() / truth,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

/// One coefficient recovery; α is the preset's fixed order.
pub fn run_pcn(
    p: &Preset,
    forward: &ForwardChoice,
    observe_mode: Observe,
    sigma: f64,
    k: u64,
    out: Option<&Path>,
) -> CliResult<InversionReport> {
    let start = Instant::now();
    let (grid, time) = grid_of(p)?;
    let truth = experiment_coefficient(p)?;
    let sensors = match observe_mode {
        Observe::Terminal => SensorSet::terminal(grid, time),
        Observe::Interior => {
            let [lo, hi] = p.inversion.window;
            SensorSet::window(grid, time, lo, hi).config()?
        }
    };
    let u = solve_with(
        &fixed_data_problem(grid, time, p.data.fixed_alpha, truth.clone()),
        &opts(p),
    )
    .solver()?;
    let obs = noisy_data(p, &u, &sensors, sigma, k)?;
    let ck = forward.load()?;
    let lattice = Grid2D::square(p.inversion.pcn_lattice).config()?;
    let map = coefficient_map(p, &ck, lattice, &sensors)?;
    let prior = GrfSampler::new(lattice, p.data.prior).config()?;
    let mut cfg = p.inversion.pcn.clone();
    cfg.a0 = p.data.prior.a0;
    let r = pcn_mcmc(
        map.as_ref(),
        &obs,
        &prior,
        &cfg,
        vec![0.0; lattice.len()],
        &mut seeded_rng(p.seed, SAMPLER_STREAM + k),
    )
    .inversion()?;
    if let Some(abort) = &r.abort {
        return Err(CliError::Inversion(subdiff::Error::Inversion(format!(
            "chain stopped at step {}: {}",
            abort.step, abort.reason
        ))));
    }
    let estimate = ScalarField::new(lattice, r.mean_a.clone()).config()?;
    let on_grid = estimate.resample(grid);
    let rel = relative_l2(on_grid.values(), truth.values()).config()?;
    let estimate_file = match out {
        Some(dir) => {
            let params =
                json!({"sigma": sigma, "forward": forward_label(&ck), "observe": observe_mode});
            dump_scalar(dir, "a_truth", &truth, Some(p.seed), json!({})).io()?;
            dump_scalar(
                dir,
                "a_estimate_grid",
                &on_grid,
                Some(p.seed),
                params.clone(),
            )
            .io()?;
            Some(dump_scalar(dir, "a_estimate", &estimate, Some(p.seed), params).io()?)
        }
        None => None,
    };
    Ok(InversionReport {
        method: Method::Pcn,
        forward_map: format!("{:?}", map.kind()).to_lowercase(),
        label: forward_label(&ck),
        observe: observe_mode,
        sigma,
        data_count: obs.len(),
        truth_alpha: None,
        estimate_alpha: None,
        delta: None,
        iterations: None,
        converged: None,
        warning: None,
        discrepancy_trace: Vec::new(),
        samples: Some(r.retained),
        acceptance_rate: Some(r.acceptance_rate),
        potential_trace: r.potential_trace.clone(),
        estimate_file,
        relative_l2_vs_truth: rel,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let io = |e: csv::Error| CliError::Io(std::io::Error::other(e).into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(e.into()))
}

/// Runs the requested inversion(s); returns every report written.
pub fn invert(p: &Preset, args: &InvertArgs) -> CliResult<Vec<InversionReport>> {
    if args.forward.is_empty() {
        return Err(config_error("no forward map given"));
    }
    create_dir(&args.out)?;
    let inv = &p.inversion;
    let mut reports = Vec::new();
    match (args.method, args.sweep) {
        (Method::Irekm, false) => {
            if args.observe != Observe::Terminal {
                return Err(config_error("the α inversion uses terminal data"));
            }
            let truth = args.alpha.unwrap_or(0.5);
            reports.push(run_irekm(
                p,
                &args.forward[0],
                truth,
                inv.sigma,
                0,
                Some(&args.out),
            )?);
        }
        (Method::Pcn, false) => {
            reports.push(run_pcn(
                p,
                &args.forward[0],
                args.observe,
                inv.sigma,
                0,
                Some(&args.out),
            )?);
        }
        (Method::Irekm, true) => {
            // rows: noise levels, columns: true orders
            let mut header = vec!["sigma".to_string()];
            header.extend(inv.alpha_truths.iter().map(|a| a.to_string()));
            let mut rows = Vec::new();
            let mut k = 0;
            for &sigma in &inv.irekm_sigmas {
                let mut row = vec![sigma.to_string()];
                for &truth in &inv.alpha_truths {
                    let r = run_irekm(p, &args.forward[0], truth, sigma, k, None)?;
                    row.push(format!("{:.4}", r.estimate_alpha.unwrap_or(f64::NAN)));
                    reports.push(r);
                    k += 1;
                }
                rows.push(row);
            }
            write_table(&args.out.join("table_alpha.csv"), &header, &rows)?;
        }
        (Method::Pcn, true) => {
            // rows: noise levels, columns: forward maps
            let mut columns = Vec::new();
            let mut grid: Vec<Vec<String>> =
                inv.pcn_sigmas.iter().map(|s| vec![s.to_string()]).collect();
            for fwd in &args.forward {
                for (i, &sigma) in inv.pcn_sigmas.iter().enumerate() {
                    // same noise draw for every forward map at a given σ
                    let r = run_pcn(p, fwd, args.observe, sigma, i as u64, None)?;
                    if i == 0 {
                        columns.push(r.label.clone());
                    }
                    grid[i].push(format!("{:.6}", r.relative_l2_vs_truth));
                    reports.push(r);
                }
            }
            let mut header = vec!["sigma".to_string()];
            header.extend(columns);
            write_table(&args.out.join("table_coefficient.csv"), &header, &grid)?;
        }
    }
    write_json(&args.out.join("report.json"), &reports).io()?;
    Ok(reports)
}

// ---------------------------------------------------------------- bench

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub total_seconds: f64,
    pub per_eval_seconds: f64,
    /// `time(baseline) / time(method)`, the baseline being the first row.
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub n_evals: usize,
    pub grid: [usize; 3],
    pub hardware: String,
    pub rows: Vec<BenchRow>,
}

pub fn hardware_note() -> String {
    let cores = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    format!(
        "{} {} / {} logical cores",
        std::env::consts::ARCH,
        std::env::consts::OS,
        cores
    )
}

/// Times `n_evals` evaluations of each map on the same inputs.
pub fn bench_maps(
    maps: &[(String, &dyn ForwardMap)],
    inputs: &[Vec<f64>],
) -> CliResult<Vec<BenchRow>> {
    if inputs.is_empty() {
        return Err(config_error("bench needs n_evals > 0"));
    }
    let mut rows: Vec<BenchRow> = Vec::new();
    for (label, map) in maps {
        let start = Instant::now();
        for m in inputs {
            std::hint::black_box(map.eval(m).solver()?);
        }
        let total = start.elapsed().as_secs_f64();
        let base = rows.first().map_or(total, |r| r.total_seconds);
        rows.push(BenchRow {
            method: label.clone(),
            total_seconds: total,
            per_eval_seconds: total / inputs.len() as f64,
            speedup: base / total,
        });
    }
    Ok(rows)
}

/// Terminal coefficient-to-data maps, the first one being the baseline.
pub fn bench(
    p: &Preset,
    forward: &[ForwardChoice],
    n_evals: usize,
    out: &Path,
) -> CliResult<BenchReport> {
    if n_evals == 0 {
        return Err(config_error("bench needs n_evals > 0"));
    }
    if forward.is_empty() {
        return Err(config_error("no forward map given"));
    }
    let (grid, time) = grid_of(p)?;
    let sensors = SensorSet::terminal(grid, time);
    let lattice = Grid2D::square(p.inversion.pcn_lattice).config()?;
    let prior = GrfSampler::new(lattice, p.data.prior).config()?;
    let mut rng = seeded_rng(p.seed, BENCH_STREAM);
    let inputs: Vec<Vec<f64>> = (0..n_evals)
        .map(|_| prior.sample(&mut rng).map(ScalarField::into_values))
        .collect::<subdiff::Result<_>>()
        .config()?;
    let mut maps = Vec::new();
    for f in forward {
        let ck = f.load()?;
        let label = forward_label(&ck);
        maps.push((label, coefficient_map(p, &ck, lattice, &sensors)?));
    }
    let refs: Vec<(String, &dyn ForwardMap)> =
        maps.iter().map(|(l, m)| (l.clone(), m.as_ref())).collect();
    let rows = bench_maps(&refs, &inputs)?;
    let report = BenchReport {
        n_evals,
        grid: [grid.nx(), grid.ny(), time.nt()],
        hardware: hardware_note(),
        rows,
    };
    create_dir(out)?;
    write_json(&out.join("bench.json"), &report).io()?;
    let header: Vec<String> = ["method", "seconds", "per_eval_seconds", "speedup"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                format!("{:.4}", r.total_seconds),
                format!("{:.6}", r.per_eval_seconds),
                format!("{:.1}", r.speedup),
            ]
        })
        .collect();
    write_table(&out.join("table_timing.csv"), &header, &rows)?;
    Ok(report)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub relative_l2: f64,
    pub max_abs_error: f64,
    pub error_field: Option<PathBuf>,
}

/// `|a − b| / |b|`, plus the pointwise `|a − b|` on b's grid.
pub fn eval(a: &Path, b: &Path, out: Option<&Path>) -> CliResult<EvalSummary> {
    let (ma, fa) = load_field(a).io()?;
    let (mb, fb) = load_field(b).io()?;
    if ma.shape != mb.shape {
        return Err(config_error(format!(
            "shapes differ: {:?} vs {:?}",
            ma.shape, mb.shape
        )));
    }
    let rel = relative_l2(fa.values(), fb.values()).config()?;
    let err: Vec<f64> = fa
        .values()
        .iter()
        .zip(fb.values())
        .map(|(x, y)| (x - y).abs())
        .collect();
    let max_abs_error = err.iter().fold(0.0_f64, |m, &e| m.max(e));
    let error_field = match out {
        Some(dir) => {
            let m = FieldManifest {
                name: "error".into(),
                data: "error.bin".into(),
                params: json!({"a": a, "b": b, "relative_l2": rel}),
                seed: None,
                ..mb
            };
            Some(write_dump(dir, &m, &err).io()?)
        }
        None => None,
    };
    Ok(EvalSummary {
        relative_l2: rel,
        max_abs_error,
        error_field,
    })
}

/// Dataset directory produced by `gen-data` for `task` under `root`.
pub fn dataset_dir(root: &Path, task: Task) -> PathBuf {
    root.join(format!("data_{}", task.tag()))
}

/// Reads the test records' mean relative l2 for a checkpoint on a dataset.
pub fn checkpoint_test_error(checkpoint: &Path, data: &Path) -> CliResult<f64> {
    let ck = load_checkpoint(checkpoint).io()?;
    let (_, ds) = read_dataset(data).io()?;
    if ds.test.is_empty() {
        return Err(config_error("dataset has no test records"));
    }
    ck.surrogate
        .mean_relative_l2(&ds.test, ds.coords.view())
        .training()
}
