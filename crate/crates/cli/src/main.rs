use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use subdiff_cli::commands::{
    self, ForwardChoice, InvertArgs, Method, Observe, ProblemKind, SolveArgs, TrainArgs,
};
use subdiff_cli::datagen::thread_pool;
use subdiff_cli::error::{config_error, CliResult, Stage};
use subdiff_cli::preset::{Preset, PresetName};
use subdiff_onet::Task;

#[derive(Parser, Debug)]
#[command(
    name = "subdiff",
    version,
    about = "Subdiffusion surrogates and Bayesian inversion"
)]
struct Cli {
    /// TOML or JSON file merged over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// desk (default) or paper.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to every logical core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    task: Option<TaskArg>,
    /// Noise level; replaces the noise rows of the sweeps too.
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// pCN step size.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Training epochs, IREKM iterations or pCN steps.
    #[arg(long, global = true)]
    iters: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    AlphaA,
    AF,
    ATerminal,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::AlphaA => Task::AlphaA,
            TaskArg::AF => Task::AF,
            TaskArg::ATerminal => Task::ATerminal,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProblemArg {
    Smoke,
    Fixed,
    AF,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Irekm,
    Pcn,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ObserveArg {
    Terminal,
    Interior,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the resolved settings.
    Preset,
    /// Solve one forward problem and dump u.
    Solve {
        #[arg(long, value_enum, default_value = "smoke")]
        problem: ProblemArg,
        #[arg(long)]
        alpha: Option<f64>,
        /// Coefficient dump on the solver grid.
        #[arg(long)]
        coefficient: Option<PathBuf>,
        /// Field dump to compare against.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Generate a training/test dataset for --task.
    GenData {
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Train the network of the dataset's task.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// α recovery (irekm) or coefficient recovery (pcn).
    Invert {
        #[arg(long, value_enum)]
        method: MethodArg,
        /// `fdm` or a checkpoint header; repeat for the pcn sweep.
        #[arg(long, default_value = "fdm")]
        forward: Vec<String>,
        #[arg(long, value_enum, default_value = "terminal")]
        observe: ObserveArg,
        /// True order of a single irekm run.
        #[arg(long)]
        alpha: Option<f64>,
        /// Run the whole noise table.
        #[arg(long)]
        sweep: bool,
    },
    /// Time forward evaluations; the first map is the baseline.
    Bench {
        #[arg(long, default_value = "fdm")]
        forward: Vec<String>,
        #[arg(long)]
        n_evals: Option<usize>,
    },
    /// Relative l2 of field A against reference B, plus |A − B|.
    Eval { a: PathBuf, b: PathBuf },
}

fn resolve(cli: &Cli) -> CliResult<Preset> {
    let mut p = match &cli.config {
        Some(path) => Preset::from_file(path).config()?,
        None => Preset::desk(),
    };
    if let Some(name) = &cli.preset {
        let name = PresetName::parse(name).config()?;
        if name != p.name {
            if cli.config.is_some() {
                return Err(config_error(
                    "--preset disagrees with the config file's preset",
                ));
            }
            p = Preset::named(name);
        }
    }
    if let Some(s) = cli.seed {
        p.seed = s;
    }
    if cli.threads.is_some() {
        p.threads = cli.threads;
    }
    if let Some(s) = cli.sigma {
        p.inversion.sigma = s;
        p.inversion.irekm_sigmas = vec![s];
        p.inversion.pcn_sigmas = vec![s];
    }
    if let Some(b) = cli.beta {
        p.inversion.pcn.beta = b;
    }
    if let Some(n) = cli.iters {
        match &cli.command {
            Command::Train { .. } => p.set_epochs(n),
            Command::Invert {
                method: MethodArg::Irekm,
                ..
            } => p.inversion.irekm.max_iter = n,
            Command::Invert {
                method: MethodArg::Pcn,
                ..
            } => {
                // keep the retained fraction of the chain
                let pcn = &mut p.inversion.pcn;
                pcn.burn_in = pcn.burn_in * n / pcn.n_iter.max(1);
                pcn.n_iter = n;
            }
            _ => return Err(config_error("--iters applies to train and invert only")),
        }
    }
    p.validate().config()?;
    Ok(p)
}

fn print<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable summary")
    );
}

fn run(cli: Cli) -> CliResult<()> {
    let p = resolve(&cli)?;
    if p.name == PresetName::Paper {
        eprintln!(
            "warning: the paper preset ({}×{}×{} grid, {}/{} samples) needs roughly {:.0} hours on one core per \
             surrogate; this is not a desk-sized run",
            p.data.n,
            p.data.n,
            p.data.nt,
            p.data.n_train,
            p.data.n_test,
            p.estimated_hours()
        );
    }
    let task = cli.task.map(Task::from);
    let out = cli.out.clone();
    let pool = thread_pool(p.threads).config()?;
    pool.install(|| match cli.command {
        Command::Preset => {
            print(&p);
            Ok(())
        }
        Command::Solve {
            problem,
            alpha,
            coefficient,
            reference,
        } => {
            let problem = match problem {
                ProblemArg::Smoke => ProblemKind::Smoke,
                ProblemArg::Fixed => ProblemKind::Fixed,
                ProblemArg::AF => ProblemKind::AF,
            };
            let args = SolveArgs {
                problem,
                alpha,
                coefficient,
                reference,
                out,
            };
            print(&commands::solve(&p, &args)?);
            Ok(())
        }
        Command::GenData { n_train, n_test } => {
            let task = task.ok_or_else(|| config_error("gen-data needs --task"))?;
            let mut p = p.clone();
            if let Some(n) = n_train {
                p.data.n_train = n;
                p.nets.get_mut(task).n_train = None;
            }
            p.data.n_test = n_test.unwrap_or(p.data.n_test);
            print(&commands::gen_data(&p, task, &out)?);
            Ok(())
        }
        Command::Train { data, resume } => {
            let args = TrainArgs { data, resume, out };
            let summary = commands::train(&p, &args, |r| {
                if let Some(e) = r.test_rel_l2 {
                    eprintln!(
                        "epoch {:>6}  loss {:.4e}  test rel l2 {:.5}",
                        r.epoch, r.train_loss, e
                    );
                }
            })?;
            if let Some(t) = task {
                if t != summary.task {
                    eprintln!(
                        "note: --task {} ignored, the dataset is {}",
                        t.tag(),
                        summary.task.tag()
                    );
                }
            }
            print(&summary);
            Ok(())
        }
        Command::Invert {
            method,
            forward,
            observe,
            alpha,
            sweep,
        } => {
            let args = InvertArgs {
                method: match method {
                    MethodArg::Irekm => Method::Irekm,
                    MethodArg::Pcn => Method::Pcn,
                },
                forward: forward.iter().map(|f| ForwardChoice::parse(f)).collect(),
                observe: match observe {
                    ObserveArg::Terminal => Observe::Terminal,
                    ObserveArg::Interior => Observe::Interior,
                },
                alpha,
                sweep,
                out,
            };
            print(&commands::invert(&p, &args)?);
            Ok(())
        }
        Command::Bench { forward, n_evals } => {
            let forward: Vec<_> = forward.iter().map(|f| ForwardChoice::parse(f)).collect();
            print(&commands::bench(
                &p,
                &forward,
                n_evals.unwrap_or(p.bench_evals),
                &out,
            )?);
            Ok(())
        }
        Command::Eval { a, b } => {
            print(&commands::eval(&a, &b, Some(&out))?);
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("subdiff: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
