//! Presets: every setting of every command, so that (preset, seed) fixes a run.
//!
//! A config file (TOML or JSON) is merged over the named preset key by key,
//! then command-line flags override the result.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datagen::DataSpec;
use subdiff::randfield::RbfPrior;
use subdiff::{Error, Result};
use subdiff_inversion::{DeltaMode, IrekmConfig, PcnConfig};
use subdiff_onet::{Activation, AdamConfig, Architecture, OutputMode, Task, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Desk,
    Paper,
}

impl PresetName {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            other => Err(Error::Precondition(format!(
                "unknown preset {other:?} (desk | paper)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSettings {
    /// Nodes per side of the solver grid.
    pub n: usize,
    pub nt: usize,
    pub t_final: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Nodes per side of the branch-input lattice.
    pub sensors: usize,
    pub prior: RbfPrior,
    pub kl_s: f64,
    pub kl_modes: usize,
    pub alpha_eps: f64,
    pub alpha_parts: usize,
    pub fixed_alpha: f64,
    pub cg_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSettings {
    pub architecture: Architecture,
    pub train: TrainConfig,
    /// Training records for this task when it differs from `data.n_train`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nets {
    pub alpha_a: NetSettings,
    pub a_f: NetSettings,
    pub a_terminal: NetSettings,
}

impl Nets {
    pub fn get(&self, task: Task) -> &NetSettings {
        match task {
            Task::AlphaA => &self.alpha_a,
            Task::AF => &self.a_f,
            Task::ATerminal => &self.a_terminal,
        }
    }

    pub fn get_mut(&mut self, task: Task) -> &mut NetSettings {
        match task {
            Task::AlphaA => &mut self.alpha_a,
            Task::AF => &mut self.a_f,
            Task::ATerminal => &mut self.a_terminal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionSettings {
    /// Noise level of a single inversion run.
    pub sigma: f64,
    /// True orders of the α table.
    pub alpha_truths: Vec<f64>,
    /// Noise rows of the α table.
    pub irekm_sigmas: Vec<f64>,
    /// Noise rows of the coefficient table.
    pub pcn_sigmas: Vec<f64>,
    pub irekm: IrekmConfig,
    pub delta: DeltaMode,
    pub pcn: PcnConfig,
    /// Nodes per side of the lattice carrying the pCN parameter.
    pub pcn_lattice: usize,
    /// Interior observation window `[lo, hi]²`.
    pub window: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: PresetName,
    pub seed: u64,
    /// Worker threads; `None` uses every logical core.
    pub threads: Option<usize>,
    pub data: DataSettings,
    pub nets: Nets,
    pub inversion: InversionSettings,
    /// Forward evaluations per map in `bench`.
    pub bench_evals: usize,
}

fn net(width: usize, depth: usize, activation: Activation, train: TrainConfig) -> NetSettings {
    NetSettings {
        architecture: Architecture {
            branch_hidden: vec![width; depth],
            trunk_hidden: vec![width; depth],
            p: width,
            activation,
        },
        train,
        n_train: None,
    }
}

impl Preset {
    pub fn desk() -> Self {
        // small nets, relu and tiny batches train to the target well inside
        // the time budget. the coefficient inversion is sensitive to the
        // terminal map's error, and terminal records cost one solve each, so
        // that task trades epochs for a much larger training set
        let space_time = TrainConfig {
            adam: AdamConfig::default(),
            epochs: 300,
            batch_size: 4,
            points: Some(256),
            seed: 0,
            eval_every: 50,
            output: OutputMode::MeanField,
        };
        let terminal = TrainConfig {
            epochs: 300,
            points: None,
            eval_every: 100,
            ..space_time.clone()
        };
        Self {
            name: PresetName::Desk,
            seed: 0,
            threads: None,
            data: DataSettings {
                n: 21,
                nt: 26,
                t_final: 1.0,
                n_train: 300,
                n_test: 100,
                sensors: 26,
                prior: RbfPrior::default(),
                kl_s: 2.0,
                kl_modes: 64,
                alpha_eps: 0.001,
                alpha_parts: 20,
                fixed_alpha: 0.5,
                cg_tol: 1e-10,
            },
            nets: Nets {
                alpha_a: net(64, 3, Activation::Relu, space_time.clone()),
                a_f: net(64, 3, Activation::Relu, space_time),
                a_terminal: NetSettings {
                    n_train: Some(2000),
                    ..net(64, 3, Activation::Relu, terminal)
                },
            },
            inversion: InversionSettings {
                sigma: 0.001,
                alpha_truths: (1..=9).map(|k| k as f64 / 10.0).collect(),
                irekm_sigmas: vec![0.001, 0.003],
                pcn_sigmas: vec![0.001, 0.005],
                irekm: IrekmConfig::default(),
                delta: DeltaMode::Synthetic,
                pcn: PcnConfig::default(),
                pcn_lattice: 26,
                window: [0.25, 0.75],
            },
            bench_evals: 20,
        }
    }

    pub fn paper() -> Self {
        let space_time = TrainConfig {
            adam: AdamConfig::default(),
            epochs: 10_000,
            batch_size: 32,
            points: Some(2000),
            seed: 0,
            eval_every: 100,
            output: OutputMode::MeanField,
        };
        let terminal = TrainConfig {
            points: None,
            ..space_time.clone()
        };
        let desk = Self::desk();
        Self {
            name: PresetName::Paper,
            data: DataSettings {
                n: 101,
                nt: 51,
                n_train: 1000,
                n_test: 500,
                sensors: 51,
                ..desk.data
            },
            nets: Nets {
                alpha_a: net(128, 4, Activation::Tanh, space_time.clone()),
                a_f: net(128, 4, Activation::Tanh, space_time),
                a_terminal: net(256, 4, Activation::Tanh, terminal),
            },
            inversion: InversionSettings {
                pcn_lattice: 34,
                ..desk.inversion
            },
            bench_evals: 5,
            ..desk
        }
    }

    pub fn named(name: PresetName) -> Self {
        match name {
            PresetName::Desk => Self::desk(),
            PresetName::Paper => Self::paper(),
        }
    }

    /// The named preset (`preset` key, default desk) with the file's keys
    /// merged over it.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let fail = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let overrides: Value = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| fail(e.to_string()))?,
            _ => serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?,
        };
        Self::merged(overrides).map_err(|e| match e {
            Error::Json(e) => fail(e.to_string()),
            e => e,
        })
    }

    pub fn merged(mut overrides: Value) -> Result<Self> {
        let name = match overrides.as_object_mut().and_then(|o| o.remove("preset")) {
            Some(Value::String(s)) => PresetName::parse(&s)?,
            Some(other) => {
                return Err(Error::Precondition(format!(
                    "preset must be a string, got {other}"
                )))
            }
            None => PresetName::Desk,
        };
        let mut base = serde_json::to_value(Self::named(name))?;
        merge(&mut base, overrides);
        let preset: Self = serde_json::from_value(base)?;
        preset.validate()?;
        Ok(preset)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.n < 3 || d.nt < 2 || d.sensors < 2 {
            return Err(Error::Precondition(
                "grid, time levels or sensor lattice too small".into(),
            ));
        }
        if !(d.t_final > 0.0) {
            return Err(Error::Precondition("final time must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Precondition("threads must be at least 1".into()));
        }
        for task in [Task::AlphaA, Task::AF, Task::ATerminal] {
            let t = &self.nets.get(task).train;
            t.adam.validate()?;
            let zero_records = self.nets.get(task).n_train == Some(0);
            if t.epochs == 0
                || t.batch_size == 0
                || t.points == Some(0)
                || t.eval_every == 0
                || zero_records
            {
                return Err(Error::Precondition(format!(
                    "training settings of {} must be positive",
                    task.tag()
                )));
            }
        }
        let inv = &self.inversion;
        inv.irekm.validate()?;
        inv.pcn.validate()?;
        if !(inv.sigma >= 0.0)
            || inv
                .irekm_sigmas
                .iter()
                .chain(&inv.pcn_sigmas)
                .any(|s| !(*s > 0.0))
        {
            return Err(Error::Precondition("noise levels must be positive".into()));
        }
        if inv.pcn_lattice < 2 || !(inv.window[0] < inv.window[1]) {
            return Err(Error::Precondition(
                "bad pCN lattice or observation window".into(),
            ));
        }
        if self.bench_evals == 0 {
            return Err(Error::Precondition(
                "bench needs at least one evaluation".into(),
            ));
        }
        Ok(())
    }

    pub fn data_spec(&self, task: Task) -> DataSpec {
        let d = &self.data;
        DataSpec {
            task,
            n: d.n,
            nt: d.nt,
            t_final: d.t_final,
            sensors: d.sensors,
            prior: d.prior,
            kl_s: d.kl_s,
            kl_modes: d.kl_modes,
            alpha_eps: d.alpha_eps,
            alpha_parts: d.alpha_parts,
            fixed_alpha: d.fixed_alpha,
            cg_tol: d.cg_tol,
        }
    }

    pub fn net(&self, task: Task) -> &NetSettings {
        self.nets.get(task)
    }

    /// Training records for `task`.
    pub fn n_train(&self, task: Task) -> usize {
        self.nets.get(task).n_train.unwrap_or(self.data.n_train)
    }

    /// Sets the epoch count of every task.
    pub fn set_epochs(&mut self, epochs: usize) {
        for task in [Task::AlphaA, Task::AF, Task::ATerminal] {
            self.nets.get_mut(task).train.epochs = epochs;
        }
    }

    /// Rough single-core wall time of dataset generation plus training for
    /// one space-time task, scaled from desk measurements.
    pub fn estimated_hours(&self) -> f64 {
        let d = &self.data;
        // desk: ~0.03 s per solve, ~0.2 s per epoch
        let nodes = (d.n * d.n) as f64 / 441.0;
        let steps = (d.nt * d.nt) as f64 / 676.0;
        let solve = 0.03 * nodes * steps * (d.n_train + d.n_test) as f64;
        let t = &self.nets.alpha_a;
        let width = t.architecture.p as f64 / 64.0;
        let per_epoch = 0.2
            * (d.n_train as f64 / 300.0)
            * (t.train.points.unwrap_or(d.n * d.n * d.nt) as f64 / 256.0)
            * width
            * width;
        (solve + per_epoch * t.train.epochs as f64) / 3600.0
    }
}

/// Recursive object merge; anything else in `over` replaces `base`.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn presets_validate_and_roundtrip() {
        for p in [Preset::desk(), Preset::paper()] {
            p.validate().unwrap();
            let back: Preset = serde_json::from_value(serde_json::to_value(&p).unwrap()).unwrap();
            assert_eq!(back, p);
        }
        let paper = Preset::paper();
        assert_eq!((paper.data.n, paper.data.nt), (101, 51));
        assert_eq!((paper.data.n_train, paper.data.n_test), (1000, 500));
        assert_eq!(
            paper.nets.a_terminal.architecture.branch_hidden,
            vec![256; 4]
        );
        assert_eq!(paper.nets.alpha_a.train.epochs, 10_000);
        assert!(paper.estimated_hours() > 10.0 * Preset::desk().estimated_hours());
        assert_eq!(paper.n_train(Task::ATerminal), 1000);
        let desk = Preset::desk();
        assert_eq!(
            (desk.n_train(Task::AlphaA), desk.n_train(Task::ATerminal)),
            (300, 2000)
        );
    }

    #[test]
    fn file_keys_merge_over_the_named_preset() {
        let p = Preset::merged(json!({
            "preset": "paper",
            "seed": 7,
            "inversion": {"sigma": 0.003, "pcn": {"beta": 0.01}},
        }))
        .unwrap();
        assert_eq!(p.name, PresetName::Paper);
        assert_eq!(p.seed, 7);
        assert_eq!(p.inversion.sigma, 0.003);
        assert_eq!(p.inversion.pcn.beta, 0.01);
        // untouched keys keep the preset's values
        assert_eq!(p.inversion.pcn.n_iter, 10_000);
        assert_eq!(p.inversion.pcn_lattice, 34);
        assert_eq!(Preset::merged(json!({})).unwrap(), Preset::desk());
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(Preset::merged(json!({"preset": "laptop"})).is_err());
        assert!(Preset::merged(json!({"inversion": {"pcn": {"beta": 1.5}}})).is_err());
        assert!(Preset::merged(json!({"data": {"n": "many"}})).is_err());
        assert!(Preset::merged(json!({"bench_evals": 0})).is_err());
    }

    #[test]
    fn toml_and_json_files() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("run.toml");
        std::fs::write(&t, "seed = 3\n[data]\nn_train = 10\n").unwrap();
        let p = Preset::from_file(&t).unwrap();
        assert_eq!((p.seed, p.data.n_train, p.data.n), (3, 10, 21));
        let j = dir.path().join("run.json");
        std::fs::write(&j, r#"{"threads": 2}"#).unwrap();
        assert_eq!(Preset::from_file(&j).unwrap().threads, Some(2));
        std::fs::write(&j, "{").unwrap();
        assert!(Preset::from_file(&j).is_err());
    }
}
