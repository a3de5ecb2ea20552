//! Checkpoints: `<name>.json` header plus `<name>.params.bin` (and optionally
//! `<name>.mean.bin` and `<name>.adam.bin`) as raw little-endian f64.
//!
//! Parameter order: each branch in turn, then the trunk, then `b0`. Within a
//! network the layers run input to output, each as its weight matrix in
//! row-major `(in × out)` order followed by its bias. The optimizer blob holds
//! the first moments followed by the second moments in the same order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::data::{InputNormalization, Lattice, OutputNormalization, Task};
use crate::mlp::{Activation, Mlp};
use crate::net::OperatorNet;
use crate::train::Surrogate;
use subdiff::io::{read_f64le, read_json, write_f64le, write_json};
use subdiff::{Error, Result};

pub const FORMAT: &str = "subdiff-onet/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetLayout {
    pub branch_widths: Vec<Vec<usize>>,
    pub trunk_widths: Vec<usize>,
    pub activation: Activation,
}

impl NetLayout {
    pub fn of(net: &OperatorNet) -> Self {
        Self {
            branch_widths: net.branches.iter().map(Mlp::widths).collect(),
            trunk_widths: net.trunk.widths(),
            activation: net.trunk.activation,
        }
    }

    pub fn zero_net(&self) -> OperatorNet {
        OperatorNet {
            branches: self
                .branch_widths
                .iter()
                .map(|w| Mlp::zeros(w, self.activation))
                .collect(),
            trunk: Mlp::zeros(&self.trunk_widths, self.activation),
            b0: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRecord {
    pub steps: u64,
    pub config: AdamConfig,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<Lattice>,
    /// Blob with the nodal mean, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub task: Task,
    pub architecture: NetLayout,
    pub param_count: usize,
    /// Side lengths of the coefficient sensor lattice.
    pub sensor_lattice: Option<[usize; 2]>,
    pub normalization: InputNormalization,
    pub output: OutputRecord,
    pub seed: u64,
    pub epochs_trained: usize,
    pub params: String,
    pub optimizer: Option<OptimizerRecord>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub surrogate: Surrogate,
    pub adam: Option<AdamState>,
}

pub struct SaveOptions<'a> {
    pub sensor_lattice: Option<[usize; 2]>,
    pub seed: u64,
    pub epochs_trained: usize,
    pub adam: Option<(&'a AdamState, AdamConfig)>,
    pub meta: serde_json::Value,
}

/// Write `<dir>/<name>.json` and its blobs; returns the header path.
pub fn save_checkpoint(
    dir: &Path,
    name: &str,
    surrogate: &Surrogate,
    opts: SaveOptions<'_>,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let params_file = format!("{name}.params.bin");
    write_f64le(&dir.join(&params_file), &surrogate.net.to_flat())?;
    let optimizer = match opts.adam {
        Some((state, config)) => {
            let file = format!("{name}.adam.bin");
            let mut blob = state.m.clone();
            blob.extend_from_slice(&state.v);
            write_f64le(&dir.join(&file), &blob)?;
            Some(OptimizerRecord {
                steps: state.t,
                config,
                data: file,
            })
        }
        None => None,
    };
    let out = &surrogate.out_norm;
    let mean = if out.mean.is_empty() {
        None
    } else {
        let file = format!("{name}.mean.bin");
        write_f64le(&dir.join(&file), &out.mean)?;
        Some(file)
    };
    let header = CheckpointHeader {
        format: FORMAT.into(),
        task: surrogate.task,
        architecture: NetLayout::of(&surrogate.net),
        param_count: surrogate.net.param_count(),
        sensor_lattice: opts.sensor_lattice,
        normalization: surrogate.norm.clone(),
        output: OutputRecord {
            scale: out.scale,
            lattice: out.lattice,
            mean,
        },
        seed: opts.seed,
        epochs_trained: opts.epochs_trained,
        params: params_file,
        optimizer,
        meta: opts.meta,
    };
    let path = dir.join(format!("{name}.json"));
    write_json(&path, &header)?;
    Ok(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let header: CheckpointHeader = read_json(path)?;
    let fail = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if header.format != FORMAT {
        return Err(fail(format!("unknown checkpoint format {}", header.format)));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut net = header.architecture.zero_net();
    let params = read_f64le(&dir.join(&header.params))?;
    if params.len() != header.param_count || params.len() != net.param_count() {
        return Err(fail(format!(
            "parameter blob holds {} values, architecture needs {}",
            params.len(),
            net.param_count()
        )));
    }
    net.set_flat(&params)?;
    if header.normalization.shift.len() != net.branches.len() {
        return Err(fail("normalization does not match the branch count".into()));
    }
    let adam = match &header.optimizer {
        Some(rec) => {
            let blob = read_f64le(&dir.join(&rec.data))?;
            let n = net.param_count();
            if blob.len() != 2 * n {
                return Err(fail(format!(
                    "optimizer blob holds {} values, expected {}",
                    blob.len(),
                    2 * n
                )));
            }
            Some(AdamState {
                m: blob[..n].to_vec(),
                v: blob[n..].to_vec(),
                t: rec.steps,
            })
        }
        None => None,
    };
    let mean = match &header.output.mean {
        Some(file) => read_f64le(&dir.join(file))?,
        None => Vec::new(),
    };
    match header.output.lattice {
        Some(l) if l.len() != mean.len() => {
            return Err(fail(format!(
                "output mean holds {} values for {} nodes",
                mean.len(),
                l.len()
            )));
        }
        None if !mean.is_empty() => return Err(fail("output mean without a lattice".into())),
        _ => {}
    }
    let surrogate = Surrogate {
        task: header.task,
        net,
        norm: header.normalization.clone(),
        out_norm: OutputNormalization {
            lattice: header.output.lattice,
            mean,
            scale: header.output.scale,
        },
    };
    Ok(Checkpoint {
        header,
        surrogate,
        adam,
    })
}
