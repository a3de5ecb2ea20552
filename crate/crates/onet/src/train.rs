//! Minibatch Adam training of an operator network and the trained surrogate.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::data::{
    branch_matrices, DatasetRecord, InputNormalization, OperatorDataset, OutputMode,
    OutputNormalization, Task,
};
use crate::mlp::Activation;
use crate::net::OperatorNet;
use subdiff::randfield::seeded_rng;
use subdiff::solver::relative_l2;
use subdiff::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    pub p: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl Architecture {
    /// Four hidden layers of 128 in every net.
    pub fn paper() -> Self {
        Self {
            branch_hidden: vec![128; 4],
            trunk_hidden: vec![128; 4],
            p: 128,
            activation: Activation::Tanh,
        }
    }

    pub fn build(&self, task: Task, sensors: usize, seed: u64) -> Result<OperatorNet> {
        let widths = |input: usize, hidden: &[usize]| {
            let mut w = vec![input];
            w.extend_from_slice(hidden);
            w.push(self.p);
            w
        };
        let branches: Vec<Vec<usize>> = task
            .branch_inputs(sensors)
            .into_iter()
            .map(|d| widths(d, &self.branch_hidden))
            .collect();
        let trunk = widths(task.trunk_input(), &self.trunk_hidden);
        OperatorNet::new(&branches, &trunk, self.activation, &mut seeded_rng(seed, 0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Coordinates drawn per minibatch; `None` uses every coordinate.
    pub points: Option<usize>,
    pub seed: u64,
    /// Test error is evaluated every this many epochs (and at the last one).
    pub eval_every: usize,
    #[serde(default)]
    pub output: OutputMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            epochs: 10_000,
            batch_size: 32,
            points: Some(2000),
            seed: 0,
            eval_every: 100,
            output: OutputMode::MeanField,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size == 0 || self.eval_every == 0 || self.points == Some(0) {
            return Err(Error::Precondition(format!(
                "invalid training settings {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_rel_l2: Option<f64>,
}

/// A network together with the input and output scaling it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub task: Task,
    pub net: OperatorNet,
    pub norm: InputNormalization,
    pub out_norm: OutputNormalization,
}

impl Surrogate {
    pub fn normalize(&self, raw: &[Array2<f64>]) -> Vec<Array2<f64>> {
        self.norm.apply(raw)
    }

    /// Predictions (`B × P`) from raw branch inputs.
    pub fn predict(&self, raw: &[Array2<f64>], coords: ArrayView2<f64>) -> Result<Array2<f64>> {
        let x = self.normalize(raw);
        let views: Vec<_> = x.iter().map(|m| m.view()).collect();
        let mut out = self.net.forward(&views, coords)?;
        self.out_norm.apply(&mut out, &self.out_norm.offset(coords));
        Ok(out)
    }

    pub fn predict_records(
        &self,
        records: &[DatasetRecord],
        coords: ArrayView2<f64>,
    ) -> Result<Array2<f64>> {
        self.predict(&branch_matrices(self.task, records)?, coords)
    }

    /// Mean over records of the relative l2 error on all coordinates.
    pub fn mean_relative_l2(
        &self,
        records: &[DatasetRecord],
        coords: ArrayView2<f64>,
    ) -> Result<f64> {
        if records.is_empty() {
            return Err(Error::Precondition("no records to evaluate".into()));
        }
        let mut total = 0.0;
        // chunks keep the prediction matrix small on large grids
        for chunk in records.chunks(16) {
            let pred = self.predict_records(chunk, coords)?;
            for (row, r) in pred.axis_iter(Axis(0)).zip(chunk) {
                total += relative_l2(row.as_slice().unwrap(), &r.targets)?;
            }
        }
        Ok(total / records.len() as f64)
    }
}

/// Training state that can be checkpointed and resumed.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub surrogate: Surrogate,
    pub adam: AdamState,
    pub cfg: TrainConfig,
    pub epochs_done: usize,
}

impl Trainer {
    pub fn new(dataset: &OperatorDataset, arch: &Architecture, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        dataset.validate()?;
        let net = arch.build(dataset.task, dataset.sensors(), cfg.seed)?;
        let norm = InputNormalization::fit(&dataset.branch_matrices(&dataset.train)?);
        let out_norm = match cfg.output {
            OutputMode::None => OutputNormalization::identity(),
            OutputMode::MeanField => {
                let lattice = dataset.lattice.ok_or_else(|| {
                    Error::Precondition(
                        "mean-field output scaling needs a dataset on a lattice".into(),
                    )
                })?;
                OutputNormalization::fit_mean_field(
                    lattice,
                    &OperatorDataset::target_matrix(&dataset.train),
                )?
            }
        };
        let adam = AdamState::new(net.param_count());
        Ok(Self {
            surrogate: Surrogate {
                task: dataset.task,
                net,
                norm,
                out_norm,
            },
            adam,
            cfg,
            epochs_done: 0,
        })
    }

    /// Run epochs until `cfg.epochs` have been done in total. Each epoch
    /// draws from its own random stream, so a resumed run continues exactly
    /// where an uninterrupted one would be.
    pub fn run(
        &mut self,
        dataset: &OperatorDataset,
        mut on_epoch: impl FnMut(&HistoryRow),
    ) -> Result<Vec<HistoryRow>> {
        if dataset.task != self.surrogate.task {
            return Err(Error::Precondition(
                "dataset task differs from the network task".into(),
            ));
        }
        let inputs = self
            .surrogate
            .normalize(&dataset.branch_matrices(&dataset.train)?);
        // the network fits (u − mean) / scale; the reported loss is in u units
        let out = &self.surrogate.out_norm;
        let offset = out.offset(dataset.coords.view());
        let mut targets = OperatorDataset::target_matrix(&dataset.train);
        for mut row in targets.rows_mut() {
            row.iter_mut()
                .zip(&offset)
                .for_each(|(u, m)| *u = (*u - m) / out.scale);
        }
        let loss_scale = out.scale * out.scale;
        let n = dataset.train.len();
        let total_points = dataset.coords.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        let mut history = Vec::new();
        let mut params = self.surrogate.net.to_flat();

        while self.epochs_done < self.cfg.epochs {
            let epoch = self.epochs_done + 1;
            let mut rng = seeded_rng(self.cfg.seed, epoch as u64);
            order.sort_unstable();
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            let mut batches = 0;
            for batch in order.chunks(self.cfg.batch_size) {
                let cols: Option<Vec<usize>> = match self.cfg.points {
                    Some(p) if p < total_points => {
                        Some(index::sample(&mut rng, total_points, p).into_vec())
                    }
                    _ => None,
                };
                let x: Vec<Array2<f64>> = inputs.iter().map(|m| m.select(Axis(0), batch)).collect();
                let y_rows = targets.select(Axis(0), batch);
                let (coords, y) = match &cols {
                    Some(c) => (dataset.coords.select(Axis(0), c), y_rows.select(Axis(1), c)),
                    None => (dataset.coords.clone(), y_rows),
                };
                let views: Vec<_> = x.iter().map(|m| m.view()).collect();
                let (loss, grad) =
                    self.surrogate
                        .net
                        .loss_and_grad(&views, coords.view(), y.view())?;
                if !loss.is_finite() {
                    return Err(Error::Training { epoch, loss });
                }
                self.adam
                    .step(&mut params, &grad.to_flat(), &self.cfg.adam)?;
                self.surrogate.net.set_flat(&params)?;
                loss_sum += loss * loss_scale;
                batches += 1;
            }
            self.epochs_done = epoch;
            let evaluate = !dataset.test.is_empty()
                && (epoch % self.cfg.eval_every == 0 || epoch == self.cfg.epochs);
            let test_rel_l2 = if evaluate {
                Some(
                    self.surrogate
                        .mean_relative_l2(&dataset.test, dataset.coords.view())?,
                )
            } else {
                None
            };
            let row = HistoryRow {
                epoch,
                train_loss: loss_sum / batches as f64,
                test_rel_l2,
            };
            on_epoch(&row);
            history.push(row);
        }
        Ok(history)
    }
}

/// Train from scratch for `cfg.epochs` epochs.
pub fn train_operator(
    dataset: &OperatorDataset,
    arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<(Surrogate, Vec<HistoryRow>)> {
    let mut trainer = Trainer::new(dataset, arch, cfg.clone())?;
    let history = trainer.run(dataset, |_| {})?;
    Ok((trainer.surrogate, history))
}
