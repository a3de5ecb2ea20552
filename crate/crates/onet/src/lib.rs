//! Operator-network surrogates for the subdiffusion forward map.

pub mod adam;
pub mod checkpoint;
pub mod data;
pub mod mlp;
pub mod net;
pub mod train;

pub use adam::{AdamConfig, AdamState};
pub use data::{
    grid_coords, DatasetRecord, InputNormalization, Lattice, OperatorDataset, OutputMode,
    OutputNormalization, Task,
};
pub use mlp::{Activation, Mlp};
pub use net::OperatorNet;
pub use train::{train_operator, Architecture, HistoryRow, Surrogate, TrainConfig, Trainer};
