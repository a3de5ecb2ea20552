//! Bayesian inversion for the subdiffusion model: ensemble Kalman iteration
//! for the fractional order and pCN MCMC for the diffusion coefficient, over
//! interchangeable finite-difference and surrogate forward maps.

pub mod forward;
pub mod irekm;
pub mod pcn;
pub mod sensors;

pub use forward::{FdmAlphaMap, FdmCoefficientMap, ForwardMap, MapKind, SurrogateMap};
pub use irekm::{
    irekm_from, irekm_invert, practical_delta, synthetic_delta, DeltaMode, IrekmConfig, IrekmResult,
};
pub use pcn::{pcn_chain, pcn_mcmc, potential, PcnConfig, PcnResult, PriorSampler};
pub use sensors::{observe, Observation, SensorSet};
