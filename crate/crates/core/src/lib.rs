pub mod error;
pub mod grid;
pub mod io;
pub mod mittag;
pub mod randfield;
pub mod solver;
pub mod special;

pub use error::{Error, Result};
