pub mod bucketing;
pub mod data;
pub mod error;
pub mod model;
pub mod numerics;
pub mod oracles;
pub mod periodicity;
pub mod pna;
pub mod presets;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
