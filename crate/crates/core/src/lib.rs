//! Multi-agent reinforcement learning across varying agent counts with a
//! meta-learned communication pattern recognizer.

pub mod autodiff;
pub mod config;
pub mod cpr;
pub mod dist;
pub mod envs;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod nets;
pub mod params;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
