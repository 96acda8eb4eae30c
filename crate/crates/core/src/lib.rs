//! Simulated bilateral teleoperation of a three-joint writing robot and
//! multi-rate LSTM imitation learning of the master's response.

pub mod config;
pub mod control;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod models;
pub mod nnet;
pub mod plant;
pub mod signal;
pub mod sim;
pub mod types;

pub use config::Config;
pub use error::{Error, Result};
pub use types::{JointVector, RobotSample, Vec3};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
