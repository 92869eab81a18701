pub mod baselines;
pub mod data;
pub mod error;
pub mod forensics;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod parallel;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
