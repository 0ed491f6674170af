pub mod autodiff;
pub mod checks;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod run;
pub mod train;

pub use error::{Error, Result};
