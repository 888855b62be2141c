//! Channel estimation for IRS-assisted massive MIMO with a CNN trained by
//! federated learning, plus the classical baselines it is compared against.

pub mod acquisition;
pub mod baselines;
pub mod channel;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod federation;
pub mod header;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
