//! Classical simulation and statistical verification of random
//! multi-controlled circuits that thermalize bits and signs of subset phase
//! states.
//!
//! The crate is organized bottom-up: [`f2linalg`] and [`circuit`] are the
//! data layer, [`algorithms`] builds random circuits, [`copysim`] and
//! [`subsetstate`] run them, and [`stats`] and [`analysis`] judge the
//! results. The `pseudotherm` binary wraps everything in [`cli`].

pub mod algorithms;
pub mod analysis;
pub mod circuit;
pub mod cli;
pub mod copysim;
pub mod error;
pub mod f2linalg;
pub mod rng;
pub mod stats;
pub mod subsetstate;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
