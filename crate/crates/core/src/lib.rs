//! Simulation and estimation toolkit for supercritical oriented percolation
//! on `Z^d x N`: exact and log-domain open-path counting, essential hitting
//! times, regenerating sequences and growth-rate estimators.

pub mod config;
pub mod counting;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod hitting;
pub mod oracle;
pub mod stats;

pub use config::{Environment, LatticeParams, Point, Site, TranslationVector};
pub use error::{Error, Result};
