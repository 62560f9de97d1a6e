//! Simulation of a grid-forming PV hydrogen plant whose electrolyzer stack
//! is paired with battery energy storage on a shared DC link.

pub mod config;
pub mod converters;
pub mod engine;
pub mod error;
pub mod fleet;
pub mod linalg;
pub mod modes;
pub mod psd;
pub mod pv;
pub mod scenarios;
pub mod series;
pub mod smallsignal;
pub mod split;
pub mod stack;
pub mod techno;
pub mod units;
pub mod vsm;

pub use error::{Error, Result};
