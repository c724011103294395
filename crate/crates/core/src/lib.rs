//! Optimistic online control of unknown linear dynamical systems and
//! stochastic convex optimization with a hidden linear transform.

pub mod bench;
pub mod config;
pub mod controller;
pub mod costs;
pub mod dap;
pub mod error;
pub mod estimation;
pub mod io;
pub mod linalg;
pub mod optimism;
pub mod oracle;
pub mod record;
pub mod rng;
pub mod sco;
pub mod solver;
pub mod suite;
pub mod system;

pub use error::{Error, Result};
