//! Latency-aware perception scheduling for sampled-data stochastic linear
//! control systems.
//!
//! The crate covers exact discretization of the plant under each perception
//! mode ([`linsys`]), Kalman prediction and cost evaluation ([`belief`]),
//! schedule sets and the stability-preserving switching policy
//! ([`schedset`]), admissibility checking of schedule sets ([`admiss`]),
//! dynamic-programming schedule optimization ([`planner`]) and Monte Carlo
//! simulation ([`simlab`]).

pub mod admiss;
pub mod bank;
pub mod belief;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod linsys;
pub mod planner;
pub mod schedset;
pub mod simlab;

pub use error::{Error, Result};
pub use exec::Execution;
