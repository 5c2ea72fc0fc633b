//! Risk-budget receding horizon control for automated vehicles.

pub mod belief;
pub mod cli;
pub mod controller;
pub mod discrete;
pub mod error;
pub mod planner;
pub mod risk;
pub mod scenario;
pub mod sim;
pub mod vehicle;
pub mod verify;

pub use error::{Error, Result};
