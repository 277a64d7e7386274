pub use shrinkflow_core as core;

pub mod artifacts;
pub mod config;
pub mod run;
pub mod verify;
