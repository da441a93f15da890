//! Scenario files, the batch episode runner, and the wire bridge that lets
//! an external detector process replace the synthetic one.

pub mod bridge;
pub mod config;
pub mod runner;
