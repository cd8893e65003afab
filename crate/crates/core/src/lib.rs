pub mod agent;
pub mod buffers;
pub mod config;
pub mod disc;
pub mod env;
pub mod error;
pub mod mine;
pub mod nets;
pub mod penalty;
pub mod report;
pub mod rng;
pub mod trajio;
