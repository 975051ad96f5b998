pub mod agents;
pub mod config;
pub mod energetics;
pub mod experiment;
pub mod io;
pub mod kinetics;
pub mod lattice;
pub mod metrics;
pub mod reweight;
pub mod rng;
pub mod stats;
pub mod training;
pub mod trajectory;
pub mod verify;
