pub mod backend;
pub mod baselines;
pub mod cli;
pub mod domain;
pub mod metrics;
pub mod orchestrator;
pub mod sandbox;
pub mod selection;
pub mod similarity;
