pub mod cli;
pub mod discourse;
pub mod engagement;
pub mod engine;
pub mod metrics;
pub mod protocol;
pub mod recipe;
pub mod scenario;
pub mod sensorimotor;
pub mod session;
pub mod stats;
pub mod world;
