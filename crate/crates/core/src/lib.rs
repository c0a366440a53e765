pub mod agents;
pub mod env;
pub mod error;
pub mod metrics;
pub mod neural;
pub mod plot;
pub mod scenario;
pub mod selftest;
pub mod sim;
pub mod trainer;
