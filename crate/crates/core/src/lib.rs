//! Simulated blockchain benchmarking: workload generation against a
//! driver contract, a parameterized chain simulator, and the metrics and
//! reporting built on client-side observation logs.

pub mod bal;
pub mod clock;
pub mod model;
pub mod simchain;
pub mod workload;
pub mod metrics;
pub mod runner;
