//! Benchmark harness: grid execution over seeded instances, CSV artifacts,
//! and certificate auditing.

pub mod audit;
pub mod run;
pub mod spec;

pub use audit::{audit, AuditError, AuditReport};
pub use run::{run, InstanceOutcome, Metrics, ResultRow, RunError, RunOutput};
pub use spec::{parse_config, OracleChoice, RunSpec, Solver, SpecError, ENV_PREFIX};
