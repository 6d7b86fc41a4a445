//! Verification harness: finite-difference gradient checks, optimized versus
//! naive operator sweeps, and the invariant suites.

mod grad;
mod oracle;
mod suite;

pub use grad::{
    evaluation_point, gradcheck, linear_probe, GradCheckCase, GradCheckReport, Offender, TensorCoverage,
    CALIBRATION_VAR_FLOOR,
};
pub use oracle::{oracle_sweep, OpId, OpReport, OracleCase, OracleReport};
pub use suite::{run_invariant_suite, CheckResult, SuiteReport, SUITES};
