//! Finite-sample checks of the three covariance-sum conditions.
//!
//! Each condition says a ratio of a covariance sum to a power of `|Omega_n|_F`
//! vanishes. The pipeline estimates the sums on a geometric `n` grid and
//! tests the fitted log-log slope of each ratio against a margin `tau`.

mod pipeline;
mod sums;
mod verdict;

pub use pipeline::{
    check_grid, geometric_grid, report_from_points, run_diagnostics, A3Mode, A3Source, AssumptionReport,
    AssumptionVerdict, BinSensitivity, DiagnosticsOptions, GridInstance, GridPoint, GrowthFit, OmegaSource, Ratio,
    MAX_STORED_VALUES, SENSITIVITY_BINS,
};
pub use sums::{
    a1_from_records, a1_sum, a2_from_records, a2_sum, a3_binned, a3_positive_from_records, a3_sum,
    corollary_from_records, corollary_sums, omega_from_records, record, records, CorollarySums, Evaluation, Needs,
    Record, SignMode, SumEstimate, SumOptions, BINNED_MAX_WORK, DEFAULT_S1, DEFAULT_S2, MIN_PER_BIN,
};
pub use verdict::{scaling_verdict, RatioPoint, SignPattern, SlopeVerdict, Verdict, DEFAULT_TAU, MIN_GRID};
