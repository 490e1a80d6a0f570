//! Same-set versus hold-out experiments and their Monte-Carlo summaries.

pub mod dkw;
pub mod estimate;
pub mod replication;
pub mod report;
pub mod spec;
pub mod sup;

pub use dkw::{dkw_violation_rate, DkwResult};
pub use estimate::{
    bias_trend, estimate_prepared, estimate_tuning_bias, linearized_bias, paired_bias_difference,
    summarize_coverage, sweep_calibration_size, sweep_param_complexity, BiasEstimate,
    CoverageSummary, Estimate,
};
pub use replication::{
    fit_score, run_paired, run_replication, run_replication_detailed, ArmOutcome, FittedScore,
    PairedOutcome, Prepared,
};
pub use report::{
    bound_for_tuner, result_rows, write_bound_comparison_csv, write_bounds_csv, write_results_csv,
    write_summary_csv, BoundComparisonRow, ResultRow, SummaryRow,
};
pub use spec::{DataSpec, ExperimentSpec, Protocol, TunerSpec};
pub use sup::{estimate_sup_process, replication_sup_process, search_grid, SupProcessEstimate};
