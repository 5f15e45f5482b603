//! Config-driven experiments: `run`, `evaluate` and `report`.

mod config;
mod report;
mod run;

pub use config::{ExperimentConfig, GeneratorBlock, RunBlock};
pub use report::{
    cmd_report, collect_runs, group_runs, render_table, render_trajectory, ReportRow, REPORT_MD, TRAJECTORY_SVG,
};
pub use run::{
    cmd_evaluate, cmd_run, evaluate_ensemble, mean_std, read_json, run_dir, AggregateSummary, Evaluation,
    MemberSummary, RunSummary, Timing, CONFIG_COPY, MANIFEST, METRICS, SUMMARY, TIMING,
};

/// Process exit status for an error: 2 for configuration problems, 1
/// for everything else.
pub fn exit_code(err: &crate::Error) -> i32 {
    match err {
        crate::Error::Config(_) => 2,
        _ => 1,
    }
}
