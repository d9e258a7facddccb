//! Experiment orchestration: configuration, data, runs, comparisons.

pub mod compare;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod io;
pub mod phantom;

pub use compare::{
    compare_methods, comparison_table, robustness_sweep, Comparison, SweepAmplitude, SweepRow,
    TableRow,
};
pub use config::{ExperimentConfig, NoiseConfig, NoiseParams};
pub use dataset::{ingest_dataset, resize_bilinear, synthesize};
pub use experiment::{
    execute, prepare_data, replay_cell, run_experiment, MetricRow, PreparedData, RunOutput,
    RunRecord,
};

/// Caps the global worker pool at `flag`, or else at `N2I_THREADS` when that
/// variable is set. Returns the cap that was applied.
pub fn configure_threads(flag: Option<usize>) -> Option<usize> {
    let n = flag.or_else(|| std::env::var("N2I_THREADS").ok()?.parse().ok())?;
    match rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
    {
        Ok(()) => Some(n),
        Err(e) => {
            log::warn!("N2I_THREADS ignored: {e}");
            None
        }
    }
}
