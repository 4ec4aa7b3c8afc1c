//! Experiment plumbing: configuration, datasets, training runs, width sweeps, exponent probes,
//! limit comparisons and metric files.

pub mod cifar;
mod compare;
mod config;
mod probe;
mod records;
mod stats;
mod sweep;
mod synth;
mod train;

pub use cifar::load_cifar2;
pub use compare::{build_kind, kl_experiment, limit_run, KlReport, KlRow};
pub use config::{
    apply_override, log_steps, BatchConfig, BatchMode, Cadence, DatasetSpec, LimitConfig, LimitKind, ModelVariant,
    RunConfig,
};
pub use probe::{exponent_probe, probe_cell, probe_stats, CellProbe, ProbeReport, ProbeStats, GRAD_SAMPLES};
pub use records::{write_sidecar, RowKey, RunRecord, CSV_HEADER, DIVERGED_METRIC};
pub use stats::{estimate_exponent, kl_gaussian, logits_kl, mean_var, ExponentFit, KlEstimate, VARIANCE_FLOOR};
pub use sweep::{persist, width_sweep, CellFailure, SweepOutput};
pub use synth::synth_dataset;
pub use train::{
    batch_seed, init_seed, train_run, train_run_on, BatchSchedule, Experiment, StepBatches, StepMetrics, Trainer,
};
