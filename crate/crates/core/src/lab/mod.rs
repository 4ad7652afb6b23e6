//! Experiments: gap-rate studies and ergodicity-decay fits driven by
//! configuration files, with serializable reports.

mod config;
mod decay;
mod fit;
mod gap;

pub use config::{
    parse_config, ChainSolver, DecayConfig, DmSolver, ExperimentConfig, LyapunovConfig, ModelSource, OutputConfig,
    Seeds, SimulationConfig, SolverConfig, TestSpec, Tolerances,
};
pub use decay::{ergodicity_decay, run_decay_study, DecayFit, DecayPoint, DecayReport, DecayRow, RateStability};
pub use fit::{fit_rate, RateFit};
pub use gap::{
    certificate_id, run_gap_study, Admissibility, AssumptionSummary, CrossCheck, ErrorBudget, Failure, GapReport,
    GapRow, HypothesisLog, LyapunovSummary, MomentSummary, Provenance, TestReport,
};
