//! Simulation: data-generating processes with known population targets,
//! model selectors, and the Monte Carlo experiments built on them.

pub mod dgp;
pub mod experiment;
pub mod inequalities;
pub mod select;

pub use dgp::{derive_seed, generate, DesignCovariance, DgpKind, DgpSpec, PopulationOracle};
pub use experiment::{
    run_coverage_experiment, run_experiment, run_max_t_comparison, run_volume_rate_experiment, CoverageKind,
    CoverageReport, ExperimentConfig, ExperimentKind, ExperimentReport, MaxTReport, VolumeRateReport,
};
pub use inequalities::{check_inequalities, InequalityReport};
pub use select::{select_adversarial, select_max_correlation, select_practical, PracticalMethod};
