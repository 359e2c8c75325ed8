//! Monte Carlo laboratory for a random walker driven by a Poisson cloud of
//! lazy, drifted random walks.
//!
//! The crate covers the particle environment and its couplings, the driven
//! walker, finite-range speed estimation and coupling experiments, heat kernels
//! and soft local times, regeneration-based speed estimation, and an
//! experiment harness with reproducible parallel replicas.

pub mod conditions;
pub mod config;
pub mod coupling;
pub mod engine;
pub mod env;
pub mod error;
pub mod finite_range;
pub mod harness;
pub mod kernels;
pub mod par;
pub mod renewal;
pub mod rng;
pub mod slt;
pub mod stats;
pub mod walker;

pub use conditions::{
    stationarity_study, verify_conditions, ConditionsConfig, ConditionsReport, StationarityReport,
};
pub use config::config_from_flags;
pub use config::{load_config, parse_config_str, ExperimentConfig, ExperimentKind, Overrides};
pub use coupling::{many_to_one_experiment, CouplingReport, CouplingRow, ManyToOneParams};
pub use engine::{JumpLaws, LazyCloud, Seed};
pub use env::{
    counts_of, couple_monotone, empirical_density_report, sample_initial, step_counts,
    step_particles, ApcrwParams, DensityReport, EnvState, Particle, ParticleCloud,
    SuperpositionParams, Window,
};
pub use error::{Error, Result};
pub use finite_range::{estimate_speed, run_finite_range_walk, FiniteRangeParams};
pub use harness::{run_experiment, RunManifest};
pub use kernels::{asymptotic_kernel, exact_kernel, KernelTable};
pub use renewal::{
    detect_good_records, influence_field, record_times, regeneration_times, renewal_experiment,
    renewal_speed, simulate_tracked, ConeParams, Increment, RenewalConfig, RenewalParams,
    RenewalReport,
};
pub use rng::{Key, StreamRng, UniformField};
pub use slt::{
    exact_density_state, slt_domination_coupling, slt_domination_study, slt_domination_with_kernel,
    slt_endpoint_law, soft_local_time_sample, DominationReport, DominationRow, EndpointLaw,
    SoftLocalTime,
};
pub use stats::{Frequency, Moments, SpeedEstimate};
pub use walker::{
    arrow, run_coupled_walks, run_walk, run_walks, EmptyEnv, Environment, LatticePoint, Probe,
    TabulatedEnv, Trajectory, WalkParams, WalkerSpec,
};
