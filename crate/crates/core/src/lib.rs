//! Cutting-and-shuffling interval exchange transformations on an integer
//! lattice, with explicit diffusion, mixing metrics, stretched-exponential
//! fits and stopping-time prediction.

pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod export;
pub mod fit;
pub mod gamma;
pub mod lattice;
pub mod metrics;
pub mod permutation;
pub mod stopping;

pub use diffusion::{diffusion_step, diffusivity_from_peclet, match_iterations, peclet_number, Diffusivity};
pub use error::{Error, Result};
pub use experiment::{
    collapse, fit_table, run_ensemble, steepening_report, table_one, CollapseResult, EnsembleResult,
    EnsembleSpec, Reference,
};
pub use fit::{efolding_time, fit_stretched_exponential, stretched_exponential, FitResult};
pub use gamma::gamma;
pub use lattice::{
    initial_field, iterate, shuffle_step, total_length, ColorField, Evolution, Protocol, RationalRatio,
    Recording, SpaceTimeRecord,
};
pub use metrics::{compute_series, cut_count, mixing_norm, percent_unmixed, MetricSeries};
pub use permutation::{enumerate_allowed, is_allowed, violations, Permutation, Rule};
pub use stopping::{solve_stopping_time, LengthAveraging, StoppingTimeSolution};
