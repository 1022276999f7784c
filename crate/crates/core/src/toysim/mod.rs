//! Synthetic coupled "climate world" with a known truth chemistry.
//!
//! Temperature follows a seasonal and QBO-like background with red noise,
//! CO₂ forcing and a radiative feedback from the ozone anomaly; ozone comes
//! from the truth formula, trained coefficients, transferred coefficients or
//! a fixed climatology.

mod config;
mod sim;
mod world;

pub use config::{
    co2_equilibrium_response, default_feedback_gain, make_world_pair, world_a_levels, world_b_levels, world_b_offset,
    ChemistryParams, ClimateParams, OzoneMode, WorldConfig, DEFAULT_FEEDBACK_GAIN,
};
pub use sim::{run_experiment, step_day, Experiment, OzoneSource, RunDiagnostics, SimState};
pub use world::{seasonal_cycle, substream, Stream, World};
