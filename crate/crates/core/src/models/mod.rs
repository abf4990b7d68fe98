//! Concrete ODE systems, observation datasets and the synthetic scenarios.

mod data;
mod system;

pub use data::{
    regular_design, scenario_eta, simulate_dataset, simulate_observations, true_outputs, Dataset, Noise, Scenario,
    ScenarioId,
};
pub use system::{hiv_system, AdditiveDecay, Decay, Hiv, OdeSystem, HIV_PARAMS, HIV_TRUTH};
